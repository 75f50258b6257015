"""Cross-checks of the two factorization backends and recursion paths."""
import numpy as np
import pytest

import laplgm as lg
import laplgm.engine as eng
import laplgm.latent as lm
import laplgm.marginals as mg
import laplgm.mesh as mm
import laplgm.sparse as sps
from laplgm.engine import EngineConfig
from laplgm.latent import GaussianPrior, HyperParam
from laplgm.likelihoods import GaussianLik, PoissonLik


@pytest.fixture
def force_splu(monkeypatch):
    """Shrink the band caps so factorize falls back to SuperLU everywhere."""
    monkeypatch.setattr(sps, "_BAND_ENTRY_CAP", 0)
    monkeypatch.setattr(sps, "_BAND_FLOP_CAP", 0)


def test_backends_agree_on_mesh_precision():
    mesh = mm.structured_mesh(0, 1, 0, 1, 16, 16)
    fem = mm.assemble(mesh)
    kappa, tau = lm.matern_kappa_tau(0.3, 1.0)
    Q = lm.spde_precision(fem, 2, kappa, tau)
    perm = lg.reorder(Q)
    f_band = lg.factorize(Q, perm)
    assert isinstance(f_band._backend, sps._BandedBackend)
    f_splu = sps.CholeskyFactor(Q.n, perm, sps._SpluBackend(
        Q.full()[perm.order, :][:, perm.order].tocsc(), Q.n, sps.PIVOT_TOL))
    assert f_band.logdet == pytest.approx(f_splu.logdet, abs=1e-9)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(Q.n)
    assert np.abs(lg.solve(f_band, b) - lg.solve(f_splu, b)).max() <= 1e-9
    d_band = lg.selected_inverse(f_band).diagonal()
    d_splu = lg.selected_inverse(f_splu).diagonal()
    assert np.abs(d_band - d_splu).max() <= 1e-10


def test_generic_takahashi_on_mesh_scale(force_splu):
    # scattered minimum-degree pattern at a few hundred dimensions
    mesh = mm.structured_mesh(0, 1, 0, 1, 15, 15)
    fem = mm.assemble(mesh)
    Q = lm.spde_precision(fem, 2, 8.0, 0.05)
    f = lg.factorize(Q, lg.reorder(Q))
    assert isinstance(f._backend, sps._SpluBackend)
    S = lg.selected_inverse(f)
    dense = np.linalg.inv(Q.to_dense())
    assert np.abs(S.diagonal() - np.diag(dense)).max() <= 1e-8
    coo = S.lower.tocoo()
    err = max(abs(v - dense[i, j]) for i, j, v in zip(coo.row, coo.col, coo.data))
    assert err <= 1e-8


def test_engine_fit_on_splu_backend(force_splu):
    # the full engine flow (plan caching, pair plan, constraints) on SuperLU
    rng = np.random.default_rng(5)
    m = 10
    tau_obs = 2.5
    lik = GaussianLik(HyperParam("o", np.log(tau_obs), "log", fixed=True))
    hyp = lm.log_precision_hyper("rw.prec", 1.0, prior=GaussianPrior(0.0, 0.2))
    idx = rng.integers(0, m, 35)
    y = np.cos(np.linspace(0, 2, m))[idx] + rng.normal(0, 0.6, 35)
    part = lm.StackPart(y, {"mu": np.ones(35), "f": lm.index_block(idx, m)}, "obs")
    model = lm.build_stack(
        [part], [lm.FixedEffect("mu"), lm.Rw1Component("f", m, hyp)], lik)
    fit = eng.fit(model, EngineConfig(int_strategy="grid"))
    engine = fit.engine
    _, approx = engine.log_posterior(fit.theta_mode, return_approx=True)
    assert isinstance(approx.factor._backend, sps._SpluBackend)
    # moments still match the dense subspace oracle at the mode
    import scipy.linalg
    A = model.A.toarray()
    tau = np.exp(fit.theta_mode[0])
    R = np.zeros((m + 1, m + 1))
    R[0, 0] = 1e-4
    R[1:, 1:] = lm.rw1_structure(m, tau).to_dense()
    ones = np.zeros(m + 1)
    ones[1:] = 1.0
    Un = scipy.linalg.null_space(ones[None, :])
    Qz = Un.T @ R @ Un + tau_obs * (A @ Un).T @ (A @ Un)
    mean_z = np.linalg.solve(Qz, tau_obs * (A @ Un).T @ y)
    cov_x = Un @ np.linalg.inv(Qz) @ Un.T
    q = engine.node_quantities(fit.theta_mode)
    assert np.abs(q["x_star"] - Un @ mean_z).max() <= 1e-8
    assert np.abs(q["latent_sd"] - np.sqrt(np.diag(cov_x))).max() <= 1e-8


def test_band_hint_matches_detection():
    mesh = mm.structured_mesh(0, 1, 0, 1, 8, 8)
    fem = mm.assemble(mesh)
    T = 3
    spde = lm.spde_matern_component("s", fem, mesh, alpha=2, initial_range=0.4,
                                    grouping=lm.Ar1Grouping(
                                        T, lm.correlation_hyper("a")))
    rng = np.random.default_rng(1)
    sites = rng.random((9, 2))
    proj = mm.projector(mesh, sites)
    t_idx = np.repeat(np.arange(T), 9)
    block = lm.group_block(proj[np.tile(np.arange(9), T)], t_idx, T)
    y = rng.poisson(1.0, 27).astype(float)
    part = lm.StackPart(y, {"mu": np.ones(27), "s": block}, "obs")
    model = lm.build_stack([part], [lm.FixedEffect("mu"), spde], PoissonLik())
    engine = eng.Engine(model)
    # fixed effects moved last: border of exactly one column
    assert engine._band_hint[1] == 1
    theta0 = model.theta_initial()
    _, approx = engine.log_posterior(theta0, return_approx=True)
    backend = approx.factor._backend
    assert isinstance(backend, sps._BandedBackend)
    assert (backend.w, backend.nb) == engine._band_hint
    # the hinted layout reproduces the matrix
    Qd = approx.Q_star.to_dense()
    order = engine.perm.order
    P = np.eye(model.n_latent)[order]
    L = approx.factor.L.toarray()
    assert np.abs(P @ Qd @ P.T - L @ L.T).max() <= 1e-10 * np.abs(Qd).max()


def test_grouped_field_predictor_variances_exact():
    # grouped SPDE + fixed effects + prediction rows vs the dense conditional
    rng = np.random.default_rng(9)
    mesh = mm.structured_mesh(0, 1, 0, 1, 3, 3)
    fem = mm.assemble(mesh)
    T = 3
    ns = mesh.n_vertices
    spde = lm.spde_matern_component("s", fem, mesh, alpha=2, initial_range=0.5,
                                    grouping=lm.Ar1Grouping(
                                        T, lm.correlation_hyper("a", fixed=True)))
    spde.log_tau.fixed = True
    spde.log_kappa.fixed = True
    tau_obs = 2.0
    lik = GaussianLik(HyperParam("o", np.log(tau_obs), "log", fixed=True))
    sites = rng.random((7, 2))
    proj = mm.projector(mesh, sites)
    t_idx = np.repeat(np.arange(T), 7)
    obs_block = lm.group_block(proj[np.tile(np.arange(7), T)], t_idx, T)
    y = rng.normal(0.0, 1.0, 7 * T)
    cov = rng.random(7 * T)
    obs = lm.StackPart(y, {"mu": np.ones(7 * T), "z": cov, "s": obs_block}, "obs")
    grid_pts = rng.random((11, 2))
    pred_block = lm.group_block(mm.projector(mesh, grid_pts), np.full(11, 1), T)
    pred = lm.StackPart(np.full(11, np.nan),
                        {"mu": np.ones(11), "z": np.full(11, 0.3), "s": pred_block},
                        "pred")
    model = lm.build_stack([obs, pred],
                           [lm.FixedEffect("mu"), lm.FixedEffect("z"), spde], lik)
    engine = eng.Engine(model)
    q = engine.node_quantities(np.zeros(0))

    A = model.A.toarray()
    A_obs = A[model.observed]
    Qp = model.prior_quantities(np.zeros(0))[0].toarray()
    Qpost = Qp + tau_obs * A_obs.T @ A_obs
    cov_post = np.linalg.inv(Qpost)
    mean = cov_post @ (tau_obs * A_obs.T @ y)
    assert np.abs(q["x_star"] - mean).max() <= 1e-8
    assert np.abs(q["latent_sd"] - np.sqrt(np.diag(cov_post))).max() <= 1e-8
    want_sd = np.sqrt(np.einsum("rn,nm,rm->r", A, cov_post, A))
    assert np.abs(q["pred_sd"] - want_sd).max() <= 1e-8


def test_spde_summary_transform_consistency():
    import laplgm.assessment as ass
    rng = np.random.default_rng(3)
    mesh = mm.structured_mesh(-0.25, 1.25, -0.25, 1.25, 8, 8)
    fem = mm.assemble(mesh)
    spde = lm.spde_matern_component("s", fem, mesh, alpha=2, initial_range=0.4)
    sites = rng.random((40, 2))
    proj = mm.projector(mesh, sites)
    y = rng.poisson(1.5, 40).astype(float)
    part = lm.StackPart(y, {"mu": np.ones(40), "s": proj}, "obs")
    model = lm.build_stack([part], [lm.FixedEffect("mu"), spde], PoissonLik())
    fit = eng.fit(model, EngineConfig(int_strategy="ccd"))
    summ = ass.spde_field_summary(fit, model, "s")
    # the range marginal must agree with transforming the log-kappa marginal
    m_kappa = fit.hyper_marginal("s.log_kappa")
    direct = mg.transform_marginal(
        m_kappa, lambda t: np.sqrt(8.0) * np.exp(-t),
        lambda t: -np.sqrt(8.0) * np.exp(-t))
    assert mg.zmarginal(summ["range"]).mean == pytest.approx(
        mg.zmarginal(direct).mean, rel=0.05)
    assert summ["variance"].integral() == pytest.approx(1.0, abs=1e-6)
