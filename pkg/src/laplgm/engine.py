"""Nested approximation core.

Gaussian approximation of the latent field given hyperparameters, Laplace
approximation of the hyperparameter posterior, deterministic exploration of
that posterior (grid, composite design, or its mode alone), and the mixture
machinery that turns per-node Gaussian approximations into posterior
marginals of hyperparameters, latent variables, predictors and linear
combinations.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.interpolate
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.csgraph

from . import sparse
from .errors import (
    DimensionMismatch,
    InvalidCorrelation,
    ModeSearchFailed,
    NonConvergence,
    NotPositiveDefinite,
)

# proposals the quasi-Newton search treats as "out of bounds" rather than fatal
_REJECTABLE = (NotPositiveDefinite, NonConvergence, InvalidCorrelation)
from .latent import FixedEffect, log_prior_theta
from .marginals import (
    MarginalDensity,
    mixture_marginal,
    transform_marginal,
    zmarginal,
)
from .sparse import SparseSymmetric, factorize, selected_inverse, solve

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class EngineConfig:
    """Tunable constants of the approximation engine."""

    strategy: str = "gaussian"       # latent-marginal strategy (only choice)
    int_strategy: str = "ccd"        # grid | ccd | eb
    grid_step: float = 1.0           # step in standardized z coordinates
    log_drop: float = 2.5            # keep grid nodes within this log drop
    max_grid_nodes: int = 256
    fd_step_grad: float = 1e-4
    fd_step_hess: float = 1e-3
    newton_tol: float = 1e-8
    max_newton: int = 50
    mode_budget: int = 200
    mode_grad_tol: float = 1e-2
    marginal_points: int = 75
    marginal_span: float = 6.0
    threads: int = 1


@dataclass
class GaussianApprox:
    """Gaussian approximation to the latent conditional at one theta."""

    x_star: np.ndarray
    Q_star: SparseSymmetric
    factor: sparse.CholeskyFactor
    iterations: int
    converged: bool
    constraint_W: np.ndarray = None        # Q*^-1 M' for the constraint rows
    constraint_cho: object = None
    constraint_logdet: float = 0.0


@dataclass
class ThetaNode:
    """One integration node in hyperparameter space."""

    theta: np.ndarray
    log_post: float
    weight: float


# ------------------------------------------------------------------
# generic Laplace approximation of an integral

def _fd_gradient(f, x, step):
    g = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def _fd_hessian(f, x, step):
    p = x.size
    H = np.zeros((p, p))
    f0 = f(x)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = step
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / step**2
        for j in range(i):
            ej = np.zeros(p)
            ej[j] = step
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * step**2)
    return H


def laplace_integral(g, x0, hess_step=1e-4):
    """Laplace approximation of the log-integral of exp(g).

    Returns (log integral, mode, Hessian at the mode); exact whenever g is
    quadratic.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    res = scipy.optimize.minimize(lambda x: -g(x), x0, method="BFGS",
                                  options={"gtol": 1e-10, "maxiter": 500})
    x_star = res.x
    H = _fd_hessian(g, x_star, hess_step)
    negH = -(0.5 * (H + H.T))
    try:
        c = np.linalg.cholesky(negH)
    except np.linalg.LinAlgError as exc:
        raise ModeSearchFailed(f"Hessian not negative definite at mode: {exc}") from exc
    d = x_star.size
    logdet_negH = 2.0 * float(np.sum(np.log(np.diag(c))))
    value = 0.5 * d * LOG_2PI - 0.5 * logdet_negH + float(g(x_star))
    return value, x_star, H


# ------------------------------------------------------------------
# quasi-Newton ascent used for the hyperparameter mode

def _maximize(f, x0, grad_step, budget, grad_tol, step_tol=1e-6, max_iter=100,
              max_step=3.0):
    """BFGS ascent with central-difference gradients and backtracking.

    `f` may raise for or return -inf at invalid points; the line search
    shrinks past them.  Steps are capped at `max_step` per coordinate.
    Raises ModeSearchFailed once `budget` evaluations are exhausted.
    """
    count = [0]

    def fx(x):
        if count[0] >= budget:
            raise ModeSearchFailed(f"evaluation budget {budget} exhausted")
        count[0] += 1
        try:
            v = f(x)
        except _REJECTABLE:
            return -np.inf
        return v if np.isfinite(v) else -np.inf

    x = np.asarray(x0, dtype=float).copy()
    p = x.size
    fval = fx(x)
    if not np.isfinite(fval):
        raise ModeSearchFailed("log-posterior not finite at the initial point")
    Hinv = np.eye(p)
    g = _fd_gradient(fx, x, grad_step)
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= grad_tol:
            break
        direction = Hinv @ g
        if direction @ g <= 0:
            Hinv = np.eye(p)
            direction = g.copy()
        biggest = np.max(np.abs(direction))
        if biggest > max_step:
            direction = direction * (max_step / biggest)
        lam, accepted = 1.0, False
        f_new = -np.inf
        x_new = x
        for _ in range(25):
            x_new = x + lam * direction
            f_new = fx(x_new)
            if np.isfinite(f_new) and f_new >= fval + 1e-4 * lam * (g @ direction):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        s = x_new - x
        g_new = _fd_gradient(fx, x_new, grad_step)
        y = g - g_new  # curvature pair for the descent problem on -f
        sy = s @ y
        if sy > 1e-12:
            rho = 1.0 / sy
            I = np.eye(p)
            Hinv = (I - rho * np.outer(s, y)) @ Hinv @ (I - rho * np.outer(y, s)) \
                + rho * np.outer(s, s)
        x, fval, g = x_new, f_new, g_new
        if np.max(np.abs(s)) <= step_tol:
            break
    return x, fval, count[0]


# ------------------------------------------------------------------
# the engine proper

class Engine:
    """Caches the sparsity analysis of one model across theta evaluations."""

    def __init__(self, model, config=None):
        self.model = model
        self.config = config or EngineConfig()
        self.obs_idx = np.flatnonzero(model.observed)
        if self.obs_idx.size == 0:
            raise ValueError("model has no observed rows")
        self.A_obs = model.A[self.obs_idx]
        self.y_obs = model.y[self.obs_idx]
        self.n = model.n_latent
        self.M = model.constraint_matrix
        self.e = model.constraint_rhs
        self.n_constraints = self.M.shape[0]

        self.fixed_cols = np.array(
            [model.col_offsets[c.name][0] for c in model.components
             if isinstance(c, FixedEffect)],
            dtype=np.int64,
        )
        self._rand_mask = np.ones(self.n)
        self._rand_mask[self.fixed_cols] = 0.0

        theta0 = model.theta_initial()
        Q0, _, _, _ = model.prior_quantities(theta0)
        AtA = (self.A_obs.T @ self.A_obs).tocsc()
        template = ((Q0 != 0) + (AtA != 0)).astype(float).tocsc()
        template.sort_indices()
        template.data[:] = 0.0
        self._template = template
        ones = template.copy()
        ones.data[:] = 1.0
        pattern1 = (ones + sp.identity(self.n, format="csc")).tocsc()
        self.perm = self._choose_permutation(pattern1)
        permuted0 = pattern1[self.perm.order, :][:, self.perm.order]
        self._band_hint = sparse._detect_bordered_band(
            sp.tril(permuted0, format="csc"), self.n)
        self._selinv_plan = None
        self._pair_plan = None
        self._x_warm = np.zeros(self.n)
        self._lp_cache = {}

    # -- ordering ---------------------------------------------------

    def _choose_permutation(self, full):
        """Pick the cheapest of a few deterministic ordering candidates.

        Dense fixed-effect columns go last (a border), the field keeps its
        natural or reverse-Cuthill-McKee order, and minimum degree competes
        when the problem is small enough for the general recursion.  Costs
        are projected as n * (bandwidth + border)^2 or the sum of squared
        column heights of the symbolic factor.  `full` carries the unit
        pattern of the conditional precision.
        """
        n = self.n
        fixed = np.zeros(n, dtype=bool)
        fixed[self.fixed_cols] = True
        free_cols = np.flatnonzero(~fixed)
        nb = int(self.fixed_cols.size)

        def bordered_cost(order):
            inv = np.argsort(order)
            coo = sp.tril(full).tocoo()
            r = inv[coo.row]
            c = inv[coo.col]
            lo = np.minimum(r, c)
            hi = np.maximum(r, c)
            core = hi < (n - nb)
            w = int(np.max(hi[core] - lo[core])) if np.any(core) else 0
            return float(n) * (w + nb + 1) ** 2

        candidates = []
        natural = np.concatenate([free_cols, self.fixed_cols]).astype(np.int64)
        candidates.append((bordered_cost(natural), 0, natural))
        if free_cols.size:
            sub = full[free_cols, :][:, free_cols].tocsr()
            rcm = scipy.sparse.csgraph.reverse_cuthill_mckee(sub, symmetric_mode=True)
            rcm_order = np.concatenate([free_cols[rcm], self.fixed_cols]).astype(np.int64)
            candidates.append((bordered_cost(rcm_order), 1, rcm_order))
        if n <= 1500:
            pattern = SparseSymmetric(n, sp.tril(full, format="csc"), validate=False)
            md = sparse.reorder(pattern)
            od = sp.tril(full, format="csc")[md.order, :][:, md.order].tocsc()
            ip, _ = sparse._closed_lower_pattern(n, od.indptr, od.indices)
            heights = np.diff(ip).astype(float)
            # the general recursion pays an extra constant per entry
            candidates.append((3.0 * float(np.sum(heights**2)), 2, md.order))
        _, _, best = min(candidates, key=lambda t: (t[0], t[1]))
        return sparse.Permutation(best)

    # -- per-theta quantities ----------------------------------------

    def _prior(self, theta):
        Q, rank, logdet, corr = self.model.prior_quantities(theta)
        return Q.tocsc(), rank, logdet, corr

    def _lik_param(self, theta):
        values = self.model.values_from_theta(theta)
        return self.model.likelihood.param(values)

    def _penalized_objective(self, x, Qp, param):
        eta_obs = self.A_obs @ x
        ll = float(np.sum(self.model.likelihood.log_lik(self.y_obs, eta_obs, param)))
        return ll - 0.5 * float(x @ (Qp @ x))

    def gaussian_approximation(self, theta, x_init=None, Qp=None):
        """Newton iteration for the mode and curvature of the latent conditional."""
        cfg = self.config
        model = self.model
        theta = np.asarray(theta, dtype=float)
        if Qp is None:
            Qp = self._prior(theta)[0]
        param = self._lik_param(theta)
        x = np.array(self._x_warm if x_init is None else x_init, dtype=float)
        if x.size != self.n:
            raise DimensionMismatch("x_init has wrong length")
        constrained = self.n_constraints > 0

        approx = None
        iterations = 0
        converged = False
        stop_after_rebuild = False
        fx = None
        while True:
            eta_obs = self.A_obs @ x
            d1, d2 = model.likelihood.derivs(self.y_obs, eta_obs, param)
            c = -d2
            Q_star_csc = (Qp + (self.A_obs.T @ sp.diags(c) @ self.A_obs)).tocsc() + self._template
            Q_star_csc.sort_indices()
            Q_star = SparseSymmetric(self.n, sp.tril(Q_star_csc).tocsc(), validate=False)
            Q_star._full = Q_star_csc
            factor = factorize(Q_star, self.perm, band_hint=self._band_hint)
            W = cho = None
            logdet_S = 0.0
            if constrained:
                W = solve(factor, self.M.T)
                S = self.M @ W
                S = 0.5 * (S + S.T)
                cho = scipy.linalg.cho_factor(S)
                logdet_S = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
            approx = GaussianApprox(x, Q_star, factor, iterations, converged,
                                    constraint_W=W, constraint_cho=cho,
                                    constraint_logdet=logdet_S)
            if stop_after_rebuild:
                break
            grad = self.A_obs.T @ d1 - Qp @ x
            if not constrained and iterations >= 1 and \
                    np.max(np.abs(grad)) <= cfg.newton_tol * (1.0 + np.max(np.abs(x))):
                approx.converged = converged = True
                break
            if iterations >= cfg.max_newton:
                raise NonConvergence(iterations)
            b = d1 + c * eta_obs
            x_prop = solve(factor, self.A_obs.T @ b)
            if constrained:
                x_prop = x_prop - W @ scipy.linalg.cho_solve(cho, self.M @ x_prop - self.e)
            if fx is None:
                fx = self._penalized_objective(x, Qp, param)
            lam = 1.0
            x_new = x_prop
            f_new = self._penalized_objective(x_new, Qp, param)
            while (not np.isfinite(f_new) or f_new < fx - 1e-9 * (1.0 + abs(fx))) \
                    and lam > 1.0 / 64:
                lam *= 0.5
                x_new = x + lam * (x_prop - x)
                f_new = self._penalized_objective(x_new, Qp, param)
            delta = np.max(np.abs(x_new - x)) / (1.0 + np.max(np.abs(x_new)))
            x, fx = x_new, f_new
            iterations += 1
            if delta <= cfg.newton_tol:
                converged = True
                stop_after_rebuild = True
        approx.iterations = iterations
        self._x_warm = x.copy()
        return approx

    def log_posterior(self, theta, return_approx=False, x_init=None):
        """Unnormalized log posterior density of the hyperparameters."""
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if not return_approx and key in self._lp_cache:
            return self._lp_cache[key]
        Qp, rank, logdet_p, corr = self._prior(theta)
        approx = self.gaussian_approximation(theta, x_init=x_init, Qp=Qp)
        x = approx.x_star
        param = self._lik_param(theta)
        ll = float(np.sum(self.model.likelihood.log_lik(self.y_obs, self.A_obs @ x, param)))
        lp = log_prior_theta(self.model, theta)
        lp += -0.5 * rank * LOG_2PI + 0.5 * logdet_p + corr - 0.5 * float(x @ (Qp @ x))
        lp += ll
        k = self.n_constraints
        lp += 0.5 * (self.n - k) * LOG_2PI - 0.5 * approx.factor.logdet \
            - 0.5 * approx.constraint_logdet
        lp = float(lp)
        self._lp_cache[key] = lp
        if return_approx:
            return lp, approx
        return lp

    # -- mode and exploration ----------------------------------------

    def find_mode(self, theta_init=None):
        model = self.model
        p = len(model.free_hyperparams())
        if p == 0:
            return np.zeros(0), np.zeros((0, 0))
        cfg = self.config
        theta0 = model.theta_initial() if theta_init is None else np.asarray(theta_init, float)
        theta_star, _, _ = _maximize(
            self.log_posterior, theta0, cfg.fd_step_grad, cfg.mode_budget, cfg.mode_grad_tol)
        H = _fd_hessian(self.log_posterior, theta_star, cfg.fd_step_hess)
        H = 0.5 * (H + H.T)
        w, V = np.linalg.eigh(H)
        floor = -1e-6 * max(1.0, float(np.max(np.abs(w))))
        if np.any(w > floor):
            w = np.minimum(w, floor)
            H = (V * w) @ V.T
        return theta_star, H

    def _lp_or_neginf(self, theta):
        try:
            return self.log_posterior(theta)
        except _REJECTABLE:
            return -np.inf

    def explore(self, theta_star, H, strategy=None):
        cfg = self.config
        strategy = strategy or cfg.int_strategy
        p = theta_star.size
        if p == 0 or strategy == "eb":
            lp = self.log_posterior(theta_star)
            return [ThetaNode(theta_star.copy(), lp, 1.0)]

        Sigma = np.linalg.inv(-H)
        Sigma = 0.5 * (Sigma + Sigma.T)
        w, V = np.linalg.eigh(Sigma)
        scale = V @ np.diag(np.sqrt(np.clip(w, 1e-12, None)))

        def theta_of(z):
            z = np.asarray(z, dtype=float)
            if not z.any():
                return theta_star.copy()
            return theta_star + scale @ (cfg.grid_step * z)

        if strategy == "ccd":
            zs = [np.zeros(p)]
            corners = list(product((-1.0, 1.0), repeat=p))
            if p >= 5:
                corners = [c for c in corners if np.prod(c) > 0]
            zs += [np.array(c) for c in corners]
            r = np.sqrt(p)
            for j in range(p):
                for s in (-1.0, 1.0):
                    z = np.zeros(p)
                    z[j] = s * r
                    zs.append(z)
            nodes = [ThetaNode(theta_of(z), self._lp_or_neginf(theta_of(z)), 1.0)
                     for z in zs]
            nodes = [nd for nd in nodes if np.isfinite(nd.log_post)]
        elif strategy == "grid":
            lp0 = self.log_posterior(theta_star)
            extents = []
            for j in range(p):
                ext = []
                for s in (-1, 1):
                    m = 0
                    while m < 20:
                        z = np.zeros(p)
                        z[j] = s * (m + 1)
                        if lp0 - self._lp_or_neginf(theta_of(z)) > cfg.log_drop:
                            break
                        m += 1
                    ext.append(m)
                extents.append(ext)
            axes = [range(-lo, hi + 1) for lo, hi in extents]
            candidates = sorted(product(*axes),
                                key=lambda z: (sum(abs(c) for c in z), z))
            nodes = []
            for z in candidates:
                if len(nodes) >= cfg.max_grid_nodes:
                    break
                th = theta_of(np.array(z, dtype=float))
                lp = self._lp_or_neginf(th)
                if lp0 - lp <= cfg.log_drop:
                    nodes.append(ThetaNode(th, lp, 1.0))
        else:
            raise ValueError(f"unknown int_strategy {strategy!r}")
        wgt = 1.0 / len(nodes)
        for nd in nodes:
            nd.weight = wgt
        return nodes

    # -- per-node posterior quantities --------------------------------

    def node_quantities(self, theta, x_init=None):
        """Latent mean/sd and per-row predictor mean/sd at one theta node."""
        lp, approx = self.log_posterior(theta, return_approx=True, x_init=x_init)
        factor = approx.factor
        if isinstance(factor._backend, sparse._BandedBackend):
            S = selected_inverse(factor)
        else:
            plan = self._selinv_plan
            if plan is None or not plan.matches(factor):
                plan = self._selinv_plan = sparse.SelectedInversePlan(factor)
            S = selected_inverse(factor, plan)
        diag = S.diagonal().copy()

        A = self.model.A
        nF = self.fixed_cols.size
        if nF:
            E = np.zeros((self.n, nF))
            E[self.fixed_cols, np.arange(nF)] = 1.0
            W_fix = solve(factor, E)
        else:
            W_fix = np.zeros((self.n, 0))
        var_rows = self._predictor_variances(S, W_fix, factor)
        mean_rows = A @ approx.x_star

        if self.n_constraints:
            W, cho = approx.constraint_W, approx.constraint_cho
            VT = scipy.linalg.cho_solve(cho, W.T)
            diag = diag - np.einsum("nk,kn->n", W, VT)
            G = A @ W
            var_rows = var_rows - np.einsum("rk,kr->r", G, scipy.linalg.cho_solve(cho, G.T))
        diag = np.clip(diag, 1e-300, None)
        var_rows = np.clip(var_rows, 1e-300, None)
        return {
            "log_post": lp,
            "x_star": approx.x_star,
            "latent_sd": np.sqrt(diag),
            "pred_mean": mean_rows,
            "pred_sd": np.sqrt(var_rows),
            "approx": approx,
        }

    def _build_pair_plan(self, skeys):
        """Positions of A-row covariance pairs inside the selected inverse."""
        A = self.model.A
        Ar = (A @ sp.diags(self._rand_mask)).tocsr()
        row_ids, pos_list, coef_list, fallback = [], [], [], []
        indptr, indices, data = Ar.indptr, Ar.indices, Ar.data
        for r in range(A.shape[0]):
            lo, hi = indptr[r], indptr[r + 1]
            cols = indices[lo:hi].astype(np.int64)
            vals = data[lo:hi]
            live = vals != 0.0
            cols, vals = cols[live], vals[live]
            if cols.size == 0:
                continue
            pi, qi = np.meshgrid(cols, cols, indexing="ij")
            keep = pi >= qi
            p_arr, q_arr = pi[keep], qi[keep]
            vi, vj = np.meshgrid(vals, vals, indexing="ij")
            coef = (vi * vj)[keep] * np.where(p_arr == q_arr, 1.0, 2.0)
            qk = q_arr * self.n + p_arr  # (col, row) key into the lower triangle
            pos = np.searchsorted(skeys, qk)
            pos = np.minimum(pos, skeys.size - 1)
            if np.all(skeys[pos] == qk):
                row_ids.append(np.full(p_arr.size, r, dtype=np.int64))
                pos_list.append(pos)
                coef_list.append(coef)
            else:
                fallback.append(r)
        return {
            "rows": np.concatenate(row_ids) if row_ids else np.zeros(0, dtype=np.int64),
            "pos": np.concatenate(pos_list) if pos_list else np.zeros(0, dtype=np.int64),
            "coef": np.concatenate(coef_list) if coef_list else np.zeros(0),
            "fallback": np.array(fallback, dtype=np.int64),
            "skeys": skeys,
        }

    def _predictor_variances(self, S, W_fix, factor):
        A = self.model.A
        skeys = np.repeat(np.arange(self.n, dtype=np.int64) * self.n,
                          np.diff(S.lower.indptr)) + S.lower.indices
        plan = self._pair_plan
        if plan is None or not np.array_equal(plan["skeys"], skeys):
            plan = self._pair_plan = self._build_pair_plan(skeys)
        var = np.zeros(A.shape[0])
        if plan["rows"].size:
            np.add.at(var, plan["rows"], plan["coef"] * S.lower.data[plan["pos"]])
        if plan["fallback"].size:
            rows = plan["fallback"]
            Ar = (A[rows] @ sp.diags(self._rand_mask)).toarray()
            Z = solve(factor, Ar.T)
            var[rows] = np.einsum("rn,nr->r", Ar, Z)
        if self.fixed_cols.size:
            Af = A[:, self.fixed_cols].toarray()
            cross = A @ W_fix                      # rows x nF: a' Sigma E
            SFF = W_fix[self.fixed_cols, :]
            var += 2.0 * np.einsum("rf,rf->r", cross, Af)
            var -= np.einsum("rf,fg,rg->r", Af, SFF, Af)
        return var

    def lincomb_node_moments(self, approx, B):
        """Per-node mean and variance of B x under one Gaussian approximation."""
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[1] != self.n:
            raise DimensionMismatch(f"B has {B.shape[1]} columns, expected {self.n}")
        mean = B @ approx.x_star
        Z = solve(approx.factor, B.T)
        var = np.einsum("rn,nr->r", B, Z)
        if self.n_constraints:
            G = B @ approx.constraint_W
            var = var - np.einsum("rk,kr->r", G,
                                  scipy.linalg.cho_solve(approx.constraint_cho, G.T))
        return mean, np.clip(var, 1e-300, None)

    def marginal_likelihood(self, nodes, H):
        center = max(nodes, key=lambda nd: nd.log_post)
        p = H.shape[0]
        if p == 0:
            return float(center.log_post)
        sign, logdet_negH = np.linalg.slogdet(-H)
        if sign <= 0:
            raise ModeSearchFailed("Hessian not negative definite")
        return float(center.log_post + 0.5 * p * LOG_2PI - 0.5 * logdet_negH)


def node_weights(nodes):
    """Mixture weights combining design weights with posterior mass."""
    lp = np.array([nd.log_post for nd in nodes])
    w = np.array([nd.weight for nd in nodes])
    raw = w * np.exp(lp - lp.max())
    return raw / raw.sum()


# ------------------------------------------------------------------
# hyperparameter marginals

def hyper_marginals(nodes, j, theta_star, H, points=75, span=6.0):
    """Posterior marginal of internal hyperparameter j from integration nodes.

    One free hyperparameter: normalized interpolation of exp(log_post)
    through the node values with Gaussian tails.  Higher dimensions: the
    nodes are projected onto coordinate j and smoothed with a
    moment-matched Gaussian kernel.
    """
    if len(nodes) == 0:
        raise ValueError("need at least one node")
    p = nodes[0].theta.size
    Sigma = np.linalg.inv(-H) if p else np.zeros((0, 0))
    sd_lap = float(np.sqrt(Sigma[j, j]))
    center = float(theta_star[j])

    if p == 1 and len(nodes) >= 4:
        pts = sorted({(float(nd.theta[j]), float(nd.log_post)) for nd in nodes})
        xs = np.array([a for a, _ in pts])
        ys = np.array([b for _, b in pts])
        ys = ys - ys.max()
        spline = scipy.interpolate.CubicSpline(xs, ys)
        grid = center + sd_lap * np.linspace(-span, span, points)
        logf = np.empty_like(grid)
        inside = (grid >= xs[0]) & (grid <= xs[-1])
        logf[inside] = spline(grid[inside])
        # Gaussian tails matched to the end values
        for mask, x_end in ((grid < xs[0], xs[0]), (grid > xs[-1], xs[-1])):
            base = float(spline(x_end))
            logf[mask] = base - ((grid[mask] - center) ** 2
                                 - (x_end - center) ** 2) / (2.0 * sd_lap**2)
        return MarginalDensity(grid, np.exp(logf - logf.max()))

    w = node_weights(nodes)
    means = np.array([nd.theta[j] for nd in nodes])
    mhat = float(w @ means)
    vhat = float(w @ (means - mhat) ** 2)
    var_kernel = np.clip(Sigma[j, j] - vhat, 0.05 * Sigma[j, j], Sigma[j, j])
    s = np.sqrt(var_kernel)
    grid = center + sd_lap * np.linspace(-span, span, points)
    z = (grid[:, None] - means[None, :]) / s
    dens = (np.exp(-0.5 * z**2) / (s * np.sqrt(2 * np.pi))) @ w
    return MarginalDensity(grid, dens)


def hyper_lincomb_marginal(nodes, v, offset, theta_star, H, points=75, span=6.0):
    """Marginal of a linear functional v'theta + offset of the hyperparameters.

    The node mixture is projected onto the functional and smoothed with a
    moment-matched Gaussian kernel, mirroring the coordinate-marginal
    construction.
    """
    v = np.asarray(v, dtype=float)
    Sigma = np.linalg.inv(-H)
    var_lap = float(v @ Sigma @ v)
    center = float(v @ theta_star) + offset
    w = node_weights(nodes)
    means = np.array([float(v @ nd.theta) + offset for nd in nodes])
    mhat = float(w @ means)
    vhat = float(w @ (means - mhat) ** 2)
    var_kernel = np.clip(var_lap - vhat, 0.05 * var_lap, var_lap)
    s = np.sqrt(var_kernel)
    sd_lap = np.sqrt(var_lap)
    grid = center + sd_lap * np.linspace(-span, span, points)
    z = (grid[:, None] - means[None, :]) / s
    dens = (np.exp(-0.5 * z**2) / (s * np.sqrt(2 * np.pi))) @ w
    return MarginalDensity(grid, dens)


# ------------------------------------------------------------------
# module-level operations (convenience wrappers over Engine)

def gaussian_approximation(model, theta, x_init=None, config=None):
    return Engine(model, config).gaussian_approximation(theta, x_init=x_init)


def log_posterior_theta(model, theta, config=None):
    return Engine(model, config).log_posterior(theta)


def find_mode_theta(model, theta_init=None, config=None):
    return Engine(model, config).find_mode(theta_init)


def explore_theta(model, theta_star, H, strategy=None, config=None):
    return Engine(model, config).explore(np.asarray(theta_star, float), H, strategy)


def latent_marginals(model, nodes, strategy="gaussian", config=None):
    """Mixture-of-Gaussians marginal density for every latent index."""
    if strategy != "gaussian":
        raise ValueError("only the 'gaussian' latent-marginal strategy is available")
    eng = Engine(model, config)
    quants = [eng.node_quantities(nd.theta) for nd in nodes]
    w = node_weights(nodes)
    means = np.stack([q["x_star"] for q in quants])
    sds = np.stack([q["latent_sd"] for q in quants])
    cfg = eng.config
    return [mixture_marginal(means[:, i], sds[:, i], w,
                             cfg.marginal_points, cfg.marginal_span)
            for i in range(model.n_latent)]


def linear_combination_marginals(model, nodes, B, config=None):
    """Marginal densities of linear combinations B x of the latent field."""
    eng = Engine(model, config)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    means, variances = [], []
    for nd in nodes:
        _, approx = eng.log_posterior(nd.theta, return_approx=True)
        m, v = eng.lincomb_node_moments(approx, B)
        means.append(m)
        variances.append(v)
    w = node_weights(nodes)
    means = np.stack(means)
    sds = np.sqrt(np.stack(variances))
    cfg = eng.config
    return [mixture_marginal(means[:, r], sds[:, r], w,
                             cfg.marginal_points, cfg.marginal_span)
            for r in range(B.shape[0])]


def marginal_likelihood(nodes, H):
    """Laplace estimate of the log model evidence from mode-centered nodes."""
    lp = max(nd.log_post for nd in nodes)
    p = H.shape[0]
    if p == 0:
        return float(lp)
    sign, logdet_negH = np.linalg.slogdet(-H)
    if sign <= 0:
        raise ModeSearchFailed("Hessian not negative definite")
    return float(lp + 0.5 * p * LOG_2PI - 0.5 * logdet_negH)


# ------------------------------------------------------------------
# full fit

class FitResult:
    """Complete output of a fit: mode, nodes, marginals, summaries."""

    def __init__(self, model, engine, theta_mode, H, nodes, node_data, mlik, timings):
        self.model = model
        self.engine = engine
        self.theta_mode = theta_mode
        self.theta_hessian = H
        self.nodes = nodes
        self.mlik = mlik
        self.timings = timings
        self.diagnostics = None

        self.weights = node_weights(nodes)
        self.latent_mean = np.stack([d["x_star"] for d in node_data])
        self.latent_sd = np.stack([d["latent_sd"] for d in node_data])
        self.pred_mean = np.stack([d["pred_mean"] for d in node_data])
        self.pred_sd = np.stack([d["pred_sd"] for d in node_data])
        self.theta_names = model.theta_names()

        w = self.weights
        self.latent_mean_post = w @ self.latent_mean
        self.latent_sd_post = np.sqrt(np.clip(
            w @ (self.latent_sd**2 + self.latent_mean**2) - self.latent_mean_post**2,
            0.0, None))
        self.pred_mean_post = w @ self.pred_mean
        self.pred_sd_post = np.sqrt(np.clip(
            w @ (self.pred_sd**2 + self.pred_mean**2) - self.pred_mean_post**2,
            0.0, None))

    # -- marginal accessors -------------------------------------------

    def _cfg(self):
        return self.engine.config

    def latent_marginal(self, index):
        cfg = self._cfg()
        return mixture_marginal(self.latent_mean[:, index], self.latent_sd[:, index],
                                self.weights, cfg.marginal_points, cfg.marginal_span)

    def component_marginal(self, name, local_index):
        sl = self.model.component_slice(name)
        return self.latent_marginal(sl.start + local_index)

    def predictor_marginal(self, row):
        cfg = self._cfg()
        return mixture_marginal(self.pred_mean[:, row], self.pred_sd[:, row],
                                self.weights, cfg.marginal_points, cfg.marginal_span)

    def response_marginal(self, row):
        """Predictor marginal mapped through the inverse link."""
        m = self.predictor_marginal(row)
        link = self.model.likelihood.link
        if link == "identity":
            return m
        return transform_marginal(m, np.exp, np.exp)

    def response_moments(self):
        """Posterior mean and sd of the response mean, closed form per node."""
        if self.model.likelihood.link == "identity":
            return self.pred_mean_post.copy(), self.pred_sd_post.copy()
        w = self.weights
        m, s2 = self.pred_mean, self.pred_sd**2
        e1 = w @ np.exp(m + 0.5 * s2)
        e2 = w @ np.exp(2.0 * m + 2.0 * s2)
        return e1, np.sqrt(np.clip(e2 - e1**2, 0.0, None))

    def hyper_marginal(self, name, scale="internal"):
        free = self.model.free_hyperparams()
        names = [h.name for h in free]
        if name not in names:
            raise KeyError(name)
        j = names.index(name)
        cfg = self._cfg()
        m = hyper_marginals(self.nodes, j, self.theta_mode, self.theta_hessian,
                            cfg.marginal_points, cfg.marginal_span)
        if scale == "internal":
            return m
        h = free[j]
        if h.transform == "log":
            return transform_marginal(m, np.exp, np.exp)
        if h.transform == "correlation":
            from scipy.special import expit
            return transform_marginal(m, lambda t: 2 * expit(t) - 1,
                                      lambda t: 2 * expit(t) * (1 - expit(t)))
        return m

    # -- summaries ------------------------------------------------------

    def fixed_summary(self):
        rows = {}
        for comp in self.model.components:
            if isinstance(comp, FixedEffect):
                idx = self.model.col_offsets[comp.name][0]
                rows[comp.name] = zmarginal(self.latent_marginal(idx))
        return rows

    def hyper_summary(self, scale="natural"):
        return {h.name: zmarginal(self.hyper_marginal(h.name, scale))
                for h in self.model.free_hyperparams()}

    def tag_rows(self, tag):
        return self.model.tag_range(tag)


def fit(model, config=None):
    """Full inference pass: mode search, exploration, per-node marginals."""
    t0 = time.perf_counter()
    engine = Engine(model, config)
    cfg = engine.config
    t1 = time.perf_counter()

    theta_star, H = engine.find_mode()
    _, mode_approx = engine.log_posterior(theta_star, return_approx=True)
    mode_x = mode_approx.x_star.copy()
    nodes = engine.explore(theta_star, H)

    def one(node):
        return engine.node_quantities(node.theta, x_init=mode_x)

    if cfg.threads > 1 and len(nodes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            node_data = list(ex.map(one, nodes))
    else:
        node_data = [one(nd) for nd in nodes]
    t2 = time.perf_counter()

    mlik = engine.marginal_likelihood(nodes, H)
    result = FitResult(model, engine, theta_star, H, nodes, node_data, mlik,
                       timings={})
    t3 = time.perf_counter()
    result.timings = {
        "preprocessing": t1 - t0,
        "solving": t2 - t1,
        "postprocessing": t3 - t2,
        "total": t3 - t0,
    }
    return result
