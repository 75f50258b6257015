"""Latent Gaussian model building blocks.

Components (fixed effects, iid, AR(1), RW1, SPDE Matern fields), group and
replicate couplings over time, hyperparameter transforms and priors, and the
stacking machinery that joins observation and prediction blocks into one
model graph.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, gammaln, gamma as gamma_fn

from .errors import DimensionMismatch, InvalidCorrelation, UnknownTag
from .sparse import SparseSymmetric, factorize, reorder

LOG_2PI = float(np.log(2.0 * np.pi))

HYPER_SOFT_LIMIT = 10


# ------------------------------------------------------------------
# transforms between internal (unconstrained) and natural scales

def _corr_to_internal(a):
    return float(np.log((1.0 + a) / (1.0 - a)))


TRANSFORMS = {
    "log": (np.exp, np.log),
    "correlation": (lambda t: 2.0 * expit(t) - 1.0, _corr_to_internal),
    "identity": (lambda t: t, lambda v: v),
}


@dataclass
class GaussianPrior:
    """Gaussian prior on the internal scale."""

    mean: float = 0.0
    precision: float = 0.1

    def __post_init__(self):
        if self.precision <= 0:
            raise ValueError("prior precision must be positive")

    def log_density(self, internal):
        return 0.5 * (np.log(self.precision) - LOG_2PI) - 0.5 * self.precision * (internal - self.mean) ** 2


@dataclass
class LogGammaPrior:
    """Gamma prior on the natural positive scale of a log-transformed parameter.

    The returned density lives on the internal scale, so the log-Jacobian
    of the exp transform is included.
    """

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")

    def log_density(self, internal):
        return (self.shape * np.log(self.rate) - gammaln(self.shape)
                + self.shape * internal - self.rate * np.exp(internal))


class HyperParam:
    """One scalar hyperparameter with its transform, prior and initial value."""

    __slots__ = ("name", "internal_value", "transform", "prior", "fixed")

    def __init__(self, name, internal_value=0.0, transform="log", prior=None, fixed=False):
        if transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {transform!r}")
        self.name = name
        self.internal_value = float(internal_value)
        self.transform = transform
        self.prior = prior if prior is not None else GaussianPrior()
        self.fixed = bool(fixed)

    def natural(self, internal=None):
        fwd, _ = TRANSFORMS[self.transform]
        return fwd(self.internal_value if internal is None else internal)

    def internal_from_natural(self, natural):
        _, inv = TRANSFORMS[self.transform]
        return float(inv(natural))

    def log_prior(self, internal):
        return float(self.prior.log_density(internal))

    def __repr__(self):
        return f"HyperParam({self.name!r}, {self.transform}, internal={self.internal_value:.4g}, fixed={self.fixed})"


def log_precision_hyper(name, initial_precision=1.0, prior=None, fixed=False):
    return HyperParam(name, np.log(initial_precision), "log",
                      prior or GaussianPrior(0.0, 0.1), fixed)


def correlation_hyper(name, initial_internal=2.0, prior=None, fixed=False):
    """AR coefficient on the internal scale log((1+a)/(1-a))."""
    return HyperParam(name, initial_internal, "correlation",
                      prior or GaussianPrior(0.0, 0.15), fixed)


# ------------------------------------------------------------------
# Matern/SPDE parameter helpers

def matern_kappa_tau(range_, sigma, nu=1.0, dim=2):
    """Scale parameters from an empirical range and marginal sd.

    kappa = sqrt(8 nu) / range; tau chosen so the stationary field has
    marginal variance sigma^2 (for nu=1 in 2D this is 1/(2 sqrt(pi) kappa sigma)).
    """
    kappa = np.sqrt(8.0 * nu) / range_
    front = gamma_fn(nu) / (gamma_fn(nu + dim / 2.0) * (4.0 * np.pi) ** (dim / 2.0))
    tau = np.sqrt(front) / (kappa**nu * sigma)
    return float(kappa), float(tau)


def matern_range_variance(kappa, tau, nu=1.0, dim=2):
    """Inverse of matern_kappa_tau: empirical range and marginal variance."""
    rng = np.sqrt(8.0 * nu) / kappa
    front = gamma_fn(nu) / (gamma_fn(nu + dim / 2.0) * (4.0 * np.pi) ** (dim / 2.0))
    var = front / (kappa ** (2.0 * nu) * tau**2)
    return float(rng), float(var)


# ------------------------------------------------------------------
# structure matrices

def ar1_precision(n, a, marginal_precision=1.0):
    """Tridiagonal precision of a stationary AR(1) with unit-marginal structure.

    Inner diagonal (1+a^2)/(1-a^2), ends 1/(1-a^2), off-diagonal -a/(1-a^2),
    all scaled by `marginal_precision`.
    """
    if abs(a) >= 1.0:
        raise InvalidCorrelation(f"|a| = {abs(a)} >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    s = marginal_precision / (1.0 - a * a)
    diag = np.full(n, (1.0 + a * a) * s)
    if n >= 1:
        diag[0] = s
        diag[-1] = s
    rows = np.concatenate([np.arange(n), np.arange(1, n)])
    cols = np.concatenate([np.arange(n), np.arange(n - 1)])
    vals = np.concatenate([diag, np.full(n - 1, -a * s)])
    return SparseSymmetric.from_triplets(n, rows, cols, vals)


def rw1_structure(n, precision=1.0):
    """First-difference structure matrix D'D scaled by `precision` (rank n-1)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    diag = np.full(n, 2.0 * precision)
    diag[0] = precision
    diag[-1] = precision
    rows = np.concatenate([np.arange(n), np.arange(1, n)])
    cols = np.concatenate([np.arange(n), np.arange(n - 1)])
    vals = np.concatenate([diag, np.full(n - 1, -precision)])
    return SparseSymmetric.from_triplets(n, rows, cols, vals)


def _rw1_proper_coupling(n):
    """Precision B'B of the recursion x_t = x_{t-1} + e_t (unit determinant)."""
    diag = np.full(n, 2.0)
    diag[-1] = 1.0
    m = sp.diags([np.full(n - 1, -1.0), diag, np.full(n - 1, -1.0)], [-1, 0, 1])
    return m.tocsc()


def spde_precision(fem, alpha, kappa, tau):
    """Gauss-Markov precision of the Matern-like field on a triangulation.

    alpha=1: Q = tau^2 (kappa^2 C + G); alpha=2: Q = tau^2 (kappa^4 C +
    2 kappa^2 G + G C^-1 G) with the lumped diagonal mass matrix C.
    """
    if alpha not in (1, 2):
        raise ValueError("alpha must be 1 or 2")
    if kappa <= 0 or tau <= 0:
        raise ValueError("kappa and tau must be positive")
    c = fem.mass_diag
    G = fem.stiffness.full()
    if alpha == 1:
        Q = kappa**2 * sp.diags(c) + G
    else:
        GCG = (G @ sp.diags(1.0 / c) @ G).tocsc()
        Q = kappa**4 * sp.diags(c) + 2.0 * kappa**2 * G + GCG
    return SparseSymmetric.from_full((tau**2 * Q).tocsc())


def group_ar1(Q_space, T, a):
    """Kronecker coupling of a spatial precision over T AR(1)-dependent groups."""
    if abs(a) >= 1.0:
        raise InvalidCorrelation(f"|a| = {abs(a)} >= 1")
    if T == 1:
        return Q_space
    Qt = ar1_precision(T, a).full()
    return SparseSymmetric.from_full(sp.kron(Qt, Q_space.full(), format="csc"))


# ------------------------------------------------------------------
# groupings

@dataclass
class Ar1Grouping:
    length: int
    correlation: HyperParam

    def hyperparams(self):
        return [self.correlation]

    def coupling(self, values):
        a = TRANSFORMS["correlation"][0](values[self.correlation.name])
        return ar1_precision(self.length, a).full(), -(self.length - 1) * np.log(1.0 - a * a)


@dataclass
class ReplicateGrouping:
    length: int

    def hyperparams(self):
        return []

    def coupling(self, values):
        return sp.identity(self.length, format="csc"), 0.0


@dataclass
class Rw1Grouping:
    """Random-walk coupling in time: x_t = x_{t-1} + innovation."""

    length: int

    def hyperparams(self):
        return []

    def coupling(self, values):
        return _rw1_proper_coupling(self.length), 0.0


# ------------------------------------------------------------------
# latent components

@dataclass
class FixedEffect:
    """Linear covariate coefficient with a diffuse Gaussian prior."""

    name: str
    prior_precision: float = 1e-4

    grouping = None

    @property
    def total_size(self):
        return 1

    def hyperparams(self):
        return []

    def precision(self, values):
        return sp.csc_matrix(np.array([[self.prior_precision]]))

    def log_normalization(self, values):
        return 1, float(np.log(self.prior_precision)), 0.0

    def constraint_rows(self):
        return []


class _GroupableComponent:
    """Shared grouping logic: block precision kron-lifted over groups."""

    def _grouped(self, Qb, logdet_b, values):
        nb = Qb.shape[0]
        if self.grouping is None:
            return Qb, logdet_b
        Qt, logdet_t = self.grouping.coupling(values)
        T = self.grouping.length
        return sp.kron(Qt, Qb, format="csc"), nb * logdet_t + T * logdet_b

    @property
    def total_size(self):
        T = self.grouping.length if self.grouping is not None else 1
        return self.size * T


@dataclass
class IidComponent(_GroupableComponent):
    name: str
    size: int
    log_precision: HyperParam
    grouping: object = None

    def hyperparams(self):
        h = [self.log_precision]
        if self.grouping is not None:
            h += self.grouping.hyperparams()
        return h

    def precision(self, values):
        tau = np.exp(values[self.log_precision.name])
        Q = sp.identity(self.size, format="csc") * tau
        return self._grouped(Q, self.size * np.log(tau), values)[0]

    def log_normalization(self, values):
        tau = np.exp(values[self.log_precision.name])
        Q = sp.identity(self.size, format="csc") * tau
        _, logdet = self._grouped(Q, self.size * np.log(tau), values)
        return self.total_size, float(logdet), 0.0

    def constraint_rows(self):
        return []


@dataclass
class Ar1Component(_GroupableComponent):
    name: str
    size: int
    log_precision: HyperParam
    correlation: HyperParam
    grouping: object = None

    def hyperparams(self):
        h = [self.log_precision, self.correlation]
        if self.grouping is not None:
            h += self.grouping.hyperparams()
        return h

    def _base(self, values):
        tau = np.exp(values[self.log_precision.name])
        a = TRANSFORMS["correlation"][0](values[self.correlation.name])
        Q = ar1_precision(self.size, a, tau).full()
        logdet = self.size * np.log(tau) - (self.size - 1) * np.log(1.0 - a * a)
        return Q, logdet

    def precision(self, values):
        Q, logdet = self._base(values)
        return self._grouped(Q, logdet, values)[0]

    def log_normalization(self, values):
        Q, logdet = self._base(values)
        _, total = self._grouped(Q, logdet, values)
        return self.total_size, float(total), 0.0

    def constraint_rows(self):
        return []


@dataclass
class Rw1Component:
    """Intrinsic first-order random walk, usually over binned covariate values.

    Rank-deficient by one; with `sum_to_zero` a constraint row is attached
    and the prior is interpreted as the proper density on the constrained
    subspace (generalized determinant of the structure matrix is its size).
    """

    name: str
    size: int
    log_precision: HyperParam
    sum_to_zero: bool = True
    bin_values: object = None

    grouping = None

    @property
    def total_size(self):
        return self.size

    def hyperparams(self):
        return [self.log_precision]

    def precision(self, values):
        tau = np.exp(values[self.log_precision.name])
        return rw1_structure(self.size, tau).full()

    def log_normalization(self, values):
        tau = np.exp(values[self.log_precision.name])
        m = self.size
        gdet = (m - 1) * float(np.log(tau)) + float(np.log(m))
        corr = 0.5 * float(np.log(m)) if self.sum_to_zero else 0.0
        return m - 1, gdet, corr

    def constraint_rows(self):
        if not self.sum_to_zero:
            return []
        return [(np.ones(self.size), 0.0)]


@dataclass
class SpdeMaternComponent(_GroupableComponent):
    """Matern-like Gauss-Markov field from the finite-element construction."""

    name: str
    fem: object
    alpha: int
    log_tau: HyperParam
    log_kappa: HyperParam
    grouping: object = None

    def __post_init__(self):
        if self.alpha not in (1, 2):
            raise ValueError("alpha must be 1 or 2")
        self._eigvals = None

    @property
    def size(self):
        return self.fem.n

    def hyperparams(self):
        h = [self.log_tau, self.log_kappa]
        if self.grouping is not None:
            h += self.grouping.hyperparams()
        return h

    def _whitened_eigvals(self):
        # eigenvalues of C^{-1/2} G C^{-1/2}; makes logdet(Q) analytic in
        # (kappa, tau).  Dense eigendecomposition; only for moderate meshes.
        if self._eigvals is None:
            c = self.fem.mass_diag
            G = self.fem.stiffness.to_dense()
            s = 1.0 / np.sqrt(c)
            W = G * s[:, None] * s[None, :]
            self._eigvals = np.clip(np.linalg.eigvalsh(W), 0.0, None)
        return self._eigvals

    def _base(self, values):
        tau = np.exp(values[self.log_tau.name])
        kappa = np.exp(values[self.log_kappa.name])
        Q = spde_precision(self.fem, self.alpha, kappa, tau).full()
        ns = self.size
        if ns <= 800:
            lam = self._whitened_eigvals()
            logdet = (2.0 * ns * np.log(tau) + np.sum(np.log(self.fem.mass_diag))
                      + self.alpha * np.sum(np.log(kappa**2 + lam)))
        else:
            wrapped = SparseSymmetric.from_full(Q)
            logdet = factorize(wrapped, reorder(wrapped)).logdet
        return Q, float(logdet)

    def precision(self, values):
        Q, logdet = self._base(values)
        return self._grouped(Q, logdet, values)[0]

    def log_normalization(self, values):
        Q, logdet = self._base(values)
        _, total = self._grouped(Q, logdet, values)
        return self.total_size, float(total), 0.0

    def constraint_rows(self):
        return []


def spde_matern_component(name, fem, mesh, alpha=2, initial_range=None, initial_sigma=1.0,
                          prior=None, grouping=None):
    """SPDE component with mesh-scale-derived initial values for tau/kappa."""
    if initial_range is None:
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        initial_range = 0.2 * float(np.hypot(*(hi - lo)))
    nu = alpha - 1.0 if alpha == 2 else 0.5
    kappa0, tau0 = matern_kappa_tau(initial_range, initial_sigma, nu=max(nu, 1e-6))
    return SpdeMaternComponent(
        name, fem, alpha,
        log_tau=HyperParam(f"{name}.log_tau", np.log(tau0), "log",
                           prior or GaussianPrior(0.0, 0.1)),
        log_kappa=HyperParam(f"{name}.log_kappa", np.log(kappa0), "log",
                             GaussianPrior(0.0, 0.1) if prior is None else prior),
        grouping=grouping,
    )


def bin_covariate(values, n_bins=None):
    """Map covariate values to RW1 bins.

    Returns (bin_index per value, sorted bin centers).  Without `n_bins`
    each distinct value is its own bin.
    """
    values = np.asarray(values, dtype=float)
    if n_bins is None:
        centers, idx = np.unique(values, return_inverse=True)
        return idx, centers
    edges = np.linspace(values.min(), values.max(), n_bins + 1)
    idx = np.clip(np.digitize(values, edges[1:-1]), 0, n_bins - 1)
    used = np.unique(idx)
    remap = np.full(n_bins, -1)
    remap[used] = np.arange(used.size)
    centers = np.array([values[idx == b].mean() for b in used])
    return remap[idx], centers


# ------------------------------------------------------------------
# stacking observation/prediction blocks into a model graph

@dataclass
class StackPart:
    """One block of rows: data (NaN marks missing), A-blocks per component, tag."""

    y: np.ndarray
    blocks: dict
    tag: str


def index_block(indices, size):
    """Selection matrix mapping rows to latent indices of a component."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= size):
        raise DimensionMismatch("index exceeds component size")
    m = indices.size
    return sp.csr_matrix((np.ones(m), (np.arange(m), indices)), shape=(m, size))


def group_block(base_block, group_index, n_groups):
    """Lift a within-group A-block to the grouped layout (group-major columns)."""
    base_block = sp.csr_matrix(base_block)
    m, nb = base_block.shape
    group_index = np.asarray(group_index, dtype=np.int64)
    if group_index.size != m:
        raise DimensionMismatch("group index length does not match block rows")
    if group_index.size and (group_index.min() < 0 or group_index.max() >= n_groups):
        raise DimensionMismatch("group index out of range")
    coo = base_block.tocoo()
    cols = group_index[coo.row] * nb + coo.col
    return sp.csr_matrix((coo.data, (coo.row, cols)), shape=(m, nb * n_groups))


class ModelGraph:
    """Complete latent model: components, likelihood, observations and tags."""

    def __init__(self, components, likelihood, y, A, tags):
        self.components = list(components)
        self.likelihood = likelihood
        self.y = np.asarray(y, dtype=float)
        self.A = sp.csr_matrix(A)
        self.tags = dict(tags)

        offsets = {}
        start = 0
        for comp in self.components:
            offsets[comp.name] = (start, comp.total_size)
            start += comp.total_size
        self.n_latent = start
        self.col_offsets = offsets
        if self.A.shape != (self.y.size, self.n_latent):
            raise DimensionMismatch(
                f"A is {self.A.shape}, expected ({self.y.size}, {self.n_latent})")

        hypers = []
        seen = set()
        for comp in self.components:
            for h in comp.hyperparams():
                if id(h) not in seen:
                    seen.add(id(h))
                    hypers.append(h)
        for h in likelihood.hyperparams():
            if id(h) not in seen:
                seen.add(id(h))
                hypers.append(h)
        names = [h.name for h in hypers]
        if len(set(names)) != len(names):
            raise ValueError("hyperparameter names must be unique")
        self.hyperparams = hypers
        if len(self.free_hyperparams()) > HYPER_SOFT_LIMIT:
            warnings.warn(
                f"{len(self.free_hyperparams())} free hyperparameters; "
                "deterministic integration degrades beyond about 10",
                stacklevel=2,
            )

        rows, rhs = [], []
        for comp in self.components:
            s, width = offsets[comp.name]
            for local_row, e_val in comp.constraint_rows():
                full = np.zeros(self.n_latent)
                full[s:s + width] = local_row
                rows.append(full)
                rhs.append(e_val)
        self.constraint_matrix = np.array(rows) if rows else np.zeros((0, self.n_latent))
        self.constraint_rhs = np.array(rhs) if rhs else np.zeros(0)
        self.observed = np.isfinite(self.y)

    # -- hyperparameters ------------------------------------------------

    def free_hyperparams(self):
        return [h for h in self.hyperparams if not h.fixed]

    def theta_names(self):
        return [h.name for h in self.free_hyperparams()]

    def theta_initial(self):
        return np.array([h.internal_value for h in self.free_hyperparams()])

    def values_from_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        free = self.free_hyperparams()
        if theta.size != len(free):
            raise DimensionMismatch(f"theta has {theta.size} entries, expected {len(free)}")
        values = {h.name: h.internal_value for h in self.hyperparams}
        for h, t in zip(free, theta):
            values[h.name] = float(t)
        return values

    # -- prior ----------------------------------------------------------

    def prior_quantities(self, theta):
        """(Q_prior as csc, rank, generalized logdet, constraint log-correction)."""
        values = self.values_from_theta(theta)
        blocks = []
        rank = 0
        logdet = 0.0
        corr = 0.0
        for comp in self.components:
            blocks.append(comp.precision(values))
            r, ld, cr = comp.log_normalization(values)
            rank += r
            logdet += ld
            corr += cr
        Q = sp.block_diag(blocks, format="csc") if blocks else sp.csc_matrix((0, 0))
        return Q, rank, logdet, corr

    def component_slice(self, name):
        if name not in self.col_offsets:
            raise UnknownTag(name)
        s, width = self.col_offsets[name]
        return slice(s, s + width)

    def tag_range(self, tag):
        if tag not in self.tags:
            raise UnknownTag(tag)
        return self.tags[tag]


def prior_precision(model, theta):
    """Block-diagonal prior precision Q(theta) over all components."""
    Q, _, _, _ = model.prior_quantities(theta)
    return SparseSymmetric.from_full(Q)


def log_prior_theta(model, theta):
    """Sum of prior log-densities of the non-fixed hyperparameters."""
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    for h, t in zip(model.free_hyperparams(), theta):
        total += h.log_prior(float(t))
    return float(total)


def build_stack(parts, components, likelihood):
    """Join stacked parts into a ModelGraph.

    Rows are concatenated in part order and tagged; every part supplies
    A-blocks keyed by component name (1-D covariate values for fixed
    effects, matrices otherwise).  Components missing from a part
    contribute zero blocks.
    """
    components = list(components)
    sizes = {c.name: c.total_size for c in components}
    ys = []
    row_blocks = []
    tags = {}
    start = 0
    for part in parts:
        y = np.asarray(part.y, dtype=float)
        m = y.size
        cols = []
        for comp in components:
            name = comp.name
            if name in part.blocks:
                blk = part.blocks[name]
                if isinstance(comp, FixedEffect):
                    vals = np.asarray(blk, dtype=float).reshape(-1)
                    if vals.size != m:
                        raise DimensionMismatch(
                            f"fixed effect {name!r}: {vals.size} values for {m} rows")
                    blk = sp.csr_matrix(vals.reshape(-1, 1))
                else:
                    blk = sp.csr_matrix(blk)
                    if blk.shape != (m, sizes[name]):
                        raise DimensionMismatch(
                            f"block {name!r} is {blk.shape}, expected ({m}, {sizes[name]})")
            else:
                blk = sp.csr_matrix((m, sizes[name]))
            cols.append(blk)
        unknown = set(part.blocks) - set(sizes)
        if unknown:
            raise DimensionMismatch(f"blocks reference unknown components: {sorted(unknown)}")
        if part.tag in tags:
            raise ValueError(f"duplicate tag {part.tag!r}")
        row_blocks.append(sp.hstack(cols, format="csr"))
        ys.append(y)
        tags[part.tag] = range(start, start + m)
        start += m
    A = sp.vstack(row_blocks, format="csr") if row_blocks else sp.csr_matrix((0, 0))
    return ModelGraph(components, likelihood, np.concatenate(ys), A, tags)
