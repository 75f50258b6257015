"""Sparse symmetric positive-definite linear algebra for Gauss-Markov models.

Lower-triangle storage, minimum-degree reordering, Cholesky factorization,
log-determinants, selected inversion (Takahashi recursions) and seeded GMRF
sampling with exact linear constraints.  The numeric factorization of the
permuted matrix is backed by LAPACK band routines when its pattern is a band
plus a small dense border, and by SuperLU run without pivoting otherwise;
either way the caller's fill-reducing permutation is the one that matters.
"""
from __future__ import annotations

import heapq

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, NotPositiveDefinite, SingularConstraint

PIVOT_TOL = 1e-12

# selected_inverse switches to a dense sliding-window recursion when the
# factor is banded and the window fits comfortably in memory.
_BAND_ENTRY_CAP = 2 * 10**7
_BAND_FLOP_CAP = 2 * 10**9


class SparseSymmetric:
    """Symmetric sparse matrix stored as its lower triangle.

    Only entries with row >= col are kept, in CSC layout with sorted
    indices.  Duplicate coordinates are rejected at construction.
    """

    __slots__ = ("n", "lower", "_full")

    def __init__(self, n, lower, validate=True):
        lower = sp.csc_matrix(lower)
        if lower.shape != (n, n):
            raise DimensionMismatch(f"lower triangle must be {n}x{n}, got {lower.shape}")
        lower.sort_indices()
        if validate:
            r, c = lower.nonzero()
            if np.any(r < c):
                raise ValueError("entries above the diagonal are not allowed")
        self.n = n
        self.lower = lower
        self._full = None

    @classmethod
    def from_triplets(cls, n, rows, cols, values):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if not (rows.shape == cols.shape == values.shape):
            raise DimensionMismatch("rows, cols and values must have equal length")
        if np.any(rows < cols):
            raise ValueError("only lower-triangle entries (row >= col) may be given")
        if np.any((rows < 0) | (rows >= n) | (cols < 0) | (cols >= n)):
            raise ValueError("index out of range")
        keys = cols * n + rows
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate (row, col) pairs are forbidden")
        lower = sp.csc_matrix((values, (rows, cols)), shape=(n, n))
        return cls(n, lower, validate=False)

    @classmethod
    def from_full(cls, matrix, validate=False):
        """Wrap a full symmetric matrix (dense or scipy sparse)."""
        m = sp.csc_matrix(matrix)
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch("matrix must be square")
        if validate:
            asym = abs(m - m.T)
            scale = max(abs(m).max(), 1.0)
            if asym.nnz and asym.max() > 1e-10 * scale:
                raise ValueError("matrix is not symmetric")
        return cls(m.shape[0], sp.tril(m, format="csc"), validate=False)

    @property
    def nnz_lower(self):
        return self.lower.nnz

    def full(self):
        """Full symmetric matrix in CSC format (cached)."""
        if self._full is None:
            strict = sp.tril(self.lower, k=-1)
            self._full = (self.lower + strict.T).tocsc()
            self._full.sort_indices()
        return self._full

    def diagonal(self):
        return self.lower.diagonal()

    def matvec(self, x):
        return self.full() @ x

    def quad(self, x):
        """x' Q x."""
        return float(x @ (self.full() @ x))

    def to_dense(self):
        return self.full().toarray()

    def save_triplets(self, path):
        """Plain-text triplet file: header `n nnz`, then `row col value`."""
        coo = self.lower.tocoo()
        order = np.lexsort((coo.row, coo.col))
        with open(path, "w") as fh:
            fh.write(f"{self.n} {coo.nnz}\n")
            for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")

    @classmethod
    def load_triplets(cls, path):
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: expected header 'n nnz'")
            n, nnz = int(header[0]), int(header[1])
            rows = np.empty(nnz, dtype=np.int64)
            cols = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz, dtype=float)
            for k in range(nnz):
                parts = fh.readline().split()
                if len(parts) != 3:
                    raise ValueError(f"{path}: truncated triplet file")
                rows[k], cols[k], vals[k] = int(parts[0]), int(parts[1]), float(parts[2])
        return cls.from_triplets(n, rows, cols, vals)


class Permutation:
    """Bijective index map; `order[i]` is the original index placed at i."""

    __slots__ = ("order",)

    def __init__(self, order):
        order = np.asarray(order, dtype=np.int64)
        n = order.size
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("order is not a permutation")
        self.order = order

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @property
    def n(self):
        return self.order.size

    def inverse(self):
        return Permutation(np.argsort(self.order))

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.order, other.order)


def reorder(Q):
    """Fill-reducing permutation via approximate-minimum-degree elimination.

    Quotient-graph bookkeeping: eliminated vertices become elements whose
    boundaries stand in for the cliques they induce, and degrees are
    updated with the usual external-degree bound rather than exact set
    unions.  Ties break toward the smallest vertex index, so the result is
    deterministic; a matrix with no off-diagonal structure maps to the
    identity.
    """
    n = Q.n
    coo = sp.tril(Q.lower, k=-1).tocoo()
    adj = [set() for _ in range(n)]
    for i, j in zip(coo.row, coo.col):
        adj[i].add(j)
        adj[j].add(i)

    elems_of = [set() for _ in range(n)]   # element ids adjacent to each variable
    elem_vars = {}                         # element id -> boundary variable set
    degree = [len(a) for a in adj]
    alive = np.ones(n, dtype=bool)
    heap = [(degree[i], i) for i in range(n)]
    heapq.heapify(heap)
    order = np.empty(n, dtype=np.int64)
    pos = 0
    next_elem = 0

    while heap:
        d, v = heapq.heappop(heap)
        if not alive[v] or d != degree[v]:
            continue
        alive[v] = False
        order[pos] = v
        pos += 1

        absorbed = elems_of[v]
        boundary = set(adj[v])
        for e in absorbed:
            boundary |= elem_vars.pop(e)
        boundary.discard(v)
        boundary = {u for u in boundary if alive[u]}
        elems_of[v] = set()
        adj[v] = set()
        if not boundary:
            continue

        e = next_elem
        next_elem += 1
        elem_vars[e] = boundary
        lp_size = len(boundary)
        # |Le \ Lp| for every element touching the boundary
        ext = {}
        for u in boundary:
            eo = elems_of[u]
            eo -= absorbed
            for e2 in eo:
                if e2 not in ext:
                    ext[e2] = len(elem_vars[e2])
                ext[e2] -= 1
        remaining = n - pos
        for u in boundary:
            adj[u].discard(v)
            adj[u] -= boundary
            eo = elems_of[u]
            eo.add(e)
            bound = len(adj[u]) + (lp_size - 1) + sum(ext.get(e2, 0) for e2 in eo if e2 != e)
            degree[u] = min(remaining - 1, degree[u] + lp_size - 1, bound)
            heapq.heappush(heap, (degree[u], u))

    return Permutation(order)


class _SpluBackend:
    """SuperLU without pivoting on the permuted matrix."""

    __slots__ = ("lu", "d")

    def __init__(self, Ap, n, pivot_tol):
        try:
            lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise NotPositiveDefinite(f"factorization failed: {exc}") from exc
        if not np.array_equal(lu.perm_r, np.arange(n)):
            raise NotPositiveDefinite("row pivoting occurred: matrix is not SPD")
        d = lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.min(d) <= pivot_tol:
            raise NotPositiveDefinite(
                f"pivot {np.min(d):.3e} at or below tolerance {pivot_tol:.1e}")
        self.lu = lu
        self.d = d

    def logdet(self):
        return float(np.sum(np.log(self.d)))

    def solve(self, bp):
        return self.lu.solve(bp)

    def solve_Lt(self, z):
        L = self.build_L()
        return spla.spsolve_triangular(L.T.tocsr(), z, lower=False)

    def build_L(self):
        L = (self.lu.L.tocsc() @ sp.diags(np.sqrt(self.d))).tocsc()
        L.sort_indices()
        return L


class _BandedBackend:
    """LAPACK band Cholesky of the core block plus a dense trailing border.

    The permuted matrix is [[A11, B'], [B, A22]] with A11 banded of width w
    and B the nb border rows; L = [[L1, 0], [M, LF]] with L1 the band
    factor, M = B L1^-T and LF the Cholesky of the border Schur complement.
    Triangular band sweeps go through LAPACK tbtrs.
    """

    __slots__ = ("n", "cut", "w", "nb", "lband", "M", "LF")

    def __init__(self, Ap, n, w, nb, pivot_tol):
        cut = n - nb
        coo = Ap.tocoo()
        lowmask = coo.row >= coo.col
        rows = coo.row[lowmask]
        cols = coo.col[lowmask]
        data = coo.data[lowmask]
        if not np.all(np.isfinite(data)):
            raise NotPositiveDefinite("matrix contains non-finite entries")
        core = rows < cut
        ab = np.zeros((w + 1, cut))
        ab[rows[core] - cols[core], cols[core]] = data[core]
        try:
            lband = scipy.linalg.cholesky_banded(ab, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"band factorization failed: {exc}") from exc
        if not np.all(np.isfinite(lband[0])) or np.min(lband[0]) ** 2 <= pivot_tol:
            raise NotPositiveDefinite("pivot at or below tolerance")
        if nb:
            Bd = np.zeros((nb, cut))
            bmask = (~core) & (cols < cut)
            Bd[rows[bmask] - cut, cols[bmask]] = data[bmask]
            Y = self._tbtrs(lband, Bd.T, b"N")
            M = Y.T
            F = np.zeros((nb, nb))
            fmask = (~core) & (cols >= cut)
            F[rows[fmask] - cut, cols[fmask] - cut] = data[fmask]
            F = F + np.tril(F, -1).T
            S = F - M @ M.T
            try:
                LF = np.linalg.cholesky(0.5 * (S + S.T))
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(f"border factorization failed: {exc}") from exc
            if np.min(np.diag(LF)) ** 2 <= pivot_tol:
                raise NotPositiveDefinite("pivot at or below tolerance")
        else:
            M = np.zeros((0, cut))
            LF = np.zeros((0, 0))
        self.n, self.cut, self.w, self.nb = n, cut, w, nb
        self.lband, self.M, self.LF = lband, M, LF

    @staticmethod
    def _tbtrs(lband, b, trans):
        one_d = b.ndim == 1
        x, info = scipy.linalg.lapack.dtbtrs(lband, b.reshape(lband.shape[1], -1),
                                             uplo=b"L", trans=trans)
        if info != 0:
            raise NotPositiveDefinite(f"triangular band solve failed (info={info})")
        return x.ravel() if one_d else x

    def logdet(self):
        out = 2.0 * float(np.sum(np.log(self.lband[0])))
        if self.nb:
            out += 2.0 * float(np.sum(np.log(np.diag(self.LF))))
        return out

    def solve(self, bp):
        cut, nb = self.cut, self.nb
        b1, b2 = bp[:cut], bp[cut:]
        u1 = self._tbtrs(self.lband, b1, b"N")
        if nb:
            u2 = scipy.linalg.solve_triangular(self.LF, b2 - self.M @ u1,
                                               lower=True, check_finite=False)
            x2 = scipy.linalg.solve_triangular(self.LF.T, u2,
                                               lower=False, check_finite=False)
            x1 = self._tbtrs(self.lband, u1 - self.M.T @ x2, b"T")
            return np.concatenate([x1, x2]) if bp.ndim == 1 else np.vstack([x1, x2])
        return self._tbtrs(self.lband, u1, b"T")

    def solve_Lt(self, z):
        cut, nb = self.cut, self.nb
        z1, z2 = z[:cut], z[cut:]
        if nb:
            x2 = scipy.linalg.solve_triangular(self.LF.T, z2, lower=False,
                                               check_finite=False)
            x1 = self._tbtrs(self.lband, z1 - self.M.T @ x2, b"T")
            return np.concatenate([x1, x2]) if z.ndim == 1 else np.vstack([x1, x2])
        return self._tbtrs(self.lband, z1, b"T")

    def build_L(self):
        w, cut, nb = self.w, self.cut, self.nb
        rows, cols, vals = [], [], []
        for d in range(w + 1):
            m = cut - d
            v = self.lband[d, :m]
            nz = v != 0.0
            cols.append(np.flatnonzero(nz))
            rows.append(cols[-1] + d)
            vals.append(v[nz])
        if nb:
            for r in range(nb):
                v = self.M[r]
                nz = v != 0.0
                cols.append(np.flatnonzero(nz))
                rows.append(np.full(int(nz.sum()), cut + r))
                vals.append(v[nz])
            br, bc = np.tril_indices(nb)
            keep = self.LF[br, bc] != 0.0
            rows.append(cut + br[keep])
            cols.append(cut + bc[keep])
            vals.append(self.LF[br, bc][keep])
        L = sp.csc_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n, self.n))
        L.sort_indices()
        return L


class CholeskyFactor:
    """Permuted sparse Cholesky factorization P Q P' = L L'."""

    __slots__ = ("n", "perm", "logdet", "_backend", "_L")

    def __init__(self, n, perm, backend):
        self.n = n
        self.perm = perm
        self.logdet = backend.logdet()
        self._backend = backend
        self._L = None

    @property
    def L(self):
        if self._L is None:
            self._L = self._backend.build_L()
        return self._L


def factorize(Q, perm=None, pivot_tol=PIVOT_TOL, band_hint=None):
    """Sparse Cholesky factorization of an SPD matrix.

    The permuted matrix is factorized either by a LAPACK band routine
    (when its pattern is a band plus a small trailing border) or by
    SuperLU run without pivoting, so L L' reproduces P Q P' exactly.
    A pivot at or below `pivot_tol` (or any row swap) raises
    NotPositiveDefinite.  `band_hint=(w, nb)` skips the layout detection
    when the caller factorizes many matrices with one pattern.
    """
    n = Q.n
    if perm is None:
        perm = Permutation.identity(n)
    if perm.n != n:
        raise DimensionMismatch("permutation size does not match matrix")
    A = Q.full()
    order = perm.order
    Ap = A[order, :][:, order].tocsc()
    Ap.sort_indices()
    if band_hint is None:
        w, nb = _detect_bordered_band(sp.tril(Ap, format="csc"), n)
    else:
        w, nb = band_hint
    if n * (w + nb + 1) <= _BAND_ENTRY_CAP and n * (w + nb + 1) ** 2 <= _BAND_FLOP_CAP:
        backend = _BandedBackend(Ap, n, w, nb, pivot_tol)
    else:
        backend = _SpluBackend(Ap, n, pivot_tol)
    return CholeskyFactor(n, perm, backend)


def solve(factor, b):
    """Solve Q x = b through the factorization; b may be a vector or matrix."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise DimensionMismatch(f"right-hand side has length {b.shape[0]}, expected {factor.n}")
    order = factor.perm.order
    x_perm = factor._backend.solve(b[order])
    out = np.empty_like(x_perm)
    out[order] = x_perm
    return out


def _closed_lower_pattern(n, indptr, indices):
    """Elimination-fill closure of a lower-triangular pattern.

    Returns CSC-style (indptr, indices) with the diagonal first in every
    column.  The closure guarantees that for any i, k > j present in column
    j, the pair (max(i,k), min(i,k)) is present too, which the Takahashi
    recursion relies on.
    """
    patterns = []
    for j in range(n):
        col = indices[indptr[j]:indptr[j + 1]]
        patterns.append(set(col[col > j].tolist()))
    for j in range(n):
        pj = patterns[j]
        if pj:
            p = min(pj)
            patterns[p] |= pj
            patterns[p].discard(p)
    out_indptr = np.zeros(n + 1, dtype=np.int64)
    cols = []
    for j in range(n):
        rows = np.fromiter(patterns[j], dtype=np.int64, count=len(patterns[j]))
        rows.sort()
        cols.append(np.concatenate(([j], rows)))
        out_indptr[j + 1] = out_indptr[j] + rows.size + 1
    return out_indptr, np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)


class SelectedInversePlan:
    """Reusable symbolic analysis for selected inversion on a fixed pattern.

    The closed fill pattern used by the general recursion is computed
    lazily, only when needed; band-backed factors never need it.
    """

    __slots__ = ("n", "source_indptr", "source_indices", "_closed")

    def __init__(self, factor):
        L = factor.L
        self.n = factor.n
        self.source_indptr = L.indptr.copy()
        self.source_indices = L.indices.copy()
        self._closed = None

    def closed_pattern(self):
        if self._closed is None:
            indptr, indices = _closed_lower_pattern(self.n, self.source_indptr,
                                                    self.source_indices)
            cols = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(indptr))
            keys = cols * self.n + indices
            self._closed = (indptr, indices, keys)
        return self._closed

    def matches(self, factor):
        return (factor.n == self.n
                and np.array_equal(factor.L.indptr, self.source_indptr)
                and np.array_equal(factor.L.indices, self.source_indices))


def _detect_bordered_band(L, n, max_border=24):
    """Core bandwidth and trailing border width minimizing the window cost.

    Dense trailing rows (an arrowhead of fixed effects, say) would blow up
    the plain bandwidth; tracking them as a border keeps the window small.
    """
    coo = L.tocoo()
    rows = coo.row.astype(np.int64)
    cols = coo.col.astype(np.int64)
    best = None
    for nb in range(0, min(max_border, n - 1) + 1):
        cut = n - nb
        mask = rows < cut
        w = int(np.max(rows[mask] - cols[mask])) if np.any(mask) else 0
        cost = n * (w + nb + 1) ** 2
        if best is None or cost < best[2]:
            best = (w, nb, cost)
    return best[0], best[1]


def _takahashi_bordered(backend):
    """Selected inverse over a band plus trailing border rows.

    A dense sliding window tracks the trailing band block, a strip tracks
    its coupling with the border, and a small dense block holds the border
    corner; the recursion is exact on that (closed) pattern.  Reads the
    factor straight out of the band storage.
    """
    n = backend.n
    cut, w, nb = backend.cut, backend.w, backend.nb
    lband, M, LF = backend.lband, backend.M, backend.LF
    diag = np.zeros(n)
    band = np.zeros((w, max(cut, 0)))
    strip = np.zeros((nb, max(cut, 0)))   # S[border, j] for band columns j
    F = np.zeros((nb, nb))                # S on the border block

    # border columns (last nb): patterns live inside the border
    for jb in range(nb - 1, -1, -1):
        ld = LF[jb, jb]
        lvals = LF[jb + 1:, jb]
        if lvals.size:
            scol = -(F[jb + 1:, jb + 1:] @ lvals) / ld
            F[jb + 1:, jb] = scol
            F[jb, jb + 1:] = scol
            F[jb, jb] = 1.0 / ld**2 - (lvals @ scol) / ld
        else:
            F[jb, jb] = 1.0 / ld**2
        diag[cut + jb] = F[jb, jb]

    win = np.zeros((w, w))
    wbuf = np.zeros((w, w))
    sb = np.zeros((nb, w))
    sbuf = np.zeros((nb, w))
    for j in range(cut - 1, -1, -1):
        ld = lband[0, j]
        m = min(w, cut - 1 - j)
        lb = lband[1:m + 1, j]
        lr = M[:, j]
        s_band = -(win[:m, :m] @ lb + sb[:, :m].T @ lr) / ld if m else np.zeros(0)
        s_bord = -(sb[:, :m] @ lb + F @ lr) / ld if nb else np.zeros(0)
        diag[j] = 1.0 / ld**2 - ((lb @ s_band if m else 0.0)
                                 + (lr @ s_bord if nb else 0.0)) / ld
        band[:m, j] = s_band
        if nb:
            strip[:, j] = s_bord
        if j and w:
            keep = min(m, w - 1)
            wbuf[1:keep + 1, 1:keep + 1] = win[:keep, :keep]
            if keep:
                wbuf[0, 1:keep + 1] = s_band[:keep]
                wbuf[1:keep + 1, 0] = s_band[:keep]
            wbuf[0, 0] = diag[j]
            win, wbuf = wbuf, win
            if nb:
                sbuf[:, 1:keep + 1] = sb[:, :keep]
                sbuf[:, 0] = s_bord
                sb, sbuf = sbuf, sb
    return diag, band, strip, F


def selected_inverse(factor, plan=None):
    """Values of Q^-1 on (at least) the sparsity pattern of L + L'.

    Diagonal entries are the exact marginal variances of the GMRF with
    precision Q.  Entries come back in original (unpermuted) indexing as a
    SparseSymmetric.  Passing a precomputed plan skips the symbolic stage
    when many factors share one sparsity pattern.
    """
    n = factor.n
    if isinstance(factor._backend, _BandedBackend):
        backend = factor._backend
        w, nb = backend.w, backend.nb
        cut = backend.cut
        diag, band, strip, F = _takahashi_bordered(backend)
        rows = [np.arange(n)]
        cols = [np.arange(n)]
        vals = [diag]
        for t in range(1, w + 1):
            m = cut - t
            if m <= 0:
                break
            rows.append(np.arange(t, t + m))
            cols.append(np.arange(m))
            vals.append(band[t - 1, :m])
        if nb:
            for r in range(nb):
                rows.append(np.full(cut, cut + r))
                cols.append(np.arange(cut))
                vals.append(strip[r])
            br, bc = np.tril_indices(nb, k=-1)
            rows.append(cut + br)
            cols.append(cut + bc)
            vals.append(F[br, bc])
        prow = np.concatenate(rows)
        pcol = np.concatenate(cols)
        pval = np.concatenate(vals)
    else:
        if plan is None or not plan.matches(factor):
            plan = SelectedInversePlan(factor)
        indptr, indices, _ = plan.closed_pattern()
        pval = _takahashi_general(factor, plan)
        prow = indices
        pcol = np.repeat(np.arange(n), np.diff(indptr))
    order = factor.perm.order
    orow = order[prow]
    ocol = order[pcol]
    lo = np.maximum(orow, ocol)
    hi = np.minimum(orow, ocol)
    lower = sp.csc_matrix((pval, (lo, hi)), shape=(n, n))
    return SparseSymmetric(n, lower, validate=False)


def _takahashi_general(factor, plan):
    """Takahashi recursion on the closed fill pattern (permuted order)."""
    n = plan.n
    indptr, indices, keys = plan.closed_pattern()
    # conform the numeric factor onto the closed pattern (zero padding)
    L = factor.L
    lkeys = np.repeat(np.arange(n, dtype=np.int64), np.diff(L.indptr)) * n + L.indices
    pos = np.searchsorted(lkeys, keys)
    pos = np.minimum(pos, lkeys.size - 1)
    ldata = np.where(lkeys[pos] == keys, L.data[pos], 0.0)
    sdata = np.zeros(indices.size)
    for j in range(n - 1, -1, -1):
        lo, hi = indptr[j], indptr[j + 1]
        ld = ldata[lo]
        rows = indices[lo + 1:hi]
        m = rows.size
        if m == 0:
            sdata[lo] = 1.0 / ld**2
            continue
        lvals = ldata[lo + 1:hi]
        r64 = rows.astype(np.int64)
        qk = np.minimum.outer(r64, r64) * n + np.maximum.outer(r64, r64)
        qk = qk.ravel()
        p = np.searchsorted(keys, qk)
        p = np.minimum(p, keys.size - 1)
        sub = np.where(keys[p] == qk, sdata[p], 0.0).reshape(m, m)
        scol = -(sub @ lvals) / ld
        sdata[lo + 1:hi] = scol
        sdata[lo] = 1.0 / ld**2 - (lvals @ scol) / ld
    return sdata


def sample(factor, count, seed):
    """Draw zero-mean GMRF samples with covariance Q^-1.

    Column j of the output is generated from the Philox stream
    `Philox(key=seed).jumped(j)`, so identical (factor, count, seed) give
    bit-identical output and columns may be regenerated independently.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n = factor.n
    Z = np.empty((n, count))
    for j in range(count):
        gen = np.random.Generator(np.random.Philox(key=seed).jumped(j))
        Z[:, j] = gen.standard_normal(n)
    Y = factor._backend.solve_Lt(Z)
    out = np.empty_like(Y)
    out[factor.perm.order] = Y
    return out


def constrain(mean, samples, factor, M, e):
    """Condition mean and samples on M x = e by kriging correction.

    Every output column x satisfies M x = e; the correction is
    x - Q^-1 M' (M Q^-1 M')^-1 (M x - e).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    e = np.atleast_1d(np.asarray(e, dtype=float))
    k, n = M.shape
    if n != factor.n or e.size != k:
        raise DimensionMismatch("constraint dimensions do not match the factor")
    W = solve(factor, M.T)
    S = M @ W
    S = 0.5 * (S + S.T)
    try:
        cho = scipy.linalg.cho_factor(S)
    except scipy.linalg.LinAlgError as exc:
        raise SingularConstraint(f"M Q^-1 M' is singular: {exc}") from exc
    if np.min(np.abs(np.diag(cho[0]))) <= 1e-12 * max(1.0, np.max(np.abs(S))):
        raise SingularConstraint("M Q^-1 M' is numerically singular")

    def correct(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return x - W @ scipy.linalg.cho_solve(cho, M @ x - e)
        return x - W @ scipy.linalg.cho_solve(cho, M @ x - e[:, None])

    mean_c = correct(mean) if mean is not None else None
    samples_c = correct(samples) if samples is not None else None
    return mean_c, samples_c
