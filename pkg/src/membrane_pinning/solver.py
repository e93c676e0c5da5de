"""Green's function of the discrete bilaplacian with zero boundary values.

For a finite set of free sites F the membrane covariance is the inverse of
the bilaplacian matrix restricted to F.  Small domains are factorised densely
(Cholesky), low-dimensional large domains with a sparse LU, and large
domains in d >= 3 are handled column by column with conjugate gradients.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import LatticeField, Site, bilaplacian_stencil, hessian

DENSE_LIMIT = 1500
SPARSE_LIMIT = 200_000
RESIDUAL_TOL = 1e-9
LOG_2PI = math.log(2.0 * math.pi)


class SolverError(RuntimeError):
    pass


def _encode(coords: np.ndarray, lo: np.ndarray, ext: np.ndarray) -> np.ndarray:
    shifted = coords - lo
    key = np.zeros(coords.shape[0], dtype=np.int64)
    for k in range(coords.shape[1]):
        key = key * ext[k] + shifted[:, k]
    return key


def assemble(sites: Iterable[Sequence[int]] | np.ndarray) -> tuple[np.ndarray, sp.csr_matrix]:
    """Sorted site array and the sparse bilaplacian restricted to it."""
    arr = np.asarray(sites, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 0), sp.csr_matrix((0, 0))
    if arr.ndim == 1:
        arr = arr[:, None]
    arr = np.unique(arr, axis=0)
    n, d = arr.shape
    st = bilaplacian_stencil(d)
    reach = 2
    lo = arr.min(axis=0) - reach
    ext = arr.max(axis=0) + reach - lo + 1
    keys = _encode(arr, lo, ext)
    rows, cols, vals = [], [], []
    for off, c in st.items():
        nb = _encode(arr + np.array(off), lo, ext)
        pos = np.searchsorted(keys, nb)
        pos = np.minimum(pos, n - 1)
        hit = keys[pos] == nb
        rows.append(np.nonzero(hit)[0])
        cols.append(pos[hit])
        vals.append(np.full(hit.sum(), c))
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return arr, mat


class GreenSolver:
    """Covariance of the membrane model on a finite set of free sites.

    Sites outside the free set (pinned sites and the exterior of the
    domain) have zero covariance with everything.
    """

    def __init__(self, sites: Iterable[Sequence[int]] | np.ndarray, method: str | None = None):
        self.sites, self.matrix = assemble(sites)
        self.n = self.sites.shape[0]
        self.dim = self.sites.shape[1] if self.n else 0
        self.method = method or self._default_method()
        self._index: dict[Site, int] | None = None
        self._chol = None
        self._lu = None
        self._green: np.ndarray | None = None
        self._logdet: float | None = None

    def _default_method(self) -> str:
        if self.n <= DENSE_LIMIT:
            return "dense"
        if self.dim <= 2 and self.n <= SPARSE_LIMIT:
            return "sparse"
        return "cg"

    @classmethod
    def _from_dense(cls, sites: np.ndarray, matrix: sp.csr_matrix, green: np.ndarray, logdet: float | None) -> "GreenSolver":
        obj = cls.__new__(cls)
        obj.sites, obj.matrix = sites, matrix
        obj.n = sites.shape[0]
        obj.dim = sites.shape[1] if obj.n else 0
        obj.method = "dense"
        obj._index = None
        obj._chol = None
        obj._lu = None
        obj._green = green
        obj._logdet = logdet
        return obj

    @property
    def index(self) -> dict[Site, int]:
        if self._index is None:
            self._index = {tuple(int(c) for c in s): k for k, s in enumerate(self.sites)}
        return self._index

    def position(self, site: Sequence[int]) -> int | None:
        return self.index.get(tuple(int(c) for c in site))

    # -- factorisations ----------------------------------------------------

    def _factor(self) -> None:
        if self.method == "dense" and self._chol is None and self._green is None:
            try:
                self._chol = sla.cho_factor(self.matrix.toarray(), lower=True)
            except np.linalg.LinAlgError as exc:
                raise SolverError("bilaplacian block is not positive definite") from exc
        elif self.method == "sparse" and self._lu is None:
            self._lu = spla.splu(self.matrix.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        if self.method == "dense":
            if self._green is not None:
                return self._green @ rhs
            self._factor()
            return sla.cho_solve(self._chol, rhs)
        if self.method == "sparse":
            self._factor()
            return self._lu.solve(rhs)
        x, info = spla.cg(self.matrix, rhs, rtol=1e-13, atol=0.0, maxiter=50 * self.n)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge (info={info})")
        return x

    def green_matrix(self) -> np.ndarray:
        """Full covariance matrix (dense method only)."""
        if self.method != "dense":
            raise SolverError("full Green matrix is only formed for small domains")
        if self._green is None:
            self._factor()
            self._green = sla.cho_solve(self._chol, np.eye(self.n))
        return self._green

    # -- queries -----------------------------------------------------------

    def green_column(self, y: Sequence[int]) -> np.ndarray:
        """G(., y) on the free sites, in sorted site order."""
        k = self.position(y)
        if k is None:
            return np.zeros(self.n)
        if self._green is not None:
            return self._green[:, k].copy()
        rhs = np.zeros(self.n)
        rhs[k] = 1.0
        col = self.solve(rhs)
        res = np.abs(self.matrix @ col - rhs).max()
        if res > RESIDUAL_TOL:
            raise SolverError(f"Green column residual {res:.3e} exceeds {RESIDUAL_TOL}")
        return col

    def green_field(self, y: Sequence[int]) -> LatticeField:
        """G(., y) as a field on the bounding box of the free sites."""
        col = self.green_column(y)
        return self.as_field(col)

    def as_field(self, vec: np.ndarray) -> LatticeField:
        lo = self.sites.min(axis=0)
        hi = self.sites.max(axis=0)
        f = LatticeField.zeros(lo, hi)
        f.values[tuple((self.sites - lo).T)] = vec
        return f

    def covariance(self, x: Sequence[int], y: Sequence[int]) -> float:
        kx = self.position(x)
        ky = self.position(y)
        if kx is None or ky is None:
            return 0.0
        if self._green is not None:
            return float(self._green[kx, ky])
        return float(self.green_column(y)[kx])

    def variance(self, x: Sequence[int]) -> float:
        return self.covariance(x, x)

    def logdet(self) -> float:
        if self._logdet is None:
            if self.n == 0:
                self._logdet = 0.0
            elif self.method == "dense":
                if self._chol is None and self._green is not None:
                    sign, ld = np.linalg.slogdet(self.matrix.toarray())
                    self._logdet = float(ld)
                else:
                    self._factor()
                    self._logdet = float(2.0 * np.log(np.diag(self._chol[0])).sum())
            elif self.method == "sparse":
                self._factor()
                self._logdet = float(np.log(np.abs(self._lu.U.diagonal())).sum())
            else:
                raise SolverError("log-determinant needs a factorisation; domain too large for CG mode")
        return self._logdet

    def log_partition(self) -> float:
        """log of the integral of exp(-H) over the free coordinates."""
        return 0.5 * self.n * LOG_2PI - 0.5 * self.logdet()

    def condition_on_pin(self, x: Sequence[int]) -> "GreenSolver":
        """Solver for the free set with x removed, via a rank-one Schur update."""
        k = self.position(x)
        if k is None:
            return self
        keep = np.arange(self.n) != k
        sites = self.sites[keep]
        matrix = self.matrix[keep][:, keep].tocsr()
        if self.method != "dense":
            return GreenSolver(sites, method=self.method)
        g = self.green_matrix()
        gx = g[:, k]
        gxx = gx[k]
        if not gxx > 0.0:
            raise SolverError("non-positive pivot in Schur update")
        new = g - np.outer(gx, gx) / gxx
        logdet = None
        if self._logdet is not None:
            logdet = self._logdet + math.log(gxx)
        return GreenSolver._from_dense(sites, matrix, new[np.ix_(keep, keep)], logdet)


def log_partition(sites: Iterable[Sequence[int]]) -> float:
    return GreenSolver(sites).log_partition()


def energy_inner(u: LatticeField, v: LatticeField) -> float:
    """(grad^2 u, grad^2 v) summed over Z^d, both fields zero outside their boxes."""
    lo = tuple(min(a, b) for a, b in zip(u.origin, v.origin))
    hi = tuple(max(a, b) for a, b in zip(u.hi, v.hi))
    _, hu = hessian(u.restricted(lo, hi))
    _, hv = hessian(v.restricted(lo, hi))
    return float((hu * hv).sum())
