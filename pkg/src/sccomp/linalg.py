"""Deterministic SVD, truncation, rank selection, and Tucker-2 decomposition.

The SVD itself is delegated to LAPACK through numpy; this module pins down the
parts numpy leaves unspecified: a sign convention that makes factors unique
(almost everywhere) and the exact tie-free rules for choosing ranks.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .tensors import mode_n_refold, mode_n_unfold


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of an m x n matrix: u (m, p), sigma (p,), v (n, p)."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or v.ndim != 2 or sigma.ndim != 1:
            raise ShapeError("u and v must be matrices and sigma a vector")
        p = sigma.shape[0]
        if u.shape[1] != p or v.shape[1] != p:
            raise ShapeError("u, sigma, v disagree on the number of components")
        if p and sigma.min(initial=0.0) < 0:
            raise NumericError("singular values must be non-negative")
        # Tolerance admits one-ulp inversions from 32-bit storage round trips.
        if p > 1 and np.any(np.diff(sigma) > 1e-6 * max(sigma[0], 1.0)):
            raise NumericError("singular values must be non-increasing")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "v", v)

    @property
    def rank(self):
        return self.sigma.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def _fix_signs(u, v):
    # Make each left singular vector's first nonzero entry non-negative so the
    # factorization is reproducible across LAPACK builds.
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(col)
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
            v[:, j] = -v[:, j]
    return u, v


def svd_decompose(a) -> SvdFactors:
    """Full thin SVD with a deterministic sign convention."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"svd expects a matrix, got {a.ndim}-D")
    if not np.all(np.isfinite(a)):
        raise NumericError("svd input contains non-finite values")
    u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    u, v = _fix_signs(u, vt.T.copy())
    return SvdFactors(u=u, sigma=sigma, v=v)


def truncate(factors: SvdFactors, rank: int) -> SvdFactors:
    """Keep the leading ``rank`` components."""
    if not 1 <= rank <= factors.rank:
        raise ShapeError(f"rank {rank} out of range 1..{factors.rank}")
    return SvdFactors(
        u=factors.u[:, :rank].copy(),
        sigma=factors.sigma[:rank].copy(),
        v=factors.v[:, :rank].copy(),
    )


def truncation_error(sigma, rank: int) -> float:
    """Frobenius error of the best rank-``rank`` approximation.

    Equals sqrt(sum of the squared singular values past ``rank``), the optimal
    achievable error for that rank.
    """
    tail = np.asarray(sigma, dtype=np.float64)[rank:]
    return float(np.sqrt(np.sum(tail * tail)))


@dataclass(frozen=True)
class RankPolicy:
    """Energy threshold tau in (0, 1] plus a hard cap on the kept rank."""

    tau: float = 0.95
    r_max: int = 8

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ParameterError(f"tau must be in (0, 1], got {self.tau}")
        if self.r_max < 1:
            raise ParameterError(f"r_max must be at least 1, got {self.r_max}")


def select_rank(sigma, policy: RankPolicy) -> int:
    """Smallest rank whose cumulative energy share reaches tau, capped at r_max.

    An all-zero spectrum keeps rank 1 (any rank is exact; 1 is the cheapest).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise ShapeError("sigma must be a non-empty vector")
    energy = np.cumsum(sigma * sigma)
    total = energy[-1]
    if total == 0.0:
        return 1
    # Dividing by the last cumulative sum makes the final ratio exactly 1.0,
    # so tau = 1.0 always terminates at the true numerical rank.
    r = int(np.searchsorted(energy / total, policy.tau)) + 1
    return min(r, policy.r_max, sigma.size)


@dataclass(frozen=True)
class TuckerFactors:
    """Tucker-2 factors: core (r_out, r_in, k, k), u1 (c_out, r_out), u2 (c_in, r_in)."""

    core: np.ndarray
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        core = np.asarray(self.core, dtype=np.float64)
        u1 = np.asarray(self.u1, dtype=np.float64)
        u2 = np.asarray(self.u2, dtype=np.float64)
        if core.ndim != 4:
            raise ShapeError(f"core must be 4-D, got {core.ndim}-D")
        if u1.ndim != 2 or u2.ndim != 2:
            raise ShapeError("factor matrices must be 2-D")
        if core.shape[0] != u1.shape[1] or core.shape[1] != u2.shape[1]:
            raise ShapeError("core dims do not match factor ranks")
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @property
    def r_out(self):
        return self.core.shape[0]

    @property
    def r_in(self):
        return self.core.shape[1]


def mode_n_multiply(t, a, mode: int) -> np.ndarray:
    """Mode-n product (1-based mode): contract axis ``mode`` of t with a's columns."""
    t = np.asarray(t, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.shape[1] != t.shape[mode - 1]:
        raise ShapeError(
            f"matrix with {a.shape[1]} columns cannot contract axis of size {t.shape[mode - 1]}"
        )
    dims = list(t.shape)
    dims[mode - 1] = a.shape[0]
    return mode_n_refold(a @ mode_n_unfold(t, mode), mode, dims)


def _leading_left_vectors(m, r: int) -> np.ndarray:
    # Full-matrices SVD so r may exceed min(m.shape): the extra columns come
    # from the orthonormal complement, keeping u at shape (rows, r) for any
    # legal mode rank. Sign-fixed per column for determinism.
    u = np.linalg.svd(m, full_matrices=True)[0][:, :r].copy()
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(col)
        if nz.size and col[nz[0]] < 0:
            u[:, j] = -col
    return u


def tucker2_decompose(w, r_out: int, r_in: int) -> TuckerFactors:
    """Tucker-2 of a (c_out, c_in, k, k) kernel bank via truncated HOSVD.

    Only the two channel modes are factored; spatial axes stay in the core.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 4:
        raise ShapeError(f"expected a 4-D kernel bank, got {w.ndim}-D")
    if not np.all(np.isfinite(w)):
        raise NumericError("tucker input contains non-finite values")
    c_out, c_in = w.shape[0], w.shape[1]
    if not 1 <= r_out <= c_out:
        raise ShapeError(f"r_out {r_out} out of range 1..{c_out}")
    if not 1 <= r_in <= c_in:
        raise ShapeError(f"r_in {r_in} out of range 1..{c_in}")
    u1 = _leading_left_vectors(mode_n_unfold(w, 1), r_out)
    u2 = _leading_left_vectors(mode_n_unfold(w, 2), r_in)
    core = mode_n_multiply(mode_n_multiply(w, u1.T, 1), u2.T, 2)
    return TuckerFactors(core=core, u1=u1, u2=u2)


def tucker2_reconstruct(f: TuckerFactors) -> np.ndarray:
    """Expand Tucker-2 factors back to the dense (c_out, c_in, k, k) bank."""
    return mode_n_multiply(mode_n_multiply(f.core, f.u1, 1), f.u2, 2)
