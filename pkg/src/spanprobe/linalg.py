"""Dense matrix and subspace primitives shared by the whole toolkit.

Everything here is pure and operates on validated float64 numpy arrays.
Numerical rank follows the relative singular-value convention (a singular
value counts iff it exceeds ``rel_threshold`` times the largest one).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

DEFAULT_RANK_THRESHOLD = 1e-5
ORTHONORMALITY_TOL = 1e-10


class RankDeficientWarning(UserWarning):
    """A least-squares system was numerically rank-deficient; the
    minimum-norm solution was returned."""


def as_matrix(a, name="matrix"):
    """Validate and convert to a 2-D float64 array (all entries finite)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(x, dim=None, name="vector"):
    """Validate and convert to a 1-D float64 array, optionally of fixed dim."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} has dimension {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class RankEstimate:
    """Numerical rank of a matrix together with the evidence behind it."""

    rank: int
    singular_values: np.ndarray
    threshold_used: float


@dataclass(frozen=True)
class Subspace:
    """A linear subspace of R^ambient_dim given by orthonormal basis rows."""

    ambient_dim: int
    basis: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != self.ambient_dim:
            raise ValueError(
                f"basis shape {b.shape} inconsistent with ambient dim {self.ambient_dim}"
            )
        if b.shape[0] > self.ambient_dim:
            raise ValueError("more basis vectors than ambient dimensions")
        gram = b @ b.T
        if b.shape[0] and np.max(np.abs(gram - np.eye(b.shape[0]))) > ORTHONORMALITY_TOL:
            raise ValueError("basis rows are not orthonormal")
        object.__setattr__(self, "basis", b)

    @classmethod
    def empty(cls, ambient_dim):
        return cls(ambient_dim, np.zeros((0, ambient_dim)))

    @property
    def dim(self):
        return self.basis.shape[0]


def numerical_rank(m, rel_threshold=DEFAULT_RANK_THRESHOLD):
    """Count singular values above ``rel_threshold`` times the largest.

    Deterministic for a fixed input; the returned estimate carries the full
    descending singular value array so callers can inspect the spectrum.
    """
    m = as_matrix(m)
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError(f"rel_threshold must lie in (0, 1), got {rel_threshold}")
    sv = np.linalg.svd(m, compute_uv=False)
    cutoff = rel_threshold * sv[0]
    rank = int(np.sum(sv > cutoff)) if sv[0] > 0 else 0
    return RankEstimate(rank=rank, singular_values=sv, threshold_used=rel_threshold)


def orthonormalize(vectors, drop_tol=1e-8):
    """Build an orthonormal Subspace spanning the given vectors.

    Vectors whose residual after projecting onto the running basis is at
    most ``drop_tol`` times their own norm are dropped as dependent.  Uses
    modified Gram-Schmidt with one re-orthogonalization pass per vector.
    """
    vecs = [as_vector(v, name="vector") for v in vectors]
    if not vecs:
        raise ValueError("need at least one vector")
    n = vecs[0].shape[0]
    rows = []
    for v in vecs:
        if v.shape[0] != n:
            raise ValueError(f"dimension mismatch: {v.shape[0]} != {n}")
        own = np.linalg.norm(v)
        r = v.copy()
        for q in rows:
            r -= (q @ r) * q
        for q in rows:
            r -= (q @ r) * q
        norm = np.linalg.norm(r)
        if own > 0 and norm > drop_tol * own:
            rows.append(r / norm)
    basis = np.array(rows) if rows else np.zeros((0, n))
    return Subspace(n, basis)


def project(s, x):
    """Orthogonal projection of x onto the subspace (idempotent)."""
    x = as_vector(x, dim=s.ambient_dim)
    return s.basis.T @ (s.basis @ x)


def row_space(m, rel_threshold=DEFAULT_RANK_THRESHOLD):
    """Orthonormal basis of the numerical row space of m."""
    m = as_matrix(m)
    sv, vt = np.linalg.svd(m, full_matrices=False)[1:]
    cutoff = rel_threshold * sv[0] if sv.size and sv[0] > 0 else 0.0
    rank = int(np.sum(sv > cutoff))
    return Subspace(m.shape[1], vt[:rank])


def kernel_basis(m):
    """Orthonormal basis of the numerical null space of m.

    The returned subspace has dimension cols - numerical_rank(m); every
    basis vector z satisfies ||m @ z|| <= 1e-8 * ||m||_F.
    """
    m = as_matrix(m)
    _, cols = m.shape
    sv, vt = np.linalg.svd(m, full_matrices=True)[1:]
    cutoff = DEFAULT_RANK_THRESHOLD * sv[0] if sv.size and sv[0] > 0 else 0.0
    rank = int(np.sum(sv > cutoff))
    return Subspace(cols, vt[rank:])


def _min_norm_solve(b_mat, b_vec):
    """Shared backend: minimum-norm solution of B^T y = b plus the rank
    numpy.lstsq assigned to the system."""
    b_mat = as_matrix(b_mat, name="b_mat")
    b_vec = as_vector(b_vec, dim=b_mat.shape[1], name="b_vec")
    y, _, rank, _ = np.linalg.lstsq(b_mat.T, b_vec, rcond=None)
    return y, int(rank)


def least_squares(b_mat, b_vec):
    """Minimum-norm minimizer of ||y^T B - b^T||_2.

    Equivalent to solving B^T y = b in the least-squares sense.  On a
    numerically rank-deficient system a RankDeficientWarning is emitted and
    the minimum-norm solution is still returned.
    """
    y, rank = _min_norm_solve(b_mat, b_vec)
    full = min(np.asarray(b_mat).shape)
    if rank < full:
        warnings.warn(
            f"rank-deficient system (rank {rank} < {full}); "
            "returning minimum-norm solution",
            RankDeficientWarning,
            stacklevel=2,
        )
    return y


def max_projection_defect(v, target):
    """Largest principal-angle sine between v and its shadow in target.

    Returns max over unit x in v of ||(I - P_target) x||, a value in [0, 1].
    Zero means v is contained in target; one means some direction of v is
    orthogonal to all of target.
    """
    if v.ambient_dim != target.ambient_dim:
        raise ValueError(
            f"ambient dims differ: {v.ambient_dim} != {target.ambient_dim}"
        )
    if v.dim == 0:
        return 0.0
    residual = v.basis - (v.basis @ target.basis.T) @ target.basis
    defect = float(np.linalg.svd(residual, compute_uv=False)[0])
    return min(defect, 1.0)
