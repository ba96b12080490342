"""Dense real-matrix kernels: exponentials, Lyapunov solves, cost integrals,
pseudoinverses and the isometric symmetric vectorisation."""
import numpy as np

from . import kernels
from .errors import DimensionError, NumericalError, RankError, StabilityError

HURWITZ_MARGIN = 1e-9


def as_matrix(M, name="matrix"):
    """Validate ``M`` as a finite 2-D float array and return it."""
    arr = np.array(M, dtype=float, ndmin=2, copy=True)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} has non-finite entries")
    return arr


def _square(M, name="matrix"):
    arr = as_matrix(M, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def expm(M):
    """Matrix exponential by scaling and squaring with Pade approximation."""
    return kernels.pade_expm(np.ascontiguousarray(_square(M)))


def spectral_abscissa(M):
    """Largest real part over the eigenvalues of ``M``."""
    M = _square(M)
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(eig.real))


def is_hurwitz(M, margin=HURWITZ_MARGIN):
    return spectral_abscissa(M) < -margin


def _require_hurwitz(A, margin):
    alpha = spectral_abscissa(A)
    if not alpha < -margin:
        raise StabilityError(f"matrix is not Hurwitz (spectral abscissa {alpha:.3e})",
                             abscissa=alpha)


def solve_lyap_dual(A, W, margin=HURWITZ_MARGIN):
    """Solve ``A^T X + X A + W = 0`` for symmetric ``X``.

    Uses the Kronecker form ``(I (x) A^T + A^T (x) I) vec X = -vec W`` with one
    step of iterative refinement; intended for n up to a few dozen.
    """
    A = _square(A, "A")
    W = _square(W, "W")
    if W.shape != A.shape:
        raise DimensionError(f"W shape {W.shape} does not match A shape {A.shape}")
    if not np.allclose(W, W.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(W).max())):
        raise DimensionError("W must be symmetric")
    _require_hurwitz(A, margin)
    n = A.shape[0]
    ident = np.eye(n)
    op = np.kron(ident, A.T) + np.kron(A.T, ident)
    try:
        lu_rhs = -W.reshape(-1, order="F")
        x = np.linalg.solve(op, lu_rhs)
        resid = lu_rhs - op @ x
        x = x + np.linalg.solve(op, resid)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Lyapunov operator is singular: {exc}") from exc
    X = x.reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def solve_lyap_primal(A, W, margin=HURWITZ_MARGIN):
    """Solve ``A Y + Y A^T + W = 0``; ``W`` need not be PSD."""
    A = _square(A, "A")
    return solve_lyap_dual(A.T, W, margin=margin)


def cost_integral_block(A, W, t):
    """``int_0^t exp(A^T s) W exp(A s) ds`` by the Van Loan block exponential.

    Long horizons are split into power-of-two substeps so the
    ``exp(-A^T h)`` corner never grows large; ``A`` need not be Hurwitz.
    """
    A = _square(A, "A")
    W = _square(W, "W")
    if t < 0:
        raise ValueError(f"duration must be nonnegative, got {t}")
    _, G = kernels.integral_block(np.ascontiguousarray(A), np.ascontiguousarray(W), float(t))
    return G


def pinv_tall(F, tol=1e-12):
    """Left pseudoinverse ``(F^T F)^{-1} F^T`` of a full-column-rank matrix.

    Computed from the thin SVD.  ``tol`` is relative to the largest singular
    value; rank deficiency raises :class:`RankError` carrying the smallest
    singular value.
    """
    F = as_matrix(F, "F")
    rows, cols = F.shape
    if rows < cols:
        raise DimensionError(f"F must have rows >= cols, got {F.shape}")
    U, s, Vt = np.linalg.svd(F, full_matrices=False)
    smin = float(s[-1]) if s.size else 0.0
    if s.size == 0 or smin <= tol * s[0]:
        raise RankError(f"F is column rank deficient (smallest singular value {smin:.3e})",
                        smallest_singular_value=smin)
    return (Vt.T / s) @ U.T


def sym_dim(d):
    return d * (d + 1) // 2


def sym_vec(S):
    """Upper triangle of symmetric ``S`` row by row, off-diagonals times sqrt(2).

    The scaling makes ``dot(sym_vec(S1), sym_vec(S2)) == <S1, S2>_F``.
    """
    S = _square(S, "S")
    scale = max(1.0, float(np.abs(S).max())) if S.size else 1.0
    if np.abs(S - S.T).max(initial=0.0) > 1e-12 * scale:
        raise DimensionError("sym_vec requires a symmetric matrix")
    iu, ju = np.triu_indices(S.shape[0])
    v = S[iu, ju].copy()
    v[iu != ju] *= np.sqrt(2.0)
    return v


def sym_unvec(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError("sym_unvec expects a vector")
    d = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if sym_dim(d) != v.size:
        raise DimensionError(f"length {v.size} is not a triangular number")
    iu, ju = np.triu_indices(d)
    vals = v.copy()
    vals[iu != ju] /= np.sqrt(2.0)
    S = np.zeros((d, d))
    S[iu, ju] = vals
    S[ju, iu] = vals
    return S


def sym_vec_outer_rows(Y):
    """Rows ``sym_vec(y y^T)`` for every row ``y`` of ``Y`` (no symmetry check)."""
    Y = np.asarray(Y, dtype=float)
    d = Y.shape[1]
    iu, ju = np.triu_indices(d)
    rows = Y[:, iu] * Y[:, ju]
    rows[:, iu != ju] *= np.sqrt(2.0)
    return rows
