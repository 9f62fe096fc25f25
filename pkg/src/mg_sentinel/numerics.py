"""Dense linear algebra, subspace arithmetic, pole placement and RK4."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.signal

from .errors import DimensionError, IntegrationError, PlacementError, SynthesisError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]
Derivative = Callable[[float, FloatArray], FloatArray]

# Singular values below RANK_TOL * sigma_max count as zero
RANK_TOL = 1e-10
ORTHONORMAL_TOL = 1e-10


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis of a subspace of R^n.

    Attributes:
        vectors: Array of shape (ambient_dim, dim) whose columns are the basis.
    """

    vectors: FloatArray

    def __post_init__(self) -> None:
        """Check shape and orthonormality of the columns."""
        if self.vectors.ndim != 2:
            raise DimensionError("basis vectors must be a 2-D column array")
        gram = self.vectors.T @ self.vectors
        if not np.allclose(gram, np.eye(self.dim), atol=ORTHONORMAL_TOL * 100):
            raise DimensionError("basis vectors are not orthonormal")

    @property
    def ambient_dim(self) -> int:
        """Dimension of the surrounding space."""
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        """Number of basis vectors."""
        return int(self.vectors.shape[1])

    @property
    def is_empty(self) -> bool:
        """True for the zero subspace."""
        return self.dim == 0

    def projector(self) -> FloatArray:
        """Orthogonal projector onto the subspace."""
        return self.vectors @ self.vectors.T

    def contains(self, x: FloatArray, tol: float = 1e-9) -> bool:
        """Check whether every column of ``x`` lies in the span."""
        x = np.atleast_2d(np.asarray(x, dtype=float).T).T
        resid = x - self.projector() @ x
        scale = max(1.0, float(np.max(np.abs(x), initial=0.0)))
        return bool(np.max(np.abs(resid), initial=0.0) <= tol * scale)

    @classmethod
    def empty(cls, n: int) -> "SubspaceBasis":
        """Zero subspace of R^n."""
        return cls(np.zeros((n, 0)))

    @classmethod
    def full(cls, n: int) -> "SubspaceBasis":
        """All of R^n."""
        return cls(np.eye(n))

    @classmethod
    def span(cls, columns: npt.ArrayLike) -> "SubspaceBasis":
        """Orthonormal basis for the column span of ``columns``."""
        m = np.asarray(columns, dtype=float)
        if m.ndim == 1:
            m = m.reshape(-1, 1)
        if m.shape[1] == 0 or not np.any(m):
            return cls.empty(m.shape[0])
        return cls(scipy.linalg.orth(m, rcond=RANK_TOL))


def as_matrix(m: npt.ArrayLike, name: str = "matrix") -> FloatArray:
    """Convert to a finite 2-D float array."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} has non-finite entries")
    return arr


def _square(m: npt.ArrayLike, name: str) -> FloatArray:
    arr = np.asarray(m)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def eigenvalues(m: npt.ArrayLike) -> ComplexArray:
    """All eigenvalues of a square matrix, sorted by (real, imag)."""
    arr = _square(m, "matrix")
    if arr.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    vals = scipy.linalg.eigvals(arr).astype(complex)
    order = np.lexsort((vals.imag, vals.real))
    return vals[order]


def spectral_abscissa(m: npt.ArrayLike) -> float:
    """Largest real part of the spectrum."""
    vals = eigenvalues(m)
    return float(np.max(vals.real)) if vals.size else -np.inf


def kernel_basis(m: npt.ArrayLike) -> SubspaceBasis:
    """Orthonormal basis of the null space of ``m``."""
    arr = as_matrix(m)
    n = arr.shape[1]
    if arr.shape[0] == 0 or not np.any(arr):
        return SubspaceBasis.full(n)
    return SubspaceBasis(scipy.linalg.null_space(arr, rcond=RANK_TOL))


def subspace_sum(u: SubspaceBasis, v: SubspaceBasis) -> SubspaceBasis:
    """Basis of span(u) + span(v)."""
    _same_ambient(u, v)
    return SubspaceBasis.span(np.hstack([u.vectors, v.vectors]))


def subspace_intersect(u: SubspaceBasis, v: SubspaceBasis) -> SubspaceBasis:
    """Basis of span(u) ∩ span(v) via the kernel of [U, -V]."""
    _same_ambient(u, v)
    if u.is_empty or v.is_empty:
        return SubspaceBasis.empty(u.ambient_dim)
    coeffs = kernel_basis(np.hstack([u.vectors, -v.vectors]))
    if coeffs.is_empty:
        return SubspaceBasis.empty(u.ambient_dim)
    return SubspaceBasis.span(u.vectors @ coeffs.vectors[: u.dim])


def preimage(a: npt.ArrayLike, s: SubspaceBasis) -> SubspaceBasis:
    """Basis of {x : A x ∈ span(s)}."""
    arr = as_matrix(a, "a")
    if arr.shape[0] != s.ambient_dim:
        raise DimensionError("preimage target lives in a different space")
    complement = np.eye(s.ambient_dim) - s.projector()
    return kernel_basis(complement @ arr)


def _columns(b: npt.ArrayLike, n: int) -> FloatArray:
    arr = np.asarray(b, dtype=float)
    if arr.size == 0:
        return np.zeros((n, 0))
    return arr.reshape(n, -1)


def spectrum_distance(achieved: npt.ArrayLike, desired: npt.ArrayLike) -> float:
    """Largest distance after greedily pairing two multisets of eigenvalues."""
    left = list(np.asarray(achieved, dtype=complex))
    worst = 0.0
    for pole in np.asarray(desired, dtype=complex):
        if not left:
            return np.inf
        gaps = [abs(pole - q) for q in left]
        i = int(np.argmin(gaps))
        worst = max(worst, gaps[i])
        left.pop(i)
    return worst if not left else np.inf


def _same_ambient(u: SubspaceBasis, v: SubspaceBasis) -> None:
    if u.ambient_dim != v.ambient_dim:
        raise DimensionError(
            f"ambient dimensions differ: {u.ambient_dim} vs {v.ambient_dim}"
        )


def unobservable_subspace(a: npt.ArrayLike, c: npt.ArrayLike) -> SubspaceBasis:
    """Unobservable subspace of the pair (C, A).

    Computed as the largest A-invariant subspace inside ker C, which equals
    the intersection of ker(C A^k) for k < n without forming matrix powers.
    """
    arr = as_matrix(a, "a")
    n = _square(arr, "a").shape[0]
    cmat = as_matrix(c, "c")
    if cmat.shape[1] != n:
        raise DimensionError(f"c has {cmat.shape[1]} columns, expected {n}")
    return max_controlled_invariant(arr, np.zeros((n, 0)), kernel_basis(cmat))


def max_controlled_invariant(
    a: npt.ArrayLike, b: npt.ArrayLike, k: SubspaceBasis
) -> SubspaceBasis:
    """Largest (A, B)-controlled invariant subspace contained in ``k``.

    Runs V_0 = K, V_{i+1} = K ∩ A^{-1}(V_i + Im B) to its fixed point.
    """
    arr = as_matrix(a, "a")
    n = _square(arr, "a").shape[0]
    bmat = _columns(b, n)
    if k.ambient_dim != n:
        raise DimensionError("k must live in the state space of a")
    image_b = SubspaceBasis.span(bmat) if bmat.shape[1] else SubspaceBasis.empty(n)

    current = k
    for step in range(n + 1):
        if current.is_empty:
            break
        nxt = subspace_intersect(k, preimage(arr, subspace_sum(current, image_b)))
        logger.debug("ISA step %d: dim %d -> %d", step, current.dim, nxt.dim)
        if nxt.dim == current.dim:
            return nxt
        current = nxt
    return current


def weakly_unobservable_subspace(
    a: npt.ArrayLike, b: npt.ArrayLike, c: npt.ArrayLike, d: npt.ArrayLike
) -> SubspaceBasis:
    """States from which some input keeps y = Cx + Dw identically zero.

    Fixed point of V_{i+1} = {x : ∃w, Ax + Bw ∈ V_i and Cx + Dw = 0}.
    """
    arr = as_matrix(a, "a")
    n = _square(arr, "a").shape[0]
    bmat = _columns(b, n)
    cmat = as_matrix(c, "c")
    dmat = np.asarray(d, dtype=float).reshape(cmat.shape[0], bmat.shape[1])
    current = SubspaceBasis.full(n)
    for _ in range(n + 1):
        complement = np.eye(n) - current.projector()
        stacked = np.vstack(
            [
                np.hstack([complement @ arr, complement @ bmat]),
                np.hstack([cmat, dmat]),
            ]
        )
        joint = kernel_basis(stacked)
        if joint.is_empty:
            nxt = SubspaceBasis.empty(n)
        else:
            nxt = SubspaceBasis.span(joint.vectors[:n])
        if nxt.dim == current.dim:
            return nxt
        current = nxt
        if current.is_empty:
            break
    return current


def invariant_friend(
    a: npt.ArrayLike,
    b_a: npt.ArrayLike,
    v: SubspaceBasis,
    rate: float | None = None,
    c: npt.ArrayLike | None = None,
    d: npt.ArrayLike | None = None,
) -> FloatArray:
    """Friend Q with (A + B_a Q) V ⊆ V.

    Args:
        a: State matrix (n×n).
        b_a: Attack input matrix (n×m).
        v: Nonempty subspace to render invariant.
        rate: Optional target eigenvalue for the restricted dynamics; the
            free part of Q is chosen by least squares to approach rate·I.
        c: Optional output matrix; with ``d`` also enforces (C + D Q) V = 0.
        d: Optional feedthrough of the attack channels into the output.

    Returns:
        Q of shape (m, n), zero on the orthogonal complement of V.

    Raises:
        SynthesisError: If invariance cannot be met to 1e-6.
    """
    arr = as_matrix(a, "a")
    n = _square(arr, "a").shape[0]
    bmat = _columns(b_a, n)
    if v.is_empty:
        raise SynthesisError("cannot build a friend for the zero subspace")
    if v.ambient_dim != n:
        raise DimensionError("subspace does not live in the state space of a")

    basis = v.vectors
    complement = np.eye(n) - v.projector()
    lhs = complement @ bmat
    rhs = -complement @ arr @ basis
    if c is not None and d is not None:
        cmat = as_matrix(c, "c")
        dmat = np.asarray(d, dtype=float).reshape(cmat.shape[0], bmat.shape[1])
        lhs = np.vstack([lhs, dmat])
        rhs = np.vstack([rhs, -cmat @ basis])

    x_p, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    residual = float(np.linalg.norm(lhs @ x_p - rhs))
    scale = max(1.0, float(np.linalg.norm(arr @ basis)))
    if residual > 1e-6 * scale:
        raise SynthesisError(
            f"subspace cannot be made invariant (residual {residual:.3g})"
        )

    x = x_p
    if rate is not None:
        free = kernel_basis(lhs) if lhs.size else SubspaceBasis.full(bmat.shape[1])
        if not free.is_empty:
            g = basis.T @ bmat @ free.vectors
            target = rate * np.eye(v.dim) - basis.T @ (arr @ basis + bmat @ x_p)
            y, *_ = np.linalg.lstsq(g, target, rcond=None)
            x = x_p + free.vectors @ y
    return np.asarray(x @ basis.T, dtype=float)


def controllability_matrix(a: npt.ArrayLike, b: npt.ArrayLike) -> FloatArray:
    """[B, AB, ..., A^{n-1}B]."""
    arr = as_matrix(a, "a")
    n = arr.shape[0]
    bmat = _columns(b, n)
    blocks = [bmat]
    for _ in range(1, n):
        blocks.append(arr @ blocks[-1])
    return np.hstack(blocks)


def _check_conjugate_closed(desired: ComplexArray) -> None:
    remaining = list(desired)
    while remaining:
        pole = remaining.pop(0)
        if abs(pole.imag) <= 1e-12 * max(1.0, abs(pole)):
            continue
        match = [i for i, q in enumerate(remaining) if np.isclose(q, np.conj(pole))]
        if not match:
            raise PlacementError(f"pole {pole} has no conjugate partner")
        remaining.pop(match[0])


def _acker_observer(a: FloatArray, c: FloatArray, desired: ComplexArray) -> FloatArray:
    # Ackermann on the dual pair (A^T, c^T)
    n = a.shape[0]
    ct = controllability_matrix(a.T, c.T)
    if np.linalg.matrix_rank(ct) != n:
        raise PlacementError("pair (A, C) is not observable; cannot place poles")
    p = np.real(np.poly(desired))
    pmat = np.zeros_like(a)
    power = np.eye(n)
    for coeff in p[::-1]:
        pmat = pmat + coeff * power
        power = power @ a.T
    k = np.linalg.solve(ct, pmat)[-1, :]
    return k.reshape(n, 1)


def place_poles(
    a: npt.ArrayLike, c: npt.ArrayLike, desired: Sequence[complex]
) -> FloatArray:
    """Output injection gain L with eig(A − L C) equal to ``desired``.

    The state is balanced first and C is reduced to an orthonormal basis of
    its row space. Single-output problems use Ackermann's formula, the rest
    scipy's robust Yang-Tits placement on the dual pair.
    """
    arr = as_matrix(a, "a")
    n = _square(arr, "a").shape[0]
    cmat = as_matrix(c, "c")
    if cmat.shape[1] != n:
        raise DimensionError(f"c has {cmat.shape[1]} columns, expected {n}")
    poles = np.asarray(desired, dtype=complex)
    if poles.size != n:
        raise PlacementError(f"need {n} poles, got {poles.size}")
    _check_conjugate_closed(poles)

    # Balance the state coordinates: a_b = T^-1 a T
    a_b, (scale, _) = scipy.linalg.matrix_balance(arr, permute=False, separate=True)
    c_b = cmat * scale[None, :]

    # Row-space reduction: c_r = T_r c_b
    u, s, _ = np.linalg.svd(c_b, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    if rank == 0:
        raise PlacementError("output matrix is zero; nothing to place with")
    t_r = (u[:, :rank] / s[:rank]).T
    c_r = t_r @ c_b

    if rank == 1:
        l_r = _acker_observer(a_b, c_r, poles)
    else:
        try:
            result = scipy.signal.place_poles(a_b.T, c_r.T, poles, method="YT")
        except ValueError as e:
            raise PlacementError(str(e)) from e
        l_r = result.gain_matrix.T
    gain = scale[:, None] * (l_r @ t_r)

    spread = spectrum_distance(eigenvalues(arr - gain @ cmat), poles)
    if spread > 1e-3 * max(1.0, float(np.max(np.abs(poles)))):
        raise PlacementError(f"requested spectrum not reached (deviation {spread:.3g})")
    logger.debug("placed %d poles, max deviation %.3g", n, spread)
    return np.asarray(gain, dtype=float)


def rk4_step(f: Derivative, state: FloatArray, t: float, dt: float) -> FloatArray:
    """One classical fourth-order Runge-Kutta step of x' = f(t, x)."""
    if dt <= 0:
        raise IntegrationError("step size must be positive", t)
    k1 = f(t, state)
    k2 = f(t + dt / 2, state + dt / 2 * k1)
    k3 = f(t + dt / 2, state + dt / 2 * k2)
    k4 = f(t + dt, state + dt * k3)
    nxt = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(nxt)):
        raise IntegrationError("non-finite stage value", t)
    return nxt
