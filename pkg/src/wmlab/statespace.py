"""Discrete-time LTI state-space algebra.

Systems are quadruples (A, B, C, D) for

    x[k+1] = A x[k] + B u[k]
    y[k]   = C x[k] + D u[k]

with n states, m inputs, p outputs; n = 0 (pure feedthrough) is allowed.
All operations are pure functions and `StateSpace` values are immutable,
so they are safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

D_COND_LIMIT = 1e12      # refuse to invert a feedthrough worse conditioned than this
STABILITY_MARGIN = 1e-9  # spectral radius must stay below 1 - STABILITY_MARGIN
PENCIL_BETA_TOL = 1e-10  # |beta| below this marks an infinite generalized eigenvalue
POLE_EVAL_TOL = 1e-9     # minimum distance of an evaluation point from a pole
RANK_SV_TOL = 1e-8       # singular-value cutoff for pencil rank decisions


class DimensionMismatch(ValueError):
    """Matrix shapes are mutually inconsistent."""


class NonFiniteEntry(ValueError):
    """A system matrix contains NaN or Inf."""


class NonSquare(ValueError):
    """Operation requires equally many inputs and outputs."""


class NonInvertibleFeedthrough(ValueError):
    """D is singular or too ill-conditioned to invert."""


class PoleAtEvaluationPoint(ValueError):
    """Transfer function evaluated at (or too close to) a pole."""


def _as_matrix(x) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class StateSpace:
    """Immutable discrete-time LTI system."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> dict:
        """JSON-serializable form: row-major nested lists under A, B, C, D."""
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpace":
        return make_statespace(d["A"], d["B"], d["C"], d["D"])

    def __repr__(self) -> str:
        return f"StateSpace(n={self.n}, m={self.m}, p={self.p})"


def make_statespace(A, B, C, D) -> StateSpace:
    """Validate and build a StateSpace; raises on shape or finiteness defects."""
    A, B, C, D = map(_as_matrix, (A, B, C, D))
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    m = B.shape[1]
    p = C.shape[0]
    if B.shape != (n, m):
        raise DimensionMismatch(f"B is {B.shape}, expected ({n}, {m})")
    if C.shape != (p, n):
        raise DimensionMismatch(f"C is {C.shape}, expected ({p}, {n})")
    if D.shape != (p, m):
        raise DimensionMismatch(f"D is {D.shape}, expected ({p}, {m})")
    for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
        if M.size and not np.all(np.isfinite(M)):
            raise NonFiniteEntry(f"{name} contains NaN or Inf")
    return StateSpace(A, B, C, D)


def identity_system(m: int) -> StateSpace:
    """Static identity: zero states, D = I."""
    return make_statespace(
        np.zeros((0, 0)), np.zeros((0, m)), np.zeros((m, 0)), np.eye(m)
    )


def static_system(D) -> StateSpace:
    """Pure feedthrough system with the given D."""
    D = _as_matrix(D)
    p, m = D.shape
    return make_statespace(np.zeros((0, 0)), np.zeros((0, m)), np.zeros((p, 0)), D)


def series(s2: StateSpace, s1: StateSpace) -> StateSpace:
    """Cascade s1 -> s2; transfer function G2(z) G1(z), state stacked [x2; x1]."""
    if s1.p != s2.m:
        raise DimensionMismatch(
            f"series: s1 has {s1.p} outputs but s2 expects {s2.m} inputs"
        )
    A = np.block(
        [
            [s2.A, s2.B @ s1.C],
            [np.zeros((s1.n, s2.n)), s1.A],
        ]
    )
    B = np.vstack([s2.B @ s1.D, s1.B])
    C = np.hstack([s2.C, s2.D @ s1.C])
    D = s2.D @ s1.D
    return make_statespace(A, B, C, D)


def parallel_sub(s1: StateSpace, s2: StateSpace) -> StateSpace:
    """Signal difference y = y1 - y2 of two systems sharing the input."""
    if s1.m != s2.m or s1.p != s2.p:
        raise DimensionMismatch("parallel_sub: input/output dimensions must match")
    A = scipy.linalg.block_diag(s1.A, s2.A)
    B = np.vstack([s1.B, s2.B])
    C = np.hstack([s1.C, -s2.C])
    D = s1.D - s2.D
    return make_statespace(A, B, C, D)


def invert(s: StateSpace) -> StateSpace:
    """Exact state-space inverse (A - B D^-1 C, -B D^-1, D^-1 C, D^-1).

    Requires a square system with well-conditioned D; series(invert(s), s)
    has identity transfer function.
    """
    if s.p != s.m:
        raise NonSquare(f"cannot invert a {s.p}x{s.m} system")
    if s.m == 0:
        return s
    if not np.isfinite(np.linalg.cond(s.D)) or np.linalg.cond(s.D) > D_COND_LIMIT:
        raise NonInvertibleFeedthrough(
            f"D condition number exceeds {D_COND_LIMIT:g}"
        )
    Di = np.linalg.inv(s.D)
    return make_statespace(s.A - s.B @ Di @ s.C, -s.B @ Di, Di @ s.C, Di)


def eval_tf(s: StateSpace, z: complex) -> np.ndarray:
    """Transfer function C (zI - A)^-1 B + D at a point z, as a complex p x m matrix."""
    if s.n == 0:
        return s.D.astype(complex)
    eigs = np.linalg.eigvals(s.A)
    if np.min(np.abs(eigs - z)) < POLE_EVAL_TOL:
        raise PoleAtEvaluationPoint(f"z={z} is within {POLE_EVAL_TOL:g} of a pole")
    zIA = z * np.eye(s.n) - s.A
    return s.C @ np.linalg.solve(zIA, s.B.astype(complex)) + s.D


def poles(s: StateSpace) -> np.ndarray:
    """Eigenvalues of A, multiplicity preserved; empty for feedthrough systems."""
    if s.n == 0:
        return np.zeros(0, dtype=complex)
    return np.linalg.eigvals(s.A)


def zeros(s: StateSpace) -> np.ndarray:
    """Finite transmission zeros of a square system.

    Computed as the finite generalized eigenvalues of the Rosenbrock pencil
    [zI - A, -B; C, D]; pairs with |beta| < PENCIL_BETA_TOL (infinite or
    indeterminate) are dropped.  Assumes a regular pencil; use
    pencil_normal_rank to detect degenerate channels first.
    """
    if s.p != s.m:
        raise NonSquare(f"zeros requires a square system, got {s.p}x{s.m}")
    if s.n == 0:
        return np.zeros(0, dtype=complex)
    M = np.block([[s.A, s.B], [s.C, s.D]])
    N = np.block(
        [
            [np.eye(s.n), np.zeros((s.n, s.m))],
            [np.zeros((s.m, s.n)), np.zeros((s.m, s.m))],
        ]
    )
    ab = scipy.linalg.eig(M, N, right=False, homogeneous_eigvals=True)
    alpha, beta = ab[0], ab[1]
    finite = np.abs(beta) >= PENCIL_BETA_TOL
    return (alpha[finite] / beta[finite]).astype(complex)


def is_stable(s: StateSpace) -> bool:
    """Schur stability: spectral radius strictly below 1 - STABILITY_MARGIN."""
    if s.n == 0:
        return True
    return bool(np.max(np.abs(np.linalg.eigvals(s.A))) < 1.0 - STABILITY_MARGIN)


def is_controllable(A, B) -> bool:
    """Rank test on the controllability matrix [B, AB, ..., A^{n-1} B]."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    n = A.shape[0]
    if n == 0:
        return True
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks))) == n


def is_observable(C, A) -> bool:
    """Rank test on the observability matrix, by duality with controllability."""
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    return is_controllable(A.T, C.T)


@dataclass(frozen=True)
class FrequencyGrid:
    """Evaluation frequencies in rad/s for a sampled system, within the Nyquist band."""

    sample_period: float
    omegas: np.ndarray

    def __post_init__(self):
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        om = np.asarray(self.omegas, dtype=float)
        om = om.copy()
        om.flags.writeable = False
        object.__setattr__(self, "omegas", om)
        if om.ndim != 1 or om.size == 0:
            raise ValueError("omegas must be a nonempty 1-D array")
        if np.any(np.diff(om) <= 0):
            raise ValueError("omegas must be strictly ascending")
        nyquist = np.pi / self.sample_period
        if om[0] < 0 or om[-1] > nyquist * (1 + 1e-12):
            raise ValueError(f"omegas must lie in [0, {nyquist:g}] rad/s")

    @classmethod
    def default(cls, sample_period: float, npoints: int = 512) -> "FrequencyGrid":
        return cls(sample_period, np.linspace(0.0, np.pi / sample_period, npoints))


def sv_sweep(s: StateSpace, grid: FrequencyGrid) -> np.ndarray:
    """Singular values of the frequency response on the unit circle.

    Returns an array of shape (len(omegas), min(p, m)), descending per row.
    Raises PoleAtEvaluationPoint if a pole sits on the unit circle at a
    grid frequency.
    """
    out = np.empty((grid.omegas.size, min(s.p, s.m)))
    for i, w in enumerate(grid.omegas):
        z = np.exp(1j * w * grid.sample_period)
        out[i] = np.linalg.svd(eval_tf(s, z), compute_uv=False)
    return out


# -- Rosenbrock pencil utilities -------------------------------------------
#
# The pencil of the channel (A, B, C, D) is  P(lam) = [lam I - A, -B; C, D],
# of shape (n+p) x (n+m).  Its rank behaviour drives the transmission-zero,
# boundedness and undetectability tests.


def pencil_at(A, B, C, D, lam: complex) -> np.ndarray:
    n = A.shape[0]
    return np.block([[lam * np.eye(n) - A, -B], [C, D]]).astype(complex)


def _rank(M: np.ndarray, tol: float = RANK_SV_TOL) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * max(1.0, sv[0])))


def pencil_normal_rank(A, B, C, D, nsamples: int = 8, seed: int = 24243) -> int:
    """Generic rank of the pencil, estimated at random complex sample points."""
    rng = np.random.default_rng(seed)
    best = 0
    for _ in range(nsamples):
        lam = rng.normal(scale=1.5) + 1j * rng.normal(scale=1.5)
        best = max(best, _rank(pencil_at(A, B, C, D, lam)))
    return best


def pencil_null_directions(A, B, C, D, lam: complex) -> tuple[np.ndarray, int]:
    """Null-space basis of the pencil at lam as columns [x_bar; u_bar], plus its rank."""
    P = pencil_at(A, B, C, D, lam)
    U, sv, Vh = np.linalg.svd(P)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    rank = int(np.sum(sv > RANK_SV_TOL * max(1.0, scale)))
    ns = Vh.conj().T[:, rank:]
    return ns, rank


def pencil_zero_candidates(A, B, C, D, seed: int = 97531) -> np.ndarray:
    """Finite lambdas at which the channel pencil may lose column rank.

    Square pencils go through QZ directly.  Tall pencils are compressed with
    a random left factor (seeded, hence deterministic) before QZ, and each
    candidate is verified against the original pencil's rank.  Wide pencils
    have no isolated zeros (their kernel is nonempty at every lam) and
    return an empty array; callers detect that case via pencil_normal_rank.
    """
    n, m = A.shape[0], B.shape[1]
    p = C.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    M = np.block([[A, B], [C, D]])
    N = np.block(
        [[np.eye(n), np.zeros((n, m))], [np.zeros((p, n)), np.zeros((p, m))]]
    )
    if p == m:
        ab = scipy.linalg.eig(M, N, right=False, homogeneous_eigvals=True)
        alpha, beta = ab[0], ab[1]
        keep = (np.abs(beta) >= PENCIL_BETA_TOL) & np.isfinite(alpha)
        return (alpha[keep] / beta[keep]).astype(complex)
    if p < m:
        return np.zeros(0, dtype=complex)
    # tall: left-multiply by a random (n+m) x (n+p) matrix, then verify
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((n + m, n + p))
    ab = scipy.linalg.eig(T @ M, T @ N, right=False, homogeneous_eigvals=True)
    alpha, beta = ab[0], ab[1]
    keep = (np.abs(beta) >= PENCIL_BETA_TOL) & np.isfinite(alpha)
    cands = (alpha[keep] / beta[keep]).astype(complex)
    normal = pencil_normal_rank(A, B, C, D)
    verified = [lam for lam in cands if _rank(pencil_at(A, B, C, D, lam)) < normal]
    return np.asarray(verified, dtype=complex)
