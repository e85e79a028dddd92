"""Output-to-output l2-gain: SDP computation, certificates, boundedness and
undetectability tests.

The gain gamma* is the worst-case ratio of performance-output energy to
residual energy over attacks starting from rest.  It is computed by
minimizing gamma subject to a storage-matrix LMI; boundedness is decided
first from the zero structure of the residual channel, since no SDP solver
can certify an unbounded value.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from . import lmi
from .statespace import (
    RANK_SV_TOL,
    _rank,
    eval_tf,
    is_controllable,
    is_observable,
    make_statespace,
    pencil_at,
    pencil_normal_rank,
    pencil_null_directions,
    pencil_zero_candidates,
)
from .systems import ClosedLoop, Plant, WatermarkPair, assemble_attack_channel

GAMMA_CAP = 1e9
RESIDUAL_TOL = 1e-6
UNSTABLE_RADIUS = 1.0  # closed unit disk complement counts as unstable


class OogStatus(enum.Enum):
    OPTIMAL = "Optimal"
    UNBOUNDED = "Unbounded"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


class Boundedness(enum.Enum):
    BOUNDED = "Bounded"
    UNBOUNDED_BY_ZEROS = "UnboundedByZeros"
    UNBOUNDED_BY_FEEDTHROUGH = "UnboundedByFeedthrough"


@dataclass(frozen=True)
class OogCertificate:
    """Gain value with its storage-matrix evidence.

    delay_steps > 0 records that the certificate lives on the loop whose
    performance output is delayed by that many samples (an l2-isometry, so
    the gain is the same number); P then has the augmented dimension.
    """

    gamma: float
    P: np.ndarray | None
    status: OogStatus
    residual: float | None = None
    delay_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "gamma": None if not np.isfinite(self.gamma) else float(self.gamma),
            "P": None if self.P is None else np.asarray(self.P).tolist(),
            "status": self.status.value,
            "residual": self.residual,
            "delay_steps": self.delay_steps,
        }


def _channel_blocks(loop: ClosedLoop):
    ss = loop.ss
    return ss.A, ss.B, loop.C1, loop.D1, loop.C2, loop.D2


def dissipation_matrix(A, B, C1, D1, C2, D2, gamma, P):
    """Storage inequality matrix: R(P) - gamma E1'E1 + E2'E2 with
    R(P) = [[A'PA - P, A'PB], [B'PA, B'PB]].  Nonpositive-definite iff
    (gamma, P) certifies the gain bound."""
    E1 = np.hstack([C1, D1])
    E2 = np.hstack([C2, D2])
    R = cp.bmat([[A.T @ P @ A - P, A.T @ P @ B], [B.T @ P @ A, B.T @ P @ B]]) \
        if isinstance(P, cp.Expression) else \
        np.block([[A.T @ P @ A - P, A.T @ P @ B], [B.T @ P @ A, B.T @ P @ B]])
    return R - gamma * (E1.T @ E1) + E2.T @ E2


def verify_dissipativity(loop: ClosedLoop, gamma: float, P, delay_steps: int = 0) -> float:
    """Largest eigenvalue of the substituted storage inequality; <= 0 passes.

    With delay_steps > 0 the check is performed on the loop whose performance
    output is delayed accordingly, matching certificates produced that way.
    """
    A, B, C1, D1, C2, D2 = _channel_blocks(loop)
    if delay_steps:
        A, B, C1, C2 = delay_performance(A, B, C1, C2, delay_steps)
        D2 = np.zeros_like(D2)
    M = dissipation_matrix(A, B, C1, D1, C2, D2, float(gamma), np.asarray(P, float))
    return lmi.psd_residual(M)


def first_response_index(C, A, B, tol: float = 1e-9) -> int | None:
    """Smallest k with C A^k B != 0, or None when the channel never responds.

    By Cayley-Hamilton, n consecutive zero samples imply the impulse response
    is identically zero, so the search stops at k = n.
    """
    A = np.asarray(A, float)
    C = np.asarray(C, float)
    B = np.asarray(B, float)
    scale = max(1.0, np.abs(C).max(initial=0.0) * np.abs(B).max(initial=0.0))
    X = B.copy()
    for k in range(A.shape[0] + 1):
        if np.abs(C @ X).max(initial=0.0) > tol * scale:
            return k
        X = A @ X
    return None


def delay_performance(A, B, C1, C2, steps: int):
    """Append a register chain so the performance output is read out
    `steps` samples late.  Shifting a signal in time is an l2-isometry, so
    the output-to-output gain is untouched, while the delayed channel's
    impulse response starts no earlier than the residual's -- the structural
    requirement for a storage matrix to exist when neither channel has
    feedthrough."""
    if steps <= 0:
        return np.asarray(A, float), np.asarray(B, float), np.asarray(C1, float), \
            np.asarray(C2, float)
    n, m = A.shape[0], B.shape[1]
    p2 = C2.shape[0]
    rows = [np.hstack([A, np.zeros((n, steps * p2))])]
    feed = np.hstack([C2, np.zeros((p2, steps * p2))])
    rows.append(feed)
    for j in range(1, steps):
        blk = np.zeros((p2, n + steps * p2))
        blk[:, n + (j - 1) * p2: n + j * p2] = np.eye(p2)
        rows.append(blk)
    Aa = np.vstack(rows)
    Ba = np.vstack([np.asarray(B, float), np.zeros((steps * p2, m))])
    C1a = np.hstack([np.asarray(C1, float), np.zeros((C1.shape[0], steps * p2))])
    C2a = np.zeros((p2, n + steps * p2))
    C2a[:, n + (steps - 1) * p2:] = np.eye(p2)
    return Aa, Ba, C1a, C2a


def _orth_cols(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    keep = s > tol * max(1.0, s[0] if s.size else 1.0)
    return U[:, keep]


def forced_storage_kernel(A, B, C1, C2) -> tuple[np.ndarray, bool]:
    """Subspace every feasible storage matrix must annihilate, and whether
    one can exist at all, for channels without feedthrough.

    The input block of the storage inequality forces P B = 0.  Any kernel
    direction invisible to the residual then propagates: v with P v = 0 and
    C1 v = 0 forces P A v = 0 and, fatally, C2 v = 0 -- if such a direction
    leaks into the performance output, no storage matrix exists for any
    gamma and the second return value is False.
    """
    A = np.asarray(A, float)
    K = _orth_cols(np.asarray(B, float))
    for _ in range(A.shape[0]):
        CK = np.asarray(C1, float) @ K
        _, s, Vh = np.linalg.svd(CK, full_matrices=True)
        r = int(np.sum(s > 1e-9 * max(1.0, s[0] if s.size else 1.0)))
        X = K @ Vh.conj().T[:, r:]
        if X.shape[1] == 0:
            break
        if np.abs(np.asarray(C2, float) @ X).max(initial=0.0) > 1e-8:
            return K, False
        grown = _orth_cols(np.hstack([K, A @ X]))
        if grown.shape[1] == K.shape[1]:
            break
        K = grown
    return K, True


def _solve_gain_sdp(constraints, variables, g) -> lmi.LmiSolution:
    problem = lmi.LmiProblem(variables=variables, objective=g, constraints=constraints)
    return lmi.solve(problem)


def compute_oog(loop: ClosedLoop) -> OogCertificate:
    """Minimize gamma over (P >= 0, gamma > 0) subject to the storage LMI.

    Returns Unbounded (without solving) when the residual channel's zero
    structure admits arbitrarily damaging attacks, and Unbounded as well when
    the SDP is infeasible or pushes gamma past GAMMA_CAP.

    When neither channel has feedthrough the LMI is degenerate: its input
    block forces P B = 0, and if the performance channel responds earlier
    than the residual no storage matrix exists even for finite gains.  That
    branch first delays the performance readout to equalize response times
    (an l2-isometry, so the gain is unchanged), computes the forced kernel of
    P, and optimizes over the complement -- restoring an interior for the
    solver.  Certificates carry delay_steps so they can be re-verified.
    """
    A, B, C1, D1, C2, D2 = _channel_blocks(loop)
    if not is_controllable(A, B):
        warnings.warn("loop (A, B) is not controllable; gain value may be conservative")
    if not is_observable(C1, A):
        warnings.warn("residual channel (C1, A) is not observable")
    if boundedness_check(loop) is not Boundedness.BOUNDED:
        return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)

    strictly_proper = (np.abs(D1).max(initial=0.0) <= 1e-12
                       and np.abs(D2).max(initial=0.0) <= 1e-12)
    if strictly_proper:
        return _compute_oog_strictly_proper(A, B, C1, D1, C2, D2)

    n = A.shape[0]
    P = lmi.symmetric_var("P", n)
    g = lmi.scalar_var("gamma")
    sol = _solve_gain_sdp(
        [
            lmi.LmiConstraint(P, "pos", "storage_psd"),
            lmi.LmiConstraint(lmi.as_matrix_expr(lmi.EPS_STRICT - g), "neg", "gamma_pos"),
            lmi.LmiConstraint(
                dissipation_matrix(A, B, C1, D1, C2, D2, g, P), "neg", "dissipation"
            ),
        ],
        {"P": P, "gamma": g},
        g,
    )
    if sol.status is lmi.LmiStatus.OPTIMAL:
        if sol.objective >= GAMMA_CAP:
            return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)
        Pv = np.asarray(sol.assignment["P"])
        Pv = (Pv + Pv.T) / 2.0
        gamma = float(sol.objective)
        return OogCertificate(gamma, Pv, OogStatus.OPTIMAL,
                              residual=verify_dissipativity(loop, gamma, Pv))
    if sol.status is lmi.LmiStatus.INFEASIBLE:
        return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)
    return OogCertificate(np.nan, None, OogStatus.NUMERICAL_FAILURE)


def _compute_oog_strictly_proper(A, B, C1, D1, C2, D2) -> OogCertificate:
    f1 = first_response_index(C1, A, B)
    f2 = first_response_index(C2, A, B)
    if f2 is None:
        # performance output never responds: any positive gamma works
        return OogCertificate(float(lmi.EPS_STRICT), np.zeros_like(A),
                              OogStatus.OPTIMAL, residual=0.0)
    if f1 is None:
        return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)

    d = max(0, f1 - f2)
    Aa, Ba, C1a, C2a = delay_performance(A, B, C1, C2, d)
    na = Aa.shape[0]
    K, certifiable = forced_storage_kernel(Aa, Ba, C1a, C2a)
    if not certifiable:
        return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)
    U, s, _ = np.linalg.svd(np.eye(na) - K @ K.T)
    N = U[:, s > 0.5]
    r = N.shape[1]
    if r == 0:
        # storage matrix forced to zero everywhere: the gain survives only if
        # the performance rows are a static multiple of the residual rows
        M = C2a @ np.linalg.pinv(C1a)
        mismatch = np.abs(M @ C1a - C2a).max(initial=0.0)
        if mismatch > 1e-8 * max(1.0, np.abs(C2a).max(initial=0.0)):
            return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)
        gamma = max(float(lmi.EPS_STRICT), float(np.linalg.norm(M, 2) ** 2))
        Pv = np.zeros((na, na))
        D2a = np.zeros((C2a.shape[0], Ba.shape[1]))
        res = lmi.psd_residual(
            dissipation_matrix(Aa, Ba, C1a, D1, C2a, D2a, gamma, Pv)
        )
        return OogCertificate(gamma, Pv, OogStatus.OPTIMAL, residual=res,
                              delay_steps=d)

    Z = lmi.symmetric_var("Z", r)
    g = lmi.scalar_var("gamma")
    Pe = N @ Z @ N.T
    compact = Aa.T @ Pe @ Aa - Pe + C2a.T @ C2a - cp.multiply(g, C1a.T @ C1a)
    sol = _solve_gain_sdp(
        [
            lmi.LmiConstraint(Z, "pos", "storage_psd"),
            lmi.LmiConstraint(lmi.as_matrix_expr(lmi.EPS_STRICT - g), "neg", "gamma_pos"),
            lmi.LmiConstraint(compact, "neg", "dissipation_reduced"),
        ],
        {"Z": Z, "gamma": g},
        g,
    )
    if sol.status is lmi.LmiStatus.OPTIMAL:
        if sol.objective >= GAMMA_CAP:
            return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)
        Zv = np.asarray(sol.assignment["Z"])
        Pv = N @ ((Zv + Zv.T) / 2.0) @ N.T
        Pv = (Pv + Pv.T) / 2.0
        gamma = float(sol.objective)
        D2a = np.zeros((C2a.shape[0], Ba.shape[1]))
        res = lmi.psd_residual(
            dissipation_matrix(Aa, Ba, C1a, D1, C2a, D2a, gamma, Pv)
        )
        return OogCertificate(gamma, Pv, OogStatus.OPTIMAL, residual=res,
                              delay_steps=d)
    if sol.status is lmi.LmiStatus.INFEASIBLE:
        return OogCertificate(np.inf, None, OogStatus.UNBOUNDED)
    return OogCertificate(np.nan, None, OogStatus.NUMERICAL_FAILURE)


# -- boundedness (zero structure of the residual channel) ---------------------

_DEGENERATE_PROBES = (2.0, -2.0, 1.0 + 1.0j, 1.0, -1.0, 1.5j)


def _y2_visible(C2, D2, ns: np.ndarray) -> bool:
    """Does some pencil null direction leak into the performance output?"""
    if ns.size == 0:
        return False
    E2 = np.hstack([C2, D2]).astype(complex)
    leak = np.linalg.norm(E2 @ ns, ord=2)
    scale = max(1.0, np.linalg.norm(E2, ord=2))
    return bool(leak > 1e-7 * scale)


def _reachable(A, B, lam: complex) -> bool:
    n = A.shape[0]
    M = np.hstack([lam * np.eye(n) - A, B]).astype(complex)
    return _rank(M) == n


def boundedness_check(loop: ClosedLoop) -> Boundedness:
    """Decide finiteness of the gain from the residual channel's unstable zeros.

    A direct feed into y2 with a blind y1 (D2 full column rank, D1 = 0) is
    immediately unbounded.  Otherwise the verdict rests on zeros of
    (A, B, C1, D1) on or outside the unit circle whose directions are
    reachable: each must also be invisible in the performance channel, else
    an attacker can pump energy into y2 at vanishing residual cost.  Channels
    whose pencil is rank-deficient everywhere (e.g. an identically blind
    residual) are probed at fixed unstable points instead of isolated zeros.
    """
    A, B, C1, D1, C2, D2 = _channel_blocks(loop)
    n, m = A.shape[0], B.shape[1]
    d2_nonzero = np.max(np.abs(D2), initial=0.0) > 1e-12
    d1_zero = np.max(np.abs(D1), initial=0.0) <= 1e-12
    if d2_nonzero and d1_zero and _rank(D2) == m:
        return Boundedness.UNBOUNDED_BY_FEEDTHROUGH

    normal = pencil_normal_rank(A, B, C1, D1)
    if normal < n + m:
        # rank drops at every lambda: probe representative unstable points
        rng = np.random.default_rng(20250814)
        probes = list(_DEGENERATE_PROBES) + [
            (1.0 + rng.uniform(0.05, 2.0)) * np.exp(2j * np.pi * rng.uniform())
            for _ in range(6)
        ]
        for lam in probes:
            ns, _ = pencil_null_directions(A, B, C1, D1, lam)
            if ns.size and _reachable(A, B, lam) and _y2_visible(C2, D2, ns):
                return Boundedness.UNBOUNDED_BY_ZEROS
        return Boundedness.BOUNDED

    for lam in sorted(pencil_zero_candidates(A, B, C1, D1), key=lambda z: (abs(z), z.real)):
        if abs(lam) < UNSTABLE_RADIUS:
            continue
        ns, rank = pencil_null_directions(A, B, C1, D1, lam)
        if ns.size == 0 or rank >= normal:
            continue
        if _reachable(A, B, lam) and _y2_visible(C2, D2, ns):
            return Boundedness.UNBOUNDED_BY_ZEROS
    return Boundedness.BOUNDED


# -- undetectability (zero-dynamics attacks surviving the watermark) ----------


@dataclass(frozen=True)
class UndetectabilityVerdict:
    """Outcome of the stealthy-zero test on the covert attack channel.

    stealthy=True means some complex frequency mu admits an attack direction
    with zero residual signature; everywhere=True marks the degenerate case
    where the channel transfer vanishes identically (any mu works).
    transfer_gap is the independent cross-check: smallest singular value of
    W(mu) P(mu) H(mu) - P(mu), which should be ~0 for a true stealthy zero.
    """

    stealthy: bool
    mu: complex | None = None
    everywhere: bool = False
    transfer_gap: float | None = None

    @property
    def kind(self) -> str:
        return "StealthyZeroExists" if self.stealthy else "DetectableOnly"


def transfer_identity_gap(input_pair: WatermarkPair, plant: Plant,
                          output_pair: WatermarkPair, mu: complex) -> float:
    """Smallest singular value of W(mu) G_p(mu) G_h(mu) - G_p(mu).

    Zero gap at mu means an input direction exists along which the watermarked
    path and the attacker's plant copy agree exactly -- the residual is blind
    there.  Raises PoleAtEvaluationPoint if mu hits a component pole.
    """
    meas = make_statespace(plant.A, plant.B, plant.C_meas, np.zeros((plant.p, plant.m)))
    Gw = eval_tf(output_pair.generator, mu)
    Gh = eval_tf(input_pair.remover, mu)
    Gp = eval_tf(meas, mu)
    diff = Gw @ Gp @ Gh - Gp
    sv = np.linalg.svd(diff, compute_uv=False)
    return float(sv[-1]) if sv.size else 0.0


def _phi_u_component(ns: np.ndarray, n: int) -> float:
    if ns.size == 0:
        return 0.0
    return float(np.linalg.norm(ns[n:, :], ord=2))


_WITNESS_PROBES = (1.3, 0.7 + 0.6j, 2.1, 0.35, -1.2, 0.15 - 0.9j)


def undetectability_check(input_pair: WatermarkPair, plant: Plant,
                          output_pair: WatermarkPair) -> UndetectabilityVerdict:
    """Search the covert attack channel for stealthy zero-dynamics frequencies.

    Builds the channel (watermarked path minus plant copy), finds frequencies
    where its Rosenbrock pencil loses rank with a nonzero attack component,
    and cross-validates each candidate against the transfer identity.  A
    channel that is identically zero (identity watermarks, or input pair
    inverting the output pair) is stealthy at every frequency.
    """
    ch = assemble_attack_channel(input_pair, plant, output_pair)
    A, B, C, D = ch.A, ch.B, ch.C, ch.D
    n, m = ch.n, ch.m
    normal = pencil_normal_rank(A, B, C, D)
    if normal < n + m:
        for mu in _WITNESS_PROBES:
            ns, _ = pencil_null_directions(A, B, C, D, mu)
            if _phi_u_component(ns, n) < 1e-7:
                continue
            try:
                gap = transfer_identity_gap(input_pair, plant, output_pair, mu)
            except ValueError:
                continue
            if gap <= 1e-6:
                return UndetectabilityVerdict(True, complex(mu), True, gap)
        # pencil says degenerate but no probe validated; report without witness
        return UndetectabilityVerdict(True, None, True, None)

    for mu in sorted(pencil_zero_candidates(A, B, C, D), key=lambda z: (abs(z), z.real)):
        ns, rank = pencil_null_directions(A, B, C, D, mu)
        if rank >= normal or _phi_u_component(ns, n) < 1e-7:
            continue
        try:
            gap = transfer_identity_gap(input_pair, plant, output_pair, mu)
        except ValueError:
            continue  # candidate collides with a component pole: spurious
        if gap <= 1e-6:
            return UndetectabilityVerdict(True, complex(mu), False, gap)
    return UndetectabilityVerdict(False)


def stealthy_mu_by_transfer(input_pair: WatermarkPair, plant: Plant,
                            output_pair: WatermarkPair) -> list[complex] | None:
    """Transfer-identity oracle for single-channel components.

    Solves W(z) H(z) = 1 and G_p(z) = 0 by polynomial arithmetic and returns
    the stealthy frequencies, or None when the identity holds everywhere.
    Only valid when every component is single-input single-output; used to
    cross-check the pencil-based verdict.
    """
    W, H = output_pair.generator, input_pair.remover
    if not (W.m == W.p == 1 and H.m == H.p == 1 and plant.m == 1 and plant.p == 1):
        raise ValueError("transfer oracle requires single-channel components")
    meas = make_statespace(plant.A, plant.B, plant.C_meas, np.zeros((1, 1)))
    wn, wd = _siso_poly(W)
    hn, hd = _siso_poly(H)
    pn, _pd = _siso_poly(meas)
    # W H - 1 = (wn hn - wd hd) / (wd hd)
    diff = _trim_leading(np.polysub(np.polymul(wn, hn), np.polymul(wd, hd)))
    if np.max(np.abs(diff), initial=0.0) <= 1e-9 * max(
        1.0, np.max(np.abs(np.polymul(wd, hd)))
    ):
        return None  # identity everywhere
    out = []
    for mu in np.roots(diff):
        # confirm W H = 1 at mu with a fresh state-space evaluation
        try:
            val = (eval_tf(W, mu) @ eval_tf(H, mu))[0, 0]
        except ValueError:
            continue
        if abs(val - 1.0) <= 1e-6 * (1.0 + abs(val)):
            out.append(complex(mu))
    for mu in np.roots(_trim_leading(pn)):
        try:
            val = eval_tf(meas, mu)[0, 0]
        except ValueError:
            continue
        if abs(val) <= 1e-6:
            out.append(complex(mu))
    return out


def _trim_leading(c: np.ndarray, rel: float = 1e-9) -> np.ndarray:
    """Drop near-zero leading coefficients so np.roots does not fabricate
    huge spurious roots from fit noise."""
    c = np.atleast_1d(np.asarray(c))
    if c.size == 0:
        return c
    floor = rel * np.max(np.abs(c), initial=0.0)
    k = 0
    while k < c.size - 1 and abs(c[k]) <= floor:
        k += 1
    return c[k:]


def _siso_poly(s) -> tuple[np.ndarray, np.ndarray]:
    """Numerator/denominator of a SISO system via det identities."""
    if s.n == 0:
        return np.array([float(s.D[0, 0])]), np.array([1.0])
    den = np.real(np.poly(np.linalg.eigvals(s.A)))
    # num(z) = det([[zI - A, B], [-C, D]]) for SISO, degree n
    grid = np.exp(2j * np.pi * np.arange(s.n + 1) / (s.n + 1)) * 2.7
    vals = []
    for z in grid:
        M = np.block([[z * np.eye(s.n) - s.A, s.B], [-s.C, s.D]]).astype(complex)
        vals.append(np.linalg.det(M))
    # the grid is conjugate-closed and the matrices are real, so the fitted
    # coefficients are real up to rounding noise in the Vandermonde solve
    num = np.polyfit(grid, np.asarray(vals), s.n)
    return np.real(num), den
