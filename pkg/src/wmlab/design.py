"""Alternating LMI minimization of the output-to-output gain over watermark
parameters.

The joint problem (storage matrix and watermark matrices together) is
bilinear, so it is split into two LMIs solved in alternation: a storage step
with the filters frozen, and a filter step with the storage matrix frozen.
Each step re-optimizes a problem for which the incumbent is feasible, so the
gain sequence never increases.  Filter structure is fixed: C_s and D_s stay
at their initial values, while A_s and optionally B_s are decision variables
per the free-parameter masks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.linalg

from . import lmi
from .oog import (
    GAMMA_CAP,
    delay_performance,
    dissipation_matrix,
    first_response_index,
    forced_storage_kernel,
)
from .statespace import STABILITY_MARGIN
from .systems import (
    Controller,
    Plant,
    WatermarkPair,
    _check_interconnect,
    invert_parts,
    loop_parts,
    make_watermark_pair,
)


class StepInfeasible(RuntimeError):
    """An alternation step has no solution for the incumbent iterate."""


class UnstableGeneratorProduced(RuntimeError):
    """A filter step produced a non-minimum-phase remover, i.e. an unstable
    generator, and margin retries did not repair it."""


class Termination(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    INFEASIBLE_AT_INIT = "InfeasibleAtInit"
    STEP_FAILURE = "StepFailure"


_MASK_FIELDS = ("A", "B")


@dataclass(frozen=True)
class DesignConfig:
    """Knobs of the alternating minimization.

    input_free / output_free select which remover matrices are decision
    variables on each side; C and D always stay at their initial values so
    the closed loop remains affine in the decisions.
    """

    epsilon: float = 1e-5
    max_iters: int = 100
    input_free: tuple[str, ...] = ("A", "B")
    output_free: tuple[str, ...] = ("A", "B")
    eps_strict: float = lmi.EPS_STRICT

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        for mask in (self.input_free, self.output_free):
            for name in mask:
                if name not in _MASK_FIELDS:
                    raise ValueError(f"unknown free parameter {name!r}")


@dataclass
class DesignReport:
    input_pair: WatermarkPair
    output_pair: WatermarkPair
    gamma: float
    gamma_trace: list[float]
    P: np.ndarray | None
    iterations: int
    termination: Termination
    delay_steps: int = 0
    residual: float | None = None

    def to_dict(self) -> dict:
        return {
            "gamma": None if not np.isfinite(self.gamma) else float(self.gamma),
            "gamma_trace": [float(g) for g in self.gamma_trace],
            "iterations": self.iterations,
            "termination": self.termination.value,
            "delay_steps": self.delay_steps,
            "residual": self.residual,
            "P": None if self.P is None else np.asarray(self.P).tolist(),
            "input_pair": {
                "remover": self.input_pair.remover.to_dict(),
                "generator": self.input_pair.generator.to_dict(),
            },
            "output_pair": {
                "remover": self.output_pair.remover.to_dict(),
                "generator": self.output_pair.generator.to_dict(),
            },
        }

    def trace_csv(self) -> str:
        lines = ["iter, gamma"]
        for i, g in enumerate(self.gamma_trace, start=1):
            lines.append("%d, %.17g" % (i, g))
        return "\n".join(lines) + "\n"


# -- loop matrices over (possibly symbolic) remover parameters ----------------


def _design_matrices(plant: Plant, controller: Controller, rem_in, rem_out):
    """Collect (A, B, C1, C2) of the covert-embedded loop for remover parts
    that may contain solver expressions.  The residual and performance rows
    have no feedthrough from the attack input by construction, which the
    caller relies on."""
    Bc = plant.B if controller.B_c is None else controller.B_c
    gen_in = invert_parts(*rem_in)
    gen_out = invert_parts(*rem_out)
    A, B, C1, D1, C2, D2, *_ = loop_parts(
        plant.A, plant.B, plant.C_meas, plant.C_perf,
        controller.K, controller.L, Bc,
        rem_in, gen_in, rem_out, gen_out, covert=True,
    )
    for name, D in (("residual", D1), ("performance", D2)):
        if isinstance(D, np.ndarray) and np.abs(D).max(initial=0.0) > 1e-12:
            raise AssertionError(f"{name} channel unexpectedly has feedthrough")
    return A, B, C1, C2


def _rem_parts(pair: WatermarkPair):
    r = pair.remover
    return (r.A, r.B, r.C, r.D)


def _augmented_expr(A, B, C1, C2, steps: int):
    """Delay the performance readout of possibly-symbolic loop matrices.

    A and B are treated independently: whichever is a plain array stays one,
    so a fixed attack-input map is handled by a numeric kernel check rather
    than a degenerate equality constraint."""
    if steps <= 0:
        return A, B, C1, C2
    n = A.shape[0]
    m = B.shape[1]
    p2 = C2.shape[0]
    zpad = np.zeros((n, steps * p2))
    rows = [[A, zpad]]
    rows.append([C2, np.zeros((p2, steps * p2))])
    for j in range(1, steps):
        blk = np.zeros((p2, n + steps * p2))
        blk[:, n + (j - 1) * p2: n + j * p2] = np.eye(p2)
        rows.append([blk[:, :n], blk[:, n:]])
    if isinstance(A, np.ndarray):
        Aa = np.block(rows)
    else:
        Aa = cp.bmat(rows)
    if isinstance(B, np.ndarray):
        Ba = np.vstack([B, np.zeros((steps * p2, m))])
    else:
        Ba = cp.bmat([[B], [np.zeros((steps * p2, m))]])
    C1a = np.hstack([C1, np.zeros((C1.shape[0], steps * p2))])
    C2a = np.zeros((p2, n + steps * p2))
    C2a[:, n + (steps - 1) * p2:] = np.eye(p2)
    return Aa, Ba, C1a, C2a


# -- the two alternation steps -------------------------------------------------


def p_step(plant: Plant, controller: Controller, input_pair: WatermarkPair,
           output_pair: WatermarkPair,
           eps_strict: float = lmi.EPS_STRICT) -> tuple[np.ndarray, float, int]:
    """Storage step: minimize gamma over (P, gamma) with the filters frozen.

    The covert-embedded loop has no attack feedthrough in either output, so
    the storage inequality forces P B = 0 and, when the performance channel
    responds earlier than the residual, no storage matrix exists at all.
    The performance readout is therefore delayed just enough to equalize
    response times (leaving the gain untouched), the forced kernel of P is
    computed, and the SDP runs over the kernel's complement where it has an
    interior.  Returns (P, gamma, delay_steps); P lives on the delayed loop.
    """
    A, B, C1, C2 = _design_matrices(
        plant, controller, _rem_parts(input_pair), _rem_parts(output_pair))
    f1 = first_response_index(C1, A, B)
    f2 = first_response_index(C2, A, B)
    if f1 is None:
        raise StepInfeasible(
            "residual channel never responds to the attack input; "
            "any covert attack is invisible and the gain is unbounded")
    if f2 is None:
        raise StepInfeasible("performance channel never responds to the attack input")
    d = max(0, f1 - f2)
    Aa, Ba, C1a, C2a = delay_performance(A, B, C1, C2, d)
    K, certifiable = forced_storage_kernel(Aa, Ba, C1a, C2a)
    if not certifiable:
        raise StepInfeasible(
            "a state direction invisible to the residual leaks into the "
            "performance output; no storage matrix exists")
    na = Aa.shape[0]
    U, s, _ = np.linalg.svd(np.eye(na) - K @ K.T)
    N = U[:, s > 0.5]
    if N.shape[1] == 0:
        raise StepInfeasible("storage matrix is forced to zero on every direction")

    Z = lmi.symmetric_var("Z", N.shape[1])
    g = lmi.scalar_var("gamma")
    Pe = N @ Z @ N.T
    compact = Aa.T @ Pe @ Aa - Pe + C2a.T @ C2a - cp.multiply(g, C1a.T @ C1a)
    sol = lmi.solve(lmi.LmiProblem(
        variables={"Z": Z, "gamma": g},
        objective=g,
        constraints=[
            lmi.LmiConstraint(Z, "pos", "storage_psd"),
            lmi.LmiConstraint(lmi.as_matrix_expr(eps_strict - g), "neg", "gamma_pos"),
            lmi.LmiConstraint(compact, "neg", "dissipation_reduced"),
        ],
    ))
    if sol.status is not lmi.LmiStatus.OPTIMAL:
        raise StepInfeasible(f"storage step ended {sol.status.value}")
    if sol.objective >= GAMMA_CAP:
        raise StepInfeasible("storage step pushed gamma past the cap")
    Zv = np.asarray(sol.assignment["Z"])
    P = N @ ((Zv + Zv.T) / 2.0) @ N.T
    return (P + P.T) / 2.0, float(sol.objective), d


def _lyapunov_cert(M: np.ndarray) -> np.ndarray:
    """P with M' P M - P = -I, the frozen stability certificate of M."""
    return scipy.linalg.solve_discrete_lyapunov(M.T, np.eye(M.shape[0]))


def _spectral_radius(M: np.ndarray) -> float:
    if M.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass
class _SideVars:
    """Decision variables of one watermark side (empty tuples when fixed)."""

    name: str
    rem0: tuple  # incumbent numeric (A, B, C, D)
    A_var: cp.Variable | None = None
    B_var: cp.Variable | None = None

    @property
    def free(self) -> bool:
        return self.A_var is not None or self.B_var is not None

    def parts(self):
        A0, B0, C0, D0 = self.rem0
        return (self.A_var if self.A_var is not None else A0,
                self.B_var if self.B_var is not None else B0, C0, D0)

    def value_parts(self):
        A0, B0, C0, D0 = self.rem0
        A = np.asarray(self.A_var.value) if self.A_var is not None else A0
        B = np.asarray(self.B_var.value) if self.B_var is not None else B0
        return np.atleast_2d(A), np.atleast_2d(B), C0, D0


def _make_side(name: str, pair: WatermarkPair, mask: tuple[str, ...]) -> _SideVars:
    rem0 = _rem_parts(pair)
    side = _SideVars(name, rem0)
    ns = rem0[0].shape[0]
    if ns == 0:
        return side  # static filter: nothing to optimize
    if "A" in mask:
        side.A_var = cp.Variable((ns, ns), name=f"A_{name}")
    if "B" in mask:
        side.B_var = cp.Variable((ns, rem0[1].shape[1]), name=f"B_{name}")
    return side


def w_step(plant: Plant, controller: Controller, input_pair: WatermarkPair,
           output_pair: WatermarkPair, P: np.ndarray, delay_steps: int,
           gamma_interim: float, config: DesignConfig,
           ) -> tuple[WatermarkPair, WatermarkPair, float, np.ndarray | None, np.ndarray | None]:
    """Filter step: minimize gamma over the masked remover matrices with the
    storage matrix frozen.

    The frozen P is factored as N diag(z) N' with strictly positive z, which
    turns the storage inequality into a Schur-complement LMI affine in the
    filter matrices, plus the (affine) annihilation equality P B = 0.
    Remover stability rides on frozen Lyapunov certificates of the incumbent
    filters; generator stability (minimum-phase removers) is checked after
    the solve and repaired by re-solving with a spectral-radius margin
    tightened in steps of 0.05.

    Returns (input_pair, output_pair, gamma, P_q, P_h) where P_q / P_h are
    the certificates used for the optimized sides (None for fixed sides).
    """
    side_in = _make_side("h", input_pair, config.input_free)
    side_out = _make_side("q", output_pair, config.output_free)
    if not (side_in.free or side_out.free):
        return input_pair, output_pair, float(gamma_interim), None, None

    certs: dict[str, np.ndarray] = {}
    for side in (side_in, side_out):
        if side.free:
            certs[side.name] = _lyapunov_cert(np.atleast_2d(side.rem0[0]))

    for shrink in (None, 1.0, 0.95, 0.90, 0.85):
        result = _solve_w_step(plant, controller, side_in, side_out, P,
                               delay_steps, gamma_interim, config, certs, shrink)
        if result is not None:
            pairs_in, pairs_out, gamma = result
            return pairs_in, pairs_out, gamma, \
                certs.get("q"), certs.get("h")
    raise UnstableGeneratorProduced(
        "filter step kept producing a non-minimum-phase remover")


def _solve_w_step(plant, controller, side_in, side_out, P, delay_steps,
                  gamma_interim, config, certs, gen_shrink):
    """One filter-step solve; gen_shrink adds generator-stability margin
    constraints with that spectral-radius bound (None on the first pass).
    Returns (input_pair, output_pair, gamma) or None when the solution's
    generator is unstable and another pass should tighten the margin."""
    A, B, C1, C2 = _design_matrices(plant, controller,
                                    side_in.parts(), side_out.parts())
    Aa, Ba, C1a, C2a = _augmented_expr(A, B, C1, C2, delay_steps)

    w, V = np.linalg.eigh((P + P.T) / 2.0)
    lead = max(float(w.max(initial=0.0)), 0.0)
    keep = w > 1e-9 * max(1.0, lead)
    N, z = V[:, keep], w[keep]
    NZ = N * z  # N @ diag(z)
    Zm = np.diag(z)
    Pt = (NZ @ N.T + N @ NZ.T) / 2.0  # truncated P, exactly symmetric

    g = lmi.scalar_var("gamma")
    variables = {"gamma": g}
    for side in (side_in, side_out):
        if side.A_var is not None:
            variables[side.A_var.name()] = side.A_var
        if side.B_var is not None:
            variables[side.B_var.name()] = side.B_var

    # constraint entries scale with the incumbent gain; dividing the whole
    # inequality by it keeps the solver's absolute exit tolerances meaningful
    s = 1.0 / max(1.0, float(gamma_interim))
    top = -s * Pt + s * (C2a.T @ C2a) - cp.multiply(g, s * (C1a.T @ C1a))
    schur = cp.bmat([[top, s * (Aa.T @ NZ)], [s * (NZ.T @ Aa), -s * Zm]])
    constraints = [
        lmi.LmiConstraint(lmi.as_matrix_expr(config.eps_strict - g), "neg", "gamma_pos"),
        lmi.LmiConstraint(schur, "neg", "oog_schur"),
    ]
    if isinstance(Ba, np.ndarray):
        if np.abs(N.T @ Ba).max(initial=0.0) > 1e-6:
            raise StepInfeasible("frozen storage matrix does not annihilate the attack input")
    else:
        constraints.append(lmi.LmiConstraint(N.T @ Ba, "zero", "input_annihilation"))

    for side in (side_in, side_out):
        if not side.free:
            continue
        Ps = certs[side.name]
        A_s = side.parts()[0]
        ns = Ps.shape[0]
        stab = cp.bmat([[-Ps + config.eps_strict * np.eye(ns), A_s.T @ Ps],
                        [Ps @ A_s, -Ps + config.eps_strict * np.eye(ns)]]) \
            if not isinstance(A_s, np.ndarray) else None
        if stab is not None:
            constraints.append(lmi.LmiConstraint(stab, "neg", f"remover_stable_{side.name}"))
        if gen_shrink is not None:
            A0, B0, C0, D0 = side.rem0
            Agen0 = np.atleast_2d(invert_parts(A0, B0, C0, D0)[0])
            Pg = _lyapunov_cert(Agen0)
            Ag = invert_parts(*side.parts())[0]
            marg = cp.bmat([[-(gen_shrink ** 2) * Pg, Ag.T @ Pg],
                            [Pg @ Ag, -Pg]])
            constraints.append(
                lmi.LmiConstraint(marg, "neg", f"generator_margin_{side.name}"))

    sol = lmi.solve(lmi.LmiProblem(variables=variables, objective=g,
                                   constraints=constraints))
    if sol.status is not lmi.LmiStatus.OPTIMAL:
        raise StepInfeasible(f"filter step ended {sol.status.value}")

    new_pairs = []
    for side in (side_in, side_out):
        A_s, B_s, C_s, D_s = side.value_parts()
        if _spectral_radius(A_s) >= 1.0 - STABILITY_MARGIN:
            raise StepInfeasible("filter step returned a marginally stable remover")
        Agen = np.atleast_2d(invert_parts(A_s, B_s, C_s, D_s)[0])
        if _spectral_radius(Agen) >= 1.0 - STABILITY_MARGIN:
            return None  # generator unstable: caller tightens the margin
        new_pairs.append(make_watermark_pair(A_s, B_s, C_s, D_s))
    return new_pairs[0], new_pairs[1], float(sol.objective)


# -- the alternation driver ----------------------------------------------------


_FIXED_POINT_RTOL = 1e-7


def _pairs_close(new_pairs, old_pairs) -> bool:
    """True when the filter step reproduced the incumbent filters to well
    below solver accuracy, i.e. the alternation is stationary."""
    for new, old in zip(new_pairs, old_pairs):
        if new is old:
            continue
        for Mn, Mo in ((new.remover.A, old.remover.A),
                       (new.remover.B, old.remover.B)):
            tol = _FIXED_POINT_RTOL * (1.0 + np.abs(Mo).max(initial=0.0))
            if np.abs(Mn - Mo).max(initial=0.0) > tol:
                return False
    return True


def run_algorithm1(plant: Plant, controller: Controller,
                   input_pair: WatermarkPair, output_pair: WatermarkPair,
                   config: DesignConfig | None = None) -> DesignReport:
    """Alternate storage and filter steps until the gain settles.

    Starts from gamma_0 = 0 against gamma_{-1} = inf so at least one
    iteration always runs; stops when successive filter-step gains differ by
    at most config.epsilon (Converged), the iteration budget runs out
    (MaxIters), the very first storage step has no solution
    (InfeasibleAtInit), or a later step fails (StepFailure, reporting the
    best iterate reached).

    A filter step that reproduces the incumbent filters to solver accuracy
    marks a stationary point of the alternation; the incumbent gain is then
    carried forward so the stopping test sees the true (zero) progress
    rather than re-estimation noise.  The reported gamma is the certified
    storage-step value for the reported filters and may differ from the
    last trace entry by solver accuracy.
    """
    config = config or DesignConfig()
    _check_interconnect(plant, controller, input_pair, output_pair)

    pairs = (input_pair, output_pair)
    trace: list[float] = []
    # the reported iterate is always the last one a storage step certified
    certified = None  # (pairs, P, gamma, delay)
    g_prev, g_curr = np.inf, 0.0
    it = 0
    termination = Termination.MAX_ITERS
    while abs(g_curr - g_prev) > config.epsilon:
        if it >= config.max_iters:
            break
        try:
            P, g_interim, delay = p_step(plant, controller, *pairs,
                                         eps_strict=config.eps_strict)
        except StepInfeasible:
            termination = (Termination.INFEASIBLE_AT_INIT if certified is None
                           else Termination.STEP_FAILURE)
            break
        certified = (pairs, P, g_interim, delay)
        try:
            pin, pout, g_next, _Pq, _Ph = w_step(
                plant, controller, *pairs, P, delay, g_interim, config)
        except (StepInfeasible, UnstableGeneratorProduced):
            termination = Termination.STEP_FAILURE
            break
        if _pairs_close((pin, pout), pairs):
            # stationary iterate: keep the incumbent filters and their gain
            # rather than accumulating solver noise into the trace
            pin, pout = pairs
            g_next = trace[-1] if trace else g_interim
        pairs = (pin, pout)
        trace.append(g_next)
        g_prev, g_curr = g_curr, g_next
        it += 1
    else:
        termination = Termination.CONVERGED

    if certified is not None and pairs is not certified[0]:
        # certify the final filter-step iterate; if that unexpectedly fails,
        # fall back to the last certified pairs
        try:
            P, g_cert, delay = p_step(plant, controller, *pairs,
                                      eps_strict=config.eps_strict)
            certified = (pairs, P, g_cert, delay)
        except StepInfeasible:
            pass

    if certified is None:
        return DesignReport(input_pair, output_pair, np.inf, trace, None, it,
                            termination)
    (pin, pout), P_star, gamma, delay = certified
    A, B, C1, C2 = _design_matrices(plant, controller,
                                    _rem_parts(pin), _rem_parts(pout))
    Aa, Ba, C1a, C2a = delay_performance(A, B, C1, C2, delay)
    m = Ba.shape[1]
    residual = lmi.psd_residual(dissipation_matrix(
        Aa, Ba, C1a, np.zeros((C1a.shape[0], m)), C2a,
        np.zeros((C2a.shape[0], m)), gamma, P_star))
    return DesignReport(
        input_pair=pin,
        output_pair=pout,
        gamma=float(gamma),
        gamma_trace=trace,
        P=P_star,
        iterations=it,
        termination=termination,
        delay_steps=delay,
        residual=residual,
    )
