"""Plant, observer-based controller, watermark pairs, and closed-loop assembly.

The closed loops are never written down as literal block matrices.  Instead
each component contributes its update law as an affine expression over named
state/input blocks, and the loop matrices fall out of collecting coefficients.
The same wiring code serves two callers: numeric assembly (entries are
ndarrays) and the watermark design step (entries are solver expressions), so
the matrices the optimizer sees are by construction the matrices that get
simulated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .statespace import (
    DimensionMismatch,
    StateSpace,
    identity_system,
    invert,
    is_controllable,
    is_observable,
    is_stable,
    make_statespace,
    parallel_sub,
    series,
    STABILITY_MARGIN,
)


class UnstableRemover(ValueError):
    """Watermark remover dynamics have spectral radius >= 1."""


class UnstableGain(ValueError):
    """Controller/observer gain does not stabilize the plant."""


def _as_matrix(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def _stable_matrix(M: np.ndarray) -> bool:
    if M.shape[0] == 0:
        return True
    return bool(np.max(np.abs(np.linalg.eigvals(M))) < 1.0 - STABILITY_MARGIN)


# -- component types ---------------------------------------------------------


@dataclass(frozen=True)
class Plant:
    """LTI plant with measured rows stacked above performance rows.

    ss.C is [C_meas; C_perf]; ss.D is zero (a direct feed from actuation to
    the performance output would make the attacked gain trivially unbounded,
    so it is ruled out at construction).
    """

    ss: StateSpace
    p: int    # measured-output rows
    p_J: int  # performance-output rows

    def __post_init__(self):
        if self.p < 1 or self.p_J < 1 or self.p + self.p_J != self.ss.p:
            raise DimensionMismatch("output row split does not match stacked C")
        if np.any(self.ss.D != 0.0):
            raise ValueError("plant feedthrough must be zero (D = 0)")
        if not is_controllable(self.ss.A, self.ss.B):
            raise ValueError("plant is not controllable from its actuation input")
        if not is_observable(self.C_meas, self.ss.A):
            raise ValueError("plant is not observable from its measured output")

    @property
    def A(self) -> np.ndarray:
        return self.ss.A

    @property
    def B(self) -> np.ndarray:
        return self.ss.B

    @property
    def C_meas(self) -> np.ndarray:
        return self.ss.C[: self.p]

    @property
    def C_perf(self) -> np.ndarray:
        return self.ss.C[self.p :]

    @property
    def n(self) -> int:
        return self.ss.n

    @property
    def m(self) -> int:
        return self.ss.m


def make_plant(A, B, C_meas, C_perf) -> Plant:
    A, B, C_meas, C_perf = map(_as_matrix, (A, B, C_meas, C_perf))
    ss = make_statespace(
        A,
        B,
        np.vstack([C_meas, C_perf]),
        np.zeros((C_meas.shape[0] + C_perf.shape[0], B.shape[1])),
    )
    return Plant(ss, C_meas.shape[0], C_perf.shape[0])


@dataclass(frozen=True)
class Controller:
    """Observer-based output feedback: u_c = K x_hat, innovation gain L.

    B_c is the observer's input matrix; None means "use the plant's B",
    which is the standard observer and the default everywhere.
    """

    K: np.ndarray
    L: np.ndarray
    B_c: np.ndarray | None = None


def make_controller(K, L, B_c=None) -> Controller:
    K, L = _as_matrix(K), _as_matrix(L)
    for name, M in (("K", K), ("L", L)):
        if not np.all(np.isfinite(M)):
            raise ValueError(f"controller gain {name} contains NaN or Inf")
    return Controller(K, L, None if B_c is None else _as_matrix(B_c))


@dataclass(frozen=True)
class WatermarkPair:
    """A remover filter and the generator obtained by exact inversion.

    series(remover, generator) has identity transfer, so with equal initial
    states the watermark is transparent to the loop (removal is exact, not
    approximate).
    """

    remover: StateSpace
    generator: StateSpace


def make_watermark_pair(A_s, B_s, C_s, D_s) -> WatermarkPair:
    """Build a generator/remover pair from the remover's matrices.

    The remover must be square, stable, and have an invertible feedthrough;
    the generator is its state-space inverse.
    """
    rem = make_statespace(A_s, B_s, C_s, D_s)
    if not is_stable(rem):
        raise UnstableRemover(
            "remover dynamics must have spectral radius < 1"
        )
    return WatermarkPair(rem, invert(rem))


def identity_pair(m: int) -> WatermarkPair:
    """The trivial watermark: both sides are the static identity."""
    eye = identity_system(m)
    return WatermarkPair(eye, eye)


# -- closed-loop container ---------------------------------------------------


@dataclass(frozen=True)
class ClosedLoop:
    """Attacked closed loop with output stacked as [y1 (residual); y2 (performance)].

    state_layout / input_layout name the block coordinates of ss; taps are
    extra row maps (C_tap, D_tap) for internal signals worth recording in
    simulation (u_c, u_h, y_p, y_q).
    """

    ss: StateSpace
    rows_y1: int
    rows_y2: int
    state_layout: tuple[tuple[str, int], ...]
    input_layout: tuple[tuple[str, int], ...]
    taps: dict

    def __post_init__(self):
        if self.rows_y1 + self.rows_y2 != self.ss.p:
            raise DimensionMismatch("rows_y1 + rows_y2 must equal total output rows")
        if sum(d for _, d in self.state_layout) != self.ss.n:
            raise DimensionMismatch("state_layout block sizes must sum to n")
        if sum(d for _, d in self.input_layout) != self.ss.m:
            raise DimensionMismatch("input_layout block sizes must sum to m")

    @property
    def C1(self) -> np.ndarray:
        return self.ss.C[: self.rows_y1]

    @property
    def D1(self) -> np.ndarray:
        return self.ss.D[: self.rows_y1]

    @property
    def C2(self) -> np.ndarray:
        return self.ss.C[self.rows_y1 :]

    @property
    def D2(self) -> np.ndarray:
        return self.ss.D[self.rows_y1 :]

    def block_slice(self, name: str) -> slice:
        at = 0
        for blk, d in self.state_layout:
            if blk == name:
                return slice(at, at + d)
            at += d
        raise KeyError(f"no state block named {name!r}")


# -- affine signal algebra ---------------------------------------------------


class _Aff:
    """Affine expression over named basis blocks: sum of M_b * block_b.

    Coefficients may be ndarrays or solver expressions; only +, - and
    left-multiplication are ever needed.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = dict(terms or {})

    def __add__(self, other: "_Aff") -> "_Aff":
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v
        return _Aff(out)

    def __sub__(self, other: "_Aff") -> "_Aff":
        return self + other.lmul(-1.0)

    def lmul(self, M) -> "_Aff":
        if np.isscalar(M):
            return _Aff({k: M * v for k, v in self.terms.items()})
        return _Aff({k: M @ v for k, v in self.terms.items()})


def _unit(name: str, dim: int) -> _Aff:
    return _Aff({name: np.eye(dim)})


def _rows(aff: _Aff, basis, rdim: int) -> list:
    return [aff.terms.get(name, np.zeros((rdim, dim))) for name, dim in basis]


def _bmat(rows: list) -> np.ndarray:
    if all(isinstance(b, np.ndarray) for row in rows for b in row):
        return np.block(rows)
    import cvxpy as cp

    return cp.bmat(rows)


def _dim(aff: _Aff, basis) -> int:
    for name, dim in basis:
        if name in aff.terms:
            return aff.terms[name].shape[0]
    raise KeyError("expression has no terms over the given basis")


def invert_parts(A, B, C, D):
    """Expression-level mirror of statespace.invert for fixed, numeric (C, D).

    A and B may be solver expressions; C and D must be plain arrays (the
    design step keeps them fixed), so D is inverted numerically.
    """
    Di = np.linalg.inv(_as_matrix(D))
    C = _as_matrix(C)
    return (A - B @ (Di @ C), -B @ Di, Di @ C, Di)


def loop_parts(Ap, Bp, Cp, CJ, K, L, Bc, rem_in, gen_in, rem_out, gen_out, covert):
    """Wire the watermarked loop and collect its coefficient blocks.

    rem_*/gen_* are (A, B, C, D) tuples; the signal path is
    u_c -> generator -> (+phi_u) -> remover -> plant -> generator -> (+phi_y)
    -> remover -> controller, with phi_y either a free input (covert=False)
    or the output of an embedded plant copy driven by phi_u (covert=True).

    Returns (A, B, C1, D1, C2, D2, state_layout, input_layout, taps).
    """
    n, m, p = Ap.shape[0], Bp.shape[1], Cp.shape[0]
    Ag, Bg, Cg, Dg = gen_in
    Ah, Bh, Ch, Dh = rem_in
    Aw, Bw, Cw, Dw = gen_out
    Aq, Bq, Cq, Dq = rem_out
    ng, nh = Cg.shape[1], Ch.shape[1]
    nw, nq = Cw.shape[1], Cq.shape[1]

    blocks = [("x_p", n), ("e", n), ("x_g", ng), ("x_h", nh), ("x_w", nw), ("x_q", nq)]
    if covert:
        blocks.append(("x_a", n))
    inputs = [("phi_u", m)] if covert else [("phi_u", m), ("phi_y", p)]
    basis = blocks + inputs

    x_p, e = _unit("x_p", n), _unit("e", n)
    x_g, x_h = _unit("x_g", ng), _unit("x_h", nh)
    x_w, x_q = _unit("x_w", nw), _unit("x_q", nq)
    phi_u = _unit("phi_u", m)
    phi_y = _unit("x_a", n).lmul(-Cp) if covert else _unit("phi_y", p)

    x_hat = x_p - e
    u_c = x_hat.lmul(K)
    nu_h = x_g.lmul(Cg) + u_c.lmul(Dg) + phi_u          # generated + attacked input
    u_h = x_h.lmul(Ch) + nu_h.lmul(Dh)                  # what the actuator applies
    y_p = x_p.lmul(Cp)
    nu_q = x_w.lmul(Cw) + y_p.lmul(Dw) + phi_y          # watermarked + attacked output
    y_q = x_q.lmul(Cq) + nu_q.lmul(Dq)                  # what the controller receives
    y_r = y_q - x_hat.lmul(Cp)
    y_J = x_p.lmul(CJ)

    x_p_next = x_p.lmul(Ap) + u_h.lmul(Bp)
    x_hat_next = x_hat.lmul(Ap) + u_c.lmul(Bc) + y_r.lmul(L)
    up = {
        "x_p": x_p_next,
        "e": x_p_next - x_hat_next,
        "x_g": x_g.lmul(Ag) + u_c.lmul(Bg),
        "x_h": x_h.lmul(Ah) + nu_h.lmul(Bh),
        "x_w": x_w.lmul(Aw) + y_p.lmul(Bw),
        "x_q": x_q.lmul(Aq) + nu_q.lmul(Bq),
    }
    if covert:
        up["x_a"] = _unit("x_a", n).lmul(Ap) + phi_u.lmul(Bp)

    state_layout = tuple((nm, d) for nm, d in blocks if d > 0)
    input_layout = tuple((nm, d) for nm, d in inputs)
    live = [b for b in blocks if b[1] > 0]
    A = _bmat([_rows(up[nm], live, d) for nm, d in live])
    B = _bmat([_rows(up[nm], inputs, d) for nm, d in live])
    C1 = _bmat([_rows(y_r, live, p)])
    D1 = _bmat([_rows(y_r, inputs, p)])
    C2 = _bmat([_rows(y_J, live, CJ.shape[0])])
    D2 = _bmat([_rows(y_J, inputs, CJ.shape[0])])
    taps = {}
    for nm, sig in (("u_c", u_c), ("u_h", u_h), ("y_p", y_p), ("y_q", y_q)):
        rdim = _dim(sig, basis)
        taps[nm] = (_bmat([_rows(sig, live, rdim)]), _bmat([_rows(sig, inputs, rdim)]))
    return A, B, C1, D1, C2, D2, state_layout, input_layout, taps


# -- assembly front ends -----------------------------------------------------


def _check_interconnect(P: Plant, C: Controller, input_pair, output_pair):
    n, m, p = P.n, P.m, P.p
    if C.K.shape != (m, n):
        raise DimensionMismatch(f"K is {C.K.shape}, expected ({m}, {n})")
    if C.L.shape != (n, p):
        raise DimensionMismatch(f"L is {C.L.shape}, expected ({n}, {p})")
    if C.B_c is not None and C.B_c.shape != (n, m):
        raise DimensionMismatch(f"B_c is {C.B_c.shape}, expected ({n}, {m})")
    if input_pair.remover.m != m:
        raise DimensionMismatch("input-side watermark pair must act on the actuation channel")
    if output_pair.remover.m != p:
        raise DimensionMismatch("output-side watermark pair must act on the measurement channel")
    if not _stable_matrix(P.A + P.B @ C.K):
        raise UnstableGain("state-feedback gain K does not stabilize the plant")
    if not _stable_matrix(P.A - C.L @ P.C_meas):
        raise UnstableGain("observer gain L does not stabilize the error dynamics")


def _wrap_loop(parts) -> ClosedLoop:
    A, B, C1, D1, C2, D2, state_layout, input_layout, taps = parts
    ss = make_statespace(A, B, np.vstack([C1, C2]), np.vstack([D1, D2]))
    return ClosedLoop(ss, C1.shape[0], C2.shape[0], state_layout, input_layout, taps)


def _pair_parts(pair: WatermarkPair):
    r, g = pair.remover, pair.generator
    return (r.A, r.B, r.C, r.D), (g.A, g.B, g.C, g.D)


def assemble_watermarked(
    P: Plant,
    C: Controller,
    input_pair: WatermarkPair,
    output_pair: WatermarkPair,
    covert: bool,
) -> ClosedLoop:
    """Closed loop with watermark filters on both channels.

    covert=True embeds the attacker's plant replica (attack input is phi_u
    alone); covert=False leaves both injection points as free inputs
    [phi_u; phi_y].
    """
    _check_interconnect(P, C, input_pair, output_pair)
    Bc = P.B if C.B_c is None else C.B_c
    rem_in, gen_in = _pair_parts(input_pair)
    rem_out, gen_out = _pair_parts(output_pair)
    return _wrap_loop(
        loop_parts(
            P.A, P.B, P.C_meas, P.C_perf, C.K, C.L, Bc,
            rem_in, gen_in, rem_out, gen_out, covert,
        )
    )


def assemble_nominal(P: Plant, C: Controller) -> ClosedLoop:
    """Un-watermarked loop under additive attack a = [phi_u; phi_y].

    Identical to assemble_watermarked with identity pairs: the watermark
    blocks are empty and the state reduces to [x_p, e].
    """
    return assemble_watermarked(P, C, identity_pair(P.m), identity_pair(P.p), False)


def assemble_attack_channel(
    input_pair: WatermarkPair, P: Plant, output_pair: WatermarkPair
) -> StateSpace:
    """What the detector can still see of a covert attack.

    The attack input phi_u travels through remover -> plant -> generator,
    while the attacker subtracts its own un-watermarked plant copy; the
    difference is the residual's attack component.  With identity watermarks
    the transfer is exactly zero (the covert attack is invisible).
    """
    meas = make_statespace(P.A, P.B, P.C_meas, np.zeros((P.p, P.m)))
    through = series(output_pair.generator, series(meas, input_pair.remover))
    return parallel_sub(through, meas)
