"""Attack sequences, time-domain simulation, detection test and signal energies.

Covert attacks carry their own plant replica: the sensor-side injection is
computed (never supplied) so that, absent watermarking, the residual stays
blind.  Simulation is the exact double-precision linear recursion of the
assembled closed loop -- no noise, no discretization error on top.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .statespace import DimensionMismatch
from .systems import ClosedLoop, Plant

DIVERGENCE_LIMIT = 1e12

COVERT = "Covert"
RAW_ADDITIVE = "RawAdditive"


class WindowOutOfRange(ValueError):
    """Energy window extends outside the recorded horizon."""


class DivergenceDetected(RuntimeWarning):
    """A simulated state exceeded the divergence limit; result is flagged."""


def activation(k: int, K_a: int, b: float) -> float:
    """Attack ramp: 0 before onset, 1 - b^(k - K_a) from onset on.

    b = 0 gives a hard switch-on (the 0**0 case is pinned to 0 so the attack
    is fully active at k = K_a itself).
    """
    if not 0.0 <= b <= 1.0:
        raise ValueError("activation base must lie in [0, 1]")
    if k < K_a:
        return 0.0
    if b == 0.0:
        return 1.0
    return 1.0 - b ** (k - K_a)


@dataclass(frozen=True)
class AttackScenario:
    """What the adversary injects and when.

    phi_u has shape (N+1, m).  For kind=Covert, phi_y is derived from the
    attacker's plant copy and must be left None; for kind=RawAdditive a None
    phi_y means no sensor-side injection.  b may be a scalar or a per-channel
    vector of activation bases.
    """

    kind: str
    phi_u: np.ndarray
    phi_y: np.ndarray | None = None
    K_a: int = 0
    b: float | np.ndarray = 0.0

    def __post_init__(self):
        if self.kind not in (COVERT, RAW_ADDITIVE):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.K_a < 0:
            raise ValueError("onset K_a must be >= 0")
        pu = np.atleast_2d(np.asarray(self.phi_u, dtype=float))
        if pu.shape[0] == 1 and pu.shape[1] > 1:
            pu = pu.T  # accept a 1-D sequence for single-input attacks
        object.__setattr__(self, "phi_u", pu)
        if not np.all(np.isfinite(pu)):
            raise ValueError("phi_u contains NaN or Inf")
        if self.kind == COVERT and self.phi_y is not None:
            raise ValueError("covert attacks generate phi_y; do not supply it")
        if self.phi_y is not None:
            py = np.atleast_2d(np.asarray(self.phi_y, dtype=float))
            if py.shape[0] == 1 and py.shape[1] > 1:
                py = py.T
            if not np.all(np.isfinite(py)):
                raise ValueError("phi_y contains NaN or Inf")
            object.__setattr__(self, "phi_y", py)


def activated(seq: np.ndarray, K_a: int, b, nsteps: int) -> np.ndarray:
    """Apply the activation ramp channel-wise; pad/truncate to nsteps rows."""
    m = seq.shape[1]
    bvec = np.broadcast_to(np.asarray(b, dtype=float).ravel(), (m,))
    out = np.zeros((nsteps, m))
    upto = min(nsteps, seq.shape[0])
    for k in range(upto):
        beta = np.array([activation(k, K_a, bl) for bl in bvec])
        out[k] = beta * seq[k]
    return out


def covert_phi_y(plant: Plant, phi_u: np.ndarray, K_a: int = 0) -> np.ndarray:
    """Sensor-side component of the covert attack: minus the replica's output.

    The attacker steps its own copy of the plant on phi_u starting from a
    zero state at onset; phi_y[k] = -C_meas x_a[k], zero before K_a.
    """
    phi_u = np.atleast_2d(np.asarray(phi_u, dtype=float))
    if phi_u.shape[0] == 1 and phi_u.shape[1] > 1:
        phi_u = phi_u.T
    N1 = phi_u.shape[0]
    out = np.zeros((N1, plant.p))
    x_a = np.zeros(plant.n)
    for k in range(K_a, N1):
        out[k] = -(plant.C_meas @ x_a)
        x_a = plant.A @ x_a + plant.B @ phi_u[k]
    return out


@dataclass
class SimResult:
    """Per-step trajectories of a closed-loop simulation, k = 0..N."""

    N: int
    x: np.ndarray
    attack: np.ndarray
    y_r: np.ndarray
    y_J: np.ndarray
    u_c: np.ndarray
    u_h: np.ndarray
    y_p: np.ndarray
    y_q: np.ndarray
    state_layout: tuple = ()
    diverged: bool = False


def build_attack_input(loop: ClosedLoop, scenario: AttackScenario, N: int,
                       plant: Plant | None = None) -> np.ndarray:
    """Assemble the loop's driving sequence a[0..N] from an attack scenario.

    Covert scenarios on a loop without an embedded replica need the plant to
    step the attacker's copy; loops with the replica embedded take phi_u only.
    """
    names = [nm for nm, _ in loop.input_layout]
    phi_u = activated(scenario.phi_u, scenario.K_a, scenario.b, N + 1)
    m_u = dict(loop.input_layout)["phi_u"]
    if phi_u.shape[1] != m_u:
        raise DimensionMismatch(
            f"phi_u has {phi_u.shape[1]} channels, loop expects {m_u}"
        )
    if names == ["phi_u"]:
        if scenario.kind == RAW_ADDITIVE and scenario.phi_y is not None:
            raise DimensionMismatch("loop has no sensor-side injection input")
        return phi_u
    p_y = dict(loop.input_layout)["phi_y"]
    if scenario.kind == COVERT:
        if plant is None:
            raise ValueError("covert phi_y generation requires the plant")
        phi_y = covert_phi_y(plant, phi_u, scenario.K_a)
    elif scenario.phi_y is None:
        phi_y = np.zeros((N + 1, p_y))
    else:
        phi_y = activated(scenario.phi_y, scenario.K_a, scenario.b, N + 1)
    if phi_y.shape[1] != p_y:
        raise DimensionMismatch(
            f"phi_y has {phi_y.shape[1]} channels, loop expects {p_y}"
        )
    return np.hstack([phi_u, phi_y])


def simulate(loop: ClosedLoop, scenario: AttackScenario, N: int,
             x0=None, plant: Plant | None = None) -> SimResult:
    """Exact recursion of the attacked loop over k = 0..N.

    Divergence (any state beyond DIVERGENCE_LIMIT in magnitude) is flagged on
    the result and warned about, not raised: the trajectory is still returned.
    """
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    ss = loop.ss
    a = build_attack_input(loop, scenario, N, plant)
    x = np.zeros(ss.n) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if x.shape != (ss.n,):
        raise DimensionMismatch(f"x0 has shape {x.shape}, expected ({ss.n},)")

    xs = np.zeros((N + 1, ss.n))
    ys = np.zeros((N + 1, ss.p))
    taps = {nm: np.zeros((N + 1, CD[0].shape[0])) for nm, CD in loop.taps.items()}
    diverged = False
    for k in range(N + 1):
        xs[k] = x
        ys[k] = ss.C @ x + ss.D @ a[k]
        for nm, (Ct, Dt) in loop.taps.items():
            taps[nm][k] = Ct @ x + Dt @ a[k]
        if not diverged and np.max(np.abs(x), initial=0.0) > DIVERGENCE_LIMIT:
            diverged = True
            warnings.warn(
                f"state magnitude exceeded {DIVERGENCE_LIMIT:g} at step {k}",
                DivergenceDetected,
            )
        x = ss.A @ x + ss.B @ a[k]
    return SimResult(
        N=N,
        x=xs,
        attack=a,
        y_r=ys[:, : loop.rows_y1],
        y_J=ys[:, loop.rows_y1 :],
        u_c=taps["u_c"],
        u_h=taps["u_h"],
        y_p=taps["y_p"],
        y_q=taps["y_q"],
        state_layout=loop.state_layout,
        diverged=diverged,
    )


def energy(signal, window=None) -> float:
    """Squared l2 norm over the window [k0, k1], both ends inclusive."""
    sig = np.atleast_2d(np.asarray(signal, dtype=float))
    if sig.shape[0] == 1 and sig.shape[1] > 1:
        sig = sig.T
    last = sig.shape[0] - 1
    k0, k1 = (0, last) if window is None else (int(window[0]), int(window[1]))
    if k0 < 0 or k1 > last or k0 > k1:
        raise WindowOutOfRange(f"window [{k0}, {k1}] outside [0, {last}]")
    return float(np.sum(sig[k0 : k1 + 1] ** 2))


def detect(y_r, theta_r: float = 1.0, window=None) -> bool:
    """Energy detector: alarm iff the windowed residual energy reaches theta_r."""
    if theta_r <= 0:
        raise ValueError("threshold theta_r must be positive")
    return energy(y_r, window) >= theta_r


# -- CSV interchange ---------------------------------------------------------


def _fmt(v: float) -> str:
    return "%.17g" % v


def sim_to_csv(result: SimResult) -> str:
    """Render a simulation as CSV: k, y_r_*, y_J_*, u_c_*, y_p_* columns."""
    cols = [("y_r", result.y_r), ("y_J", result.y_J),
            ("u_c", result.u_c), ("y_p", result.y_p)]
    header = ["k"]
    for nm, arr in cols:
        header += [f"{nm}_{i + 1}" for i in range(arr.shape[1])]
    lines = [", ".join(header)]
    for k in range(result.N + 1):
        row = [str(k)]
        for _, arr in cols:
            row += [_fmt(v) for v in arr[k]]
        lines.append(", ".join(row))
    return "\n".join(lines) + "\n"


def attack_from_csv(text: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Parse attack sequences from CSV with phi_u_* (and optional phi_y_*) columns."""
    rows = [r.strip() for r in text.strip().splitlines() if r.strip()]
    header = [h.strip() for h in rows[0].split(",")]
    iu = [i for i, h in enumerate(header) if h.startswith("phi_u_")]
    iy = [i for i, h in enumerate(header) if h.startswith("phi_y_")]
    if not iu:
        raise ValueError("CSV has no phi_u_* columns")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    phi_u = data[:, iu]
    phi_y = data[:, iy] if iy else None
    return phi_u, phi_y
