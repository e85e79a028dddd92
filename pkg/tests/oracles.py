"""Independent reference implementations the tests compare against.

Everything here is deliberately written from the block diagram and textbook
formulas, not from the package internals: transfer values via the Schur
determinant identity, SISO polynomials via characteristic-polynomial
algebra, the closed loop as seven separate recursions wired by signals, and
the gain as a brute-force frequency sweep.
"""

from __future__ import annotations

import numpy as np

from wmlab.attacks import activation
from wmlab.statespace import StateSpace
from wmlab.systems import Controller, Plant, WatermarkPair


def det_tf_eval(s: StateSpace, z: complex) -> complex:
    """SISO transfer value via det([zI - A, -B; C, D]) / det(zI - A)."""
    n = s.n
    top = np.hstack([z * np.eye(n) - s.A, -s.B])
    bot = np.hstack([s.C, s.D]).astype(complex)
    return complex(np.linalg.det(np.vstack([top, bot])) / np.linalg.det(z * np.eye(n) - s.A))


def siso_polynomials(s: StateSpace) -> tuple[np.ndarray, np.ndarray]:
    """(numerator, denominator) coefficients of a SISO system.

    Uses det(zI - A + B C) = det(zI - A) (1 + C (zI - A)^{-1} B), so the
    strictly proper part's numerator is charpoly(A - B C) - charpoly(A).
    """
    den = np.poly(np.linalg.eigvals(s.A)) if s.n else np.array([1.0])
    if s.n == 0:
        return np.atleast_1d(float(s.D[0, 0])), den
    shifted = np.poly(np.linalg.eigvals(s.A - s.B @ s.C))
    num = (shifted - den) + float(s.D[0, 0]) * den
    return num, den


def freq_gain_ratio(A, B, C1, D1, C2, D2, npoints: int = 10_000) -> float:
    """sup over the unit circle of sigma_max(G2)^2 / sigma_min(G1)^2.

    A frequency-sampled lower bound on the attack-energy amplification; for
    channels without unstable zeros it is tight as npoints grows.
    """
    n = A.shape[0]
    best = 0.0
    for w in np.linspace(0.0, np.pi, npoints):
        z = np.exp(1j * w)
        X = np.linalg.solve(z * np.eye(n) - A, B)
        G1 = C1 @ X + D1
        G2 = C2 @ X + D2
        s1 = np.linalg.svd(G1, compute_uv=False)
        s2 = np.linalg.svd(G2, compute_uv=False)
        lo = float(s1[-1]) if s1.size else 0.0
        hi = float(s2[0]) if s2.size else 0.0
        if lo <= 1e-14:
            if hi > 1e-12:
                return np.inf
            continue
        best = max(best, (hi / lo) ** 2)
    return best


def component_simulate(plant: Plant, controller: Controller,
                       input_pair: WatermarkPair, output_pair: WatermarkPair,
                       phi_u: np.ndarray, phi_y: np.ndarray | None,
                       N: int, covert: bool, K_a: int = 0,
                       b: float = 0.0) -> dict:
    """Step every block of the control loop separately, wired by signals.

    Blocks: observer-based controller, input watermark generator/remover,
    plant, output watermark generator/remover, and (covert case) the
    attacker's plant replica producing the sensor-side injection.  Returns
    the per-step signals for comparison against the matrix-form simulation.
    """
    G, H = input_pair.generator, input_pair.remover
    W, Q = output_pair.generator, output_pair.remover
    Bc = plant.B if controller.B_c is None else controller.B_c

    xp = np.zeros(plant.n)
    xhat = np.zeros(plant.n)
    xg = np.zeros(G.n)
    xh = np.zeros(H.n)
    xw = np.zeros(W.n)
    xq = np.zeros(Q.n)
    xa = np.zeros(plant.n)

    phi_u = np.atleast_2d(np.asarray(phi_u, dtype=float))
    if phi_u.shape[0] == 1 and phi_u.shape[1] > 1:
        phi_u = phi_u.T
    if phi_y is not None:
        phi_y = np.atleast_2d(np.asarray(phi_y, dtype=float))
        if phi_y.shape[0] == 1 and phi_y.shape[1] > 1:
            phi_y = phi_y.T

    out = {k: np.zeros((N + 1, d)) for k, d in (
        ("y_r", plant.p), ("y_J", plant.C_perf.shape[0]), ("u_c", plant.m),
        ("u_h", plant.m), ("y_p", plant.p), ("y_q", plant.p))}

    for k in range(N + 1):
        beta = activation(k, K_a, b)
        pu = beta * phi_u[k] if k < phi_u.shape[0] else np.zeros(plant.m)
        if covert:
            py = -(plant.C_meas @ xa)
        elif phi_y is not None and k < phi_y.shape[0]:
            py = beta * phi_y[k]
        else:
            py = np.zeros(plant.p)

        u_c = controller.K @ xhat
        u_g = (G.C @ xg if G.n else 0.0) + G.D @ u_c
        u_tilde = u_g + pu
        u_h = (H.C @ xh if H.n else 0.0) + H.D @ u_tilde
        y_p = plant.C_meas @ xp
        y_J = plant.C_perf @ xp
        y_w = (W.C @ xw if W.n else 0.0) + W.D @ y_p
        y_tilde = y_w + py
        y_q = (Q.C @ xq if Q.n else 0.0) + Q.D @ y_tilde
        y_r = y_q - plant.C_meas @ xhat

        for name, val in (("y_r", y_r), ("y_J", y_J), ("u_c", u_c),
                          ("u_h", u_h), ("y_p", y_p), ("y_q", y_q)):
            out[name][k] = val

        if G.n:
            xg = G.A @ xg + G.B @ u_c
        if H.n:
            xh = H.A @ xh + H.B @ u_tilde
        if W.n:
            xw = W.A @ xw + W.B @ y_p
        if Q.n:
            xq = Q.A @ xq + Q.B @ y_tilde
        xp = plant.A @ xp + plant.B @ u_h
        xhat = plant.A @ xhat + Bc @ u_c + controller.L @ y_r
        if covert and k >= K_a:
            xa = plant.A @ xa + plant.B @ pu
    return out


def random_stable_matrix(rng: np.random.Generator, n: int,
                         radius: float = 0.8) -> np.ndarray:
    if n == 0:
        return np.zeros((0, 0))
    A = rng.standard_normal((n, n))
    rho = max(np.abs(np.linalg.eigvals(A)))
    return A * (radius / rho) if rho > 0 else A


def random_siso_channel_pair(rng: np.random.Generator, n: int):
    """Random (A, B, C1, D1, C2, D2) with stable A and nonzero feedthroughs."""
    A = random_stable_matrix(rng, n, radius=float(rng.uniform(0.3, 0.9)))
    B = rng.standard_normal((n, 1))
    C1 = rng.standard_normal((1, n))
    C2 = rng.standard_normal((1, n))
    D1 = rng.standard_normal((1, 1)) + np.sign(rng.standard_normal()) * 0.5
    D2 = rng.standard_normal((1, 1))
    return A, B, C1, D1, C2, D2
