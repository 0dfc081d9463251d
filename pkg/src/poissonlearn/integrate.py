"""Implicit midpoint rule: Newton solve for data/rollouts, unrolled fixed point for training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEWTON_ITERS = 50
FIXED_POINT_ITERS = 200
TOL = 1e-12


class StepFailure(RuntimeError):
    """IMR solve did not reach the residual tolerance."""

    def __init__(self, x0, dt, residual):
        self.x0 = np.asarray(x0)
        self.dt = dt
        self.residual = residual
        super().__init__(f"IMR step failed (dt={dt}, residual={np.max(residual):.3e})")


class EmptyTrajectoryError(RuntimeError):
    pass


@dataclass
class Trajectory:
    states: np.ndarray
    dt: float
    system: str = ""
    seed: int = 0
    failed_at: int | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if len(self.states) < 2:
            raise ValueError("a trajectory needs at least two states")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.states[:-1], self.states[1:]


def _residual(field, x0, x1, dt):
    return x1 - x0 - dt * field(0.5 * (x0 + x1))


def _fd_jacobian(field, x, f0):
    # forward differences, all columns in one batched call
    n = x.shape[-1]
    h = 1e-7 * np.maximum(1.0, np.abs(x))                      # (B, n)
    shifted = x[None, :, :] + np.eye(n)[:, None, :] * h[None, :, :]
    fs = field(shifted.reshape(-1, n)).reshape(n, -1, n)       # (k, B, n)
    return np.moveaxis((fs - f0[None]) / h.T[:, :, None], 0, -1)   # (B, n, k)


def imr_solve(field, x0, dt, tol=TOL, newton_iters=NEWTON_ITERS, fixed_iters=FIXED_POINT_ITERS):
    """Batched IMR step.

    Returns ``(x1, residual)`` where ``residual`` is the per-sample max-norm of
    ``x1 - x0 - dt f((x0 + x1)/2)``; samples with residual above ``tol`` did not
    converge.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    n = x0.shape[-1]
    x1 = x0 + dt * field(x0)
    G = _residual(field, x0, x1, dt)
    res = np.max(np.abs(G), axis=-1)
    res[~np.isfinite(res)] = np.inf
    eye = np.eye(n)
    # polish well below tol so quadratic invariants survive long rollouts
    target = tol * 1e-3
    stalled = np.zeros(len(x0), dtype=bool)
    for _ in range(newton_iters):
        active = (res > target) & ~stalled
        if not active.any():
            break
        xa, x0a, Ga = x1[active], x0[active], G[active]
        mid = 0.5 * (x0a + xa)
        fm = field(mid)
        J = eye - 0.5 * dt * _fd_jacobian(field, mid, fm)
        try:
            delta = np.linalg.solve(J, Ga[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        step = np.ones(len(xa))
        best_x, best_res, best_G = xa.copy(), res[active].copy(), Ga.copy()
        for _ in range(8):   # damping by halving
            trial = xa - step[:, None] * delta
            Gt = _residual(field, x0a, trial, dt)
            rt = np.max(np.abs(Gt), axis=-1)
            rt[~np.isfinite(rt)] = np.inf
            better = rt < best_res
            best_x[better], best_res[better], best_G[better] = trial[better], rt[better], Gt[better]
            if better.all():
                break
            step = np.where(better, 0.0, step * 0.5)
            if not step.any():
                break
        improved = best_res < res[active]
        stalled[np.flatnonzero(active)[~improved]] = True
        x1[active], res[active], G[active] = best_x, best_res, best_G
    active = res > tol
    if active.any():
        xa, x0a = x1[active], x0[active]
        ra = res[active]
        for _ in range(fixed_iters):
            nxt = x0a + dt * field(0.5 * (x0a + xa))
            Gt = _residual(field, x0a, nxt, dt)
            rt = np.max(np.abs(Gt), axis=-1)
            rt[~np.isfinite(rt)] = np.inf
            ok = rt < ra
            xa[ok], ra[ok] = nxt[ok], rt[ok]
            if not np.any(ra > tol) or not ok.any():
                break
        x1[active], res[active] = xa, ra
    return x1, res


def imr_step(field, x0, dt, tol=TOL):
    """One implicit-midpoint step ``x1 = x0 + dt f((x0 + x1)/2)``.

    Accepts a single state or a batch; raises :class:`StepFailure` if any
    sample misses the tolerance.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    x1, res = imr_solve(field, x0, dt, tol)
    if np.any(res > tol):
        raise StepFailure(x0, dt, res)
    return x1.reshape(x0.shape)


def imr_step_unrolled(field, x0, dt, iters: int):
    """Fixed-point IMR iteration unrolled ``iters`` times; differentiable when
    ``field`` records on a tape."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    x = x0
    for _ in range(iters):
        x = x0 + dt * field((x0 + x) * 0.5)
    return x


def simulate_batch(field, x0, dt, steps, max_abs=None, tol=TOL):
    """Integrate many initial conditions together.

    Returns ``(states, lengths)``: ``states`` has shape ``(K, steps + 1, n)``
    with NaN after a trajectory's last valid state; ``lengths[k]`` counts valid
    states.  A trajectory stops at its first failed step or when a coordinate
    exceeds ``max_abs``.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    K, n = x0.shape
    out = np.full((K, steps + 1, n), np.nan)
    out[:, 0] = x0
    lengths = np.ones(K, dtype=int)
    alive = np.ones(K, dtype=bool)
    cur = x0.copy()
    for t in range(steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x1, res = imr_solve(field, cur[idx], dt, tol)
        ok = res <= tol
        if max_abs is not None:
            ok &= np.all(np.abs(x1) <= max_abs, axis=-1)
        good = idx[ok]
        out[good, t + 1] = x1[ok]
        cur[good] = x1[ok]
        lengths[good] += 1
        alive[idx[~ok]] = False
    return out, lengths


def simulate(field, x0, dt, steps, max_abs=None, system="", seed=0) -> Trajectory:
    """Integrate a single initial condition; truncates at the first failure."""
    states, lengths = simulate_batch(field, np.asarray(x0)[None], dt, steps, max_abs)
    m = int(lengths[0])
    if m < 2:
        raise EmptyTrajectoryError("the first IMR step already failed")
    return Trajectory(states[0, :m], dt, system, seed, None if m == steps + 1 else m - 1)

