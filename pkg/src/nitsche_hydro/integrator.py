"""Energy-conserving two-stage time integration with step control.

One step from state ``n`` with step ``dt``::

    v_half = v_n - dt/2 * M_V^{-1} (F_n 1 - B_n)
    e_half = e_n + dt/2 * M_E^{-1} (F_n^T v_half + R_n)
    x_half = x_n + dt/2 * v_half
    v_new  = v_n - dt * M_V^{-1} (F_half 1 - B_half)
    e_new  = e_n + dt * M_E^{-1} (F_half^T v_bar + R_half),  v_bar = (v_new + v_n) / 2
    x_new  = x_n + dt * v_bar

Using ``v_half`` in the first energy update and the average ``v_bar`` in the
second makes the kinetic and internal energy changes cancel exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .mesh import TangledElementError
from .operators import ForceResult, HydroOperator

log = logging.getLogger(__name__)


class StepRejected(Exception):
    """Raised internally when a trial step must be retried with a smaller dt."""


class TimeStepError(RuntimeError):
    """Too many consecutive rejections or an invalid time-step estimate."""


@dataclass
class HydroState:
    x: np.ndarray           # (n_V, d) node positions
    v: np.ndarray           # (n_V, d) node velocities
    e: np.ndarray           # (n_E,) specific internal energy dofs
    t: float = 0.0
    dt: float = 0.0
    step_count: int = 0
    rejected: int = 0       # rejected attempts before this state was accepted
    force: ForceResult | None = field(default=None, repr=False, compare=False)
    # midpoint state of the step that produced this one, kept for audits
    half: "HydroState | None" = field(default=None, repr=False, compare=False)

    def copy(self) -> "HydroState":
        return HydroState(self.x.copy(), self.v.copy(), self.e.copy(), self.t, self.dt,
                          self.step_count, self.rejected, self.force)


@dataclass(frozen=True)
class StepControls:
    cfl: float = 0.5
    dt_init: float = 0.01
    dt_max: float = 1.0
    growth: float = 1.02
    shrink: float = 0.5
    t_final: float = 0.8
    max_rejections: int = 20
    energy_floor: float = -1e-12

    def __post_init__(self):
        if not 0.0 < self.shrink < 1.0 < self.growth:
            raise ValueError("need 0 < shrink < 1 < growth")
        if self.cfl <= 0 or self.dt_init <= 0 or self.dt_max <= 0:
            raise ValueError("cfl, dt_init and dt_max must be positive")


def estimate_dt(force: ForceResult, controls: StepControls, dt_prev: float | None = None) -> float:
    """CFL estimate ``cfl * min l / (c_s + mu / (rho l))`` capped by ``dt_max``
    and by ``growth * dt_prev``."""
    est = controls.cfl * force.dt_unit
    if not est > 0:
        raise TimeStepError(f"nonpositive time-step estimate {est}")
    dt = min(est, controls.dt_max)
    if dt_prev is not None:
        dt = min(dt, controls.growth * dt_prev)
    return dt


def _element_mean_energy(op: HydroOperator, e: np.ndarray) -> np.ndarray:
    blocks = op.mass_e.blocks
    ne, nl, _ = blocks.shape
    weighted = np.einsum("eml,el->e", blocks, e.reshape(ne, nl))
    return weighted / blocks.sum(axis=(1, 2))


def _attempt(state: HydroState, op: HydroOperator, dt: float, force_n: ForceResult,
             controls: StepControls) -> HydroState:
    x0, v0, e0 = state.x, state.v, state.e
    acc = op.acceleration(force_n)
    v_half = v0 + 0.5 * dt * acc
    e_half = e0 + 0.5 * dt * op.energy_rate(force_n, v_half)
    x_half = x0 + 0.5 * dt * v_half
    half = HydroState(x_half, v_half, e_half, state.t + 0.5 * dt)
    try:
        force_h = op.force(half)
    except TangledElementError as exc:
        raise StepRejected(f"tangled at half step: {exc}") from None
    if dt > force_h.dt_unit:
        raise StepRejected(f"dt {dt:.3e} above the half-step stability limit {force_h.dt_unit:.3e}")
    acc_h = op.acceleration(force_h, acc)
    v1 = v0 + dt * acc_h
    v_bar = 0.5 * (v1 + v0)
    e1 = e0 + dt * op.energy_rate(force_h, v_bar)
    x1 = x0 + dt * v_bar
    if _element_mean_energy(op, e1).min() < controls.energy_floor:
        raise StepRejected("negative element-average internal energy")
    half.force = force_h
    new = HydroState(x1, v1, e1, state.t + dt, dt, state.step_count + 1, half=half)
    try:
        new.force = op.force(new)
    except TangledElementError as exc:
        raise StepRejected(f"tangled after step: {exc}") from None
    return new


def rk2_average_step(state: HydroState, op: HydroOperator, controls: StepControls,
                     dt: float | None = None) -> HydroState:
    """Advance one accepted step, retrying with ``shrink * dt`` after rejections.

    ``dt`` defaults to ``state.dt``.  The returned state carries the force
    evaluated at its own configuration, reused as ``F_n`` of the next step.
    """
    dt = state.dt if dt is None else dt
    if dt <= 0:
        raise TimeStepError("time step must be positive")
    force_n = state.force if state.force is not None else op.force(state)
    target = controls.t_final
    for attempt in range(controls.max_rejections + 1):
        try:
            new = _attempt(state, op, dt, force_n, controls)
        except StepRejected as why:
            log.debug("step %d rejected (dt=%.3e): %s", state.step_count + 1, dt, why)
            dt *= controls.shrink
            continue
        if state.t < target and new.t >= target - 1e-14 * max(1.0, abs(target)):
            new.t = target
        new.rejected = attempt
        return new
    raise TimeStepError(f"{controls.max_rejections} consecutive step rejections at t={state.t:.6g}")


@dataclass
class RunResult:
    state: HydroState
    times: list[float]
    steps: list[int]
    rejections: int = 0


Hook = Callable[[HydroState, HydroOperator], None]


def run(state: HydroState, op: HydroOperator, controls: StepControls,
        hooks: Iterable[Hook] = (), output_every: int = 10,
        step_callback: Callable[[HydroState, HydroState], None] | None = None) -> RunResult:
    """Advance ``state`` to ``controls.t_final``.

    ``hooks`` are called with the current state at step 0, every
    ``output_every`` steps and at the final time.  ``step_callback`` receives
    ``(old, new)`` after every accepted step.
    """
    hooks = list(hooks)
    cur = state
    if cur.force is None:
        cur.force = op.force(cur)
    times, steps = [cur.t], [cur.step_count]
    rejections = 0
    for hook in hooks:
        hook(cur, op)
    dt_prev = cur.dt if cur.dt > 0 else controls.dt_init
    first = cur.dt <= 0
    while cur.t < controls.t_final:
        dt = estimate_dt(cur.force, controls, None if first else dt_prev)
        if first:
            dt = min(dt, controls.dt_init)
            first = False
        remaining = controls.t_final - cur.t
        if dt >= remaining:
            dt = remaining
        new = rk2_average_step(cur, op, controls, dt)
        if step_callback is not None:
            step_callback(cur, new)
        dt_prev = new.dt
        rejections += new.rejected
        cur = new
        if cur.t > times[-1]:
            times.append(cur.t)
            steps.append(cur.step_count)
        if cur.step_count % output_every == 0 or cur.t >= controls.t_final:
            for hook in hooks:
                hook(cur, op)
    return RunResult(cur, times, steps, rejections)
