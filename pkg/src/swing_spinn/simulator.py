"""Swing-equation integration through a fault sequence.

The integrator is an explicit Dormand-Prince 5(4) pair with PI step-size
control and Shampine's 4th-order continuous extension for dense output.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netmodel import (NetworkCase, OperatingCondition, ReducedModel, StageModels,
                       electrical_power, stage_models)

SCHEMA_VERSION = 1

# Butcher tableau (Dormand & Prince 1980)
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
# 5th-order minus embedded 4th-order weights
E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# dense output: y(t + th) = y + h * K.T @ (P @ [th, th^2, th^3, th^4])
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class StepUnderflowError(RuntimeError):
    def __init__(self, message, t_reached, oc_id=None):
        super().__init__(message)
        self.t_reached = t_reached
        self.oc_id = oc_id


@dataclass(frozen=True)
class SimConfig:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    h_init: float = 1e-3
    h_min: float = 1e-10
    h_max: float = 0.1
    record_dt: float = 0.01

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "h_init", "h_min", "h_max", "record_dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SimConfig.{name} must be positive")
        if not self.h_min <= self.h_init <= self.h_max:
            raise ValueError("SimConfig needs h_min <= h_init <= h_max")


@dataclass(frozen=True)
class FaultSchedule:
    fault_bus: int = 6
    t_fault_on: float = 0.0
    t_clear: float = 0.1
    t_end: float = 5.0

    def __post_init__(self):
        if not 0 <= self.t_fault_on < self.t_clear < self.t_end:
            raise ValueError("FaultSchedule needs 0 <= t_fault_on < t_clear < t_end")


@dataclass(eq=False)
class Trajectory:
    oc_id: int
    times: np.ndarray
    states: np.ndarray
    clear_index: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if len(self.times) != len(self.states):
            raise ValueError("times and states row counts differ")
        # simulations produce strictly increasing grids; predictions may repeat a time
        if len(self.times) > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("trajectory times must be non-decreasing")

    @property
    def n_gen(self):
        return self.states.shape[1] // 2

    @property
    def delta(self):
        return self.states[:, : self.n_gen]

    @property
    def omega(self):
        return self.states[:, self.n_gen:]

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "oc_id": int(self.oc_id),
                "times": self.times.tolist(), "states": self.states.tolist(),
                "clear_index": int(self.clear_index)}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trajectory schema_version {d.get('schema_version')!r}")
        return cls(oc_id=d["oc_id"], times=np.array(d["times"], dtype=float),
                   states=np.array(d["states"], dtype=float), clear_index=d.get("clear_index", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path):
        n = self.n_gen
        header = ["t"] + [f"delta_{k + 1}" for k in range(n)] + [f"omega_{k + 1}" for k in range(n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def swing_rhs(x, rm: ReducedModel, inertia, damping):
    """Time derivative of ``x = [delta; omega]`` under the classical swing equation."""
    n = len(inertia)
    delta, omega = x[:n], x[n:]
    p_elec = electrical_power(rm, delta)
    return np.concatenate([omega, (-damping * omega - p_elec + rm.p_mech) / inertia])


@dataclass(eq=False)
class DenseSolution:
    """Piecewise dense interpolant over accepted steps."""

    t_nodes: list = field(default_factory=list)
    y_nodes: list = field(default_factory=list)
    h_steps: list = field(default_factory=list)
    q_coefs: list = field(default_factory=list)
    n_rhs: int = 0
    n_rejected: int = 0

    @property
    def t0(self):
        return self.t_nodes[0]

    @property
    def t1(self):
        return self.t_nodes[-1] + self.h_steps[-1] if self.h_steps else self.t_nodes[-1]

    @property
    def y_end(self):
        return self._y_end

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), len(self.y_nodes[0])))
        if not self.h_steps:
            out[:] = self.y_nodes[0]
            return out
        if getattr(self, "_arrays", None) is None or len(self._arrays[1]) != len(self.h_steps):
            nst = len(self.h_steps)
            self._arrays = (np.asarray(self.t_nodes[:nst]), np.asarray(self.h_steps),
                            np.asarray(self.q_coefs), np.asarray(self.y_nodes[:nst]))
        starts, h, q, y = self._arrays
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(h) - 1)
        th = (t - starts[idx]) / h[idx]
        powers = th[:, None] ** np.arange(1, 5)
        out[:] = y[idx] + h[idx, None] * np.einsum("idk,ik->id", q[idx], powers)
        return out


def integrate_adaptive(rhs, x0, t_span, cfg: SimConfig = SimConfig(), fixed_step=None) -> DenseSolution:
    """Dormand-Prince 5(4) integration of ``x' = rhs(t, x)`` over ``t_span``.

    With ``fixed_step`` set, error control is disabled and the step is held
    constant (the last step is shortened to land on ``t_span[1]``).
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    x = np.array(x0, dtype=float)
    sol = DenseSolution()
    sol.t_nodes.append(t0)
    sol.y_nodes.append(x.copy())
    nst = 7
    K = np.empty((nst, len(x)))
    K[0] = rhs(t0, x)
    sol.n_rhs += 1
    t = t0
    h = min(fixed_step if fixed_step else cfg.h_init, t1 - t0)
    err_prev = 1.0
    alpha, beta, safety = 0.7 / 5, 0.4 / 5, 0.9
    while t < t1:
        last = t + h >= t1 - 1e-14 * max(1.0, abs(t1))
        if last:
            h = t1 - t
        for s in range(1, nst):
            K[s] = rhs(t + C[s] * h, x + h * (A[s, :s] @ K[:s]))
        sol.n_rhs += nst - 1
        x_new = x + h * (B @ K)
        if fixed_step:
            accept = True
        else:
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(x), np.abs(x_new))
            err = float(np.max(np.abs(h * (E @ K)) / scale))
            accept = err <= 1.0
            if accept:
                fac = safety * max(err, 1e-10) ** -alpha * err_prev ** beta
                fac = min(5.0, max(0.2, fac))
            else:
                fac = max(0.2, safety * err ** -alpha)
        if accept:
            sol.h_steps.append(h)
            sol.q_coefs.append(K.T @ P)
            t = t1 if last else t + h
            x = x_new
            K[0] = K[6]  # FSAL
            sol.t_nodes.append(t)
            sol.y_nodes.append(x.copy())
            if not fixed_step:
                err_prev = max(err, 1e-4)
                h = min(cfg.h_max, h * fac)
        else:
            sol.n_rejected += 1
            h *= fac
            if h < cfg.h_min:
                raise StepUnderflowError(f"step size underflow at t={t:.6g}", t)
    sol._y_end = x
    return sol


class FaultSimulation:
    """Dense solution of one operating condition through its fault sequence."""

    def __init__(self, oc_id, models: StageModels, fs: FaultSchedule, segments):
        self.oc_id = oc_id
        self.models = models
        self.fs = fs
        self.segments = segments  # list of (t_start, t_stop, DenseSolution | constant state)

    @property
    def x0(self):
        return np.concatenate([self.models.prefault.delta0, np.zeros_like(self.models.prefault.delta0)])

    def __call__(self, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((len(times), len(self.x0)))
        done = np.zeros(len(times), dtype=bool)
        for i, (t_a, t_b, seg) in enumerate(self.segments):
            mask = ~done & ((times <= t_b) | (i == len(self.segments) - 1))
            if mask.any():
                out[mask] = seg(times[mask]) if isinstance(seg, DenseSolution) else seg
            done |= mask
        return out

    def model_at(self, t):
        """Reduced model governing the dynamics at time ``t``."""
        if self.fs is not None and self.fs.t_fault_on <= t < self.fs.t_clear:
            return self.models.fault
        return self.models.postfault


def simulate_dense(case: NetworkCase, oc: OperatingCondition, fs: FaultSchedule,
                   cfg: SimConfig = SimConfig(), fault=True, models: StageModels | None = None) -> FaultSimulation:
    if models is None:
        models = stage_models(case, oc, fs.fault_bus)
    m_k, d_k = case.inertia, case.damping
    x0 = np.concatenate([models.prefault.delta0, np.zeros(case.n_gen)])

    def make_rhs(rm):
        return lambda t, x: swing_rhs(x, rm, m_k, d_k)

    segments = []
    try:
        if not fault:
            sol = integrate_adaptive(make_rhs(models.postfault), x0, (0.0, fs.t_end), cfg)
            segments.append((0.0, fs.t_end, sol))
        else:
            if fs.t_fault_on > 0:
                segments.append((0.0, fs.t_fault_on, x0.copy()))
            s1 = integrate_adaptive(make_rhs(models.fault), x0, (fs.t_fault_on, fs.t_clear), cfg)
            segments.append((fs.t_fault_on, fs.t_clear, s1))
            s2 = integrate_adaptive(make_rhs(models.postfault), s1.y_end, (fs.t_clear, fs.t_end), cfg)
            segments.append((fs.t_clear, fs.t_end, s2))
    except StepUnderflowError as exc:
        exc.oc_id = oc.id
        raise
    return FaultSimulation(oc.id, models, fs if fault else None, segments)


def record_times(t_end, record_dt):
    n = int(round(t_end / record_dt))
    return np.arange(n + 1) * record_dt


def simulate_fault_case(case: NetworkCase, oc: OperatingCondition, fs: FaultSchedule,
                        cfg: SimConfig = SimConfig(), fault=True,
                        models: StageModels | None = None) -> Trajectory:
    """Simulate ``oc`` through ``fs`` and resample at ``cfg.record_dt``."""
    sim = simulate_dense(case, oc, fs, cfg, fault=fault, models=models)
    times = record_times(fs.t_end, cfg.record_dt)
    clear_index = int(np.searchsorted(times, fs.t_clear - 1e-12)) if fault else 0
    return Trajectory(oc_id=oc.id, times=times, states=sim(times), clear_index=clear_index)


def input_labels(sim: FaultSimulation, times, states) -> np.ndarray:
    """``u = [P_mech; P_elec]`` along ``states`` using the model active at each time."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    states = np.atleast_2d(states)
    n = states.shape[1] // 2
    p_elec = np.empty((len(times), n))
    in_fault = np.array([sim.model_at(t).stage == "fault" for t in times], dtype=bool)
    for mask, rm in ((in_fault, sim.models.fault), (~in_fault, sim.models.postfault)):
        if mask.any():
            p_elec[mask] = electrical_power(rm, states[mask, :n])
    p_mech = np.broadcast_to(sim.models.prefault.p_mech, (len(times), n))
    return np.hstack([p_mech, p_elec])
