"""Composite physics-regularised loss, the training loop and trajectory prediction.

NN1 maps standardized ``[s, t]`` to standardized states ``z``, with
``x = state_mean + state_std * z``.  NN2 maps ``[z, s_std]`` to standardized
``u = [P_mech; P_elec]``.  Three modes share the loop:

``spinn``
    data loss on labels, swing-equation residual on collocation points using
    NN2's inputs, and an anchor loss tying NN2 to the true ``u`` labels.
``pinn``
    NN1 only; the residual uses one reference OC's reduced network for
    every collocation point.
``baseline``
    data loss only.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as _config
from .dataset import CollocationSet, Dataset, LabeledSet, Normalization
from .netmodel import NetworkCase, OperatingCondition, ReducedModel, electrical_power, stage_models
from .neural import (AdamState, MlpSpec, NonFiniteLossError, adam_step, backward, forward,
                     forward_record, init_xavier_normal)
from .simulator import FaultSchedule, FaultSimulation, Trajectory, input_labels

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("spinn", "pinn", "baseline")
RESIDUAL_SCALES = ("xdot_std", "state_std", "none")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "spinn"
    epochs: int = 2000
    batch_size: int = 256
    n_batches: int | None = None
    full_batch_after: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_data: float = 1.0
    lambda_physics: float = 1.0
    lambda_anchor: float = 1.0
    residual_scale: str = "xdot_std"
    hidden: tuple = (128, 128)
    nn2_angles: str = "coi"
    pinn_reference_oc: int | None = None
    physics_warmup: float = 0.0
    early_stop: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.n_batches is not None and self.n_batches < 1:
            raise ValueError("n_batches must be >= 1 when set")
        if self.residual_scale not in RESIDUAL_SCALES:
            raise ValueError(f"residual_scale must be one of {RESIDUAL_SCALES}")
        if min(self.lambda_data, self.lambda_physics, self.lambda_anchor) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.nn2_angles not in ("coi", "absolute"):
            raise ValueError("nn2_angles must be 'coi' or 'absolute'")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def physics_ramp(self, epoch):
        """Multiplier on the physics weight: linear from 0 over the warm-up fraction of epochs."""
        span = self.physics_warmup * self.epochs
        if span <= 0:
            return 1.0
        return min(1.0, epoch / span)

    @property
    def weights(self):
        if self.mode == "baseline":
            return self.lambda_data, 0.0, 0.0
        if self.mode == "pinn":
            return self.lambda_data, self.lambda_physics, 0.0
        return self.lambda_data, self.lambda_physics, self.lambda_anchor

    def to_dict(self):
        return _config.to_mapping(self)

    @classmethod
    def from_dict(cls, d):
        return _config.from_mapping(cls, d, "train")


@dataclass(frozen=True, eq=False)
class PinnPhysics:
    """Fixed algebraic model of one reference OC, switched at fault clearing."""

    fault: ReducedModel
    postfault: ReducedModel
    t_fault_on: float
    t_clear: float
    oc_id: int

    def model_mask(self, t):
        return (t >= self.t_fault_on) & (t < self.t_clear)

    @property
    def p_mech(self):
        return self.postfault.p_mech

    def p_elec(self, t, delta):
        out = np.empty_like(delta)
        mask = self.model_mask(t)
        for sel, rm in ((mask, self.fault), (~mask, self.postfault)):
            if sel.any():
                out[sel] = electrical_power(rm, delta[sel])
        return out

    def p_elec_jacobian(self, t, delta):
        """Batch of ``dP_elec/d delta`` matrices, shape ``(N, n, n)``."""
        jac = np.empty(delta.shape + (delta.shape[1],))
        mask = self.model_mask(t)
        for sel, rm in ((mask, self.fault), (~mask, self.postfault)):
            if sel.any():
                jac[sel] = power_jacobian(rm, delta[sel])
        return jac

    def to_dict(self):
        def rm_dict(rm):
            y = rm.y_reduced
            return {"y_re": y.real.tolist(), "y_im": y.imag.tolist(), "v0_mag": rm.v0_mag.tolist(),
                    "delta0": rm.delta0.tolist(), "p_mech": rm.p_mech.tolist(), "stage": rm.stage}
        return {"fault": rm_dict(self.fault), "postfault": rm_dict(self.postfault),
                "t_fault_on": self.t_fault_on, "t_clear": self.t_clear, "oc_id": self.oc_id}

    @classmethod
    def from_dict(cls, d):
        def rm(r):
            return ReducedModel(np.array(r["y_re"]) + 1j * np.array(r["y_im"]), np.array(r["v0_mag"]),
                                np.array(r["delta0"]), np.array(r["p_mech"]), r["stage"])
        return cls(rm(d["fault"]), rm(d["postfault"]), d["t_fault_on"], d["t_clear"], d["oc_id"])

    @classmethod
    def for_oc(cls, case: NetworkCase, oc: OperatingCondition, fs: FaultSchedule):
        sm = stage_models(case, oc, fs.fault_bus)
        return cls(sm.fault, sm.postfault, fs.t_fault_on, fs.t_clear, oc.id)


def power_jacobian(rm: ReducedModel, delta):
    """``dP_elec,k/d delta_j`` for a batch of angle vectors."""
    v = rm.v0_mag
    g, b = rm.y_reduced.real, rm.y_reduced.imag
    d = delta[:, :, None] - delta[:, None, :]
    s = (v[:, None] * v[None, :]) * (-g * np.sin(d) + b * np.cos(d))
    n = delta.shape[1]
    s[:, np.arange(n), np.arange(n)] = 0.0
    jac = -s
    jac[:, np.arange(n), np.arange(n)] = s.sum(axis=2)
    return jac


def _opt_list(a):
    return None if a is None else a.tolist()


def _opt_array(v):
    return None if v is None else np.array(v, dtype=float)


def nn2_state_features(x, n, angles="absolute"):
    """State part of NN2's input; ``"coi"`` removes the mean rotor angle."""
    if angles == "absolute":
        return x
    delta = x[..., :n]
    return np.concatenate([delta - delta.mean(axis=-1, keepdims=True), x[..., n:]], axis=-1)


def nn2_state_features_vjp(g, n, angles="absolute"):
    if angles == "absolute":
        return g
    gd = g[..., :n]
    return np.concatenate([gd - gd.mean(axis=-1, keepdims=True), g[..., n:]], axis=-1)


@dataclass(eq=False)
class ModelBundle:
    nn1_spec: MlpSpec
    nn1: np.ndarray
    nn2_spec: MlpSpec
    nn2: np.ndarray
    inertia: np.ndarray
    damping: np.ndarray
    normalization: Normalization
    mode: str = "spinn"
    pinn_physics: PinnPhysics | None = None
    xdot_std: np.ndarray | None = None
    nn2_angles: str = "absolute"
    nn2_state_mean: np.ndarray | None = None
    nn2_state_std: np.ndarray | None = None

    @property
    def n_gen(self):
        return len(self.inertia)

    @property
    def n_feat(self):
        return self.nn1_spec.n_in - 1

    def copy(self):
        return ModelBundle(self.nn1_spec, self.nn1.copy(), self.nn2_spec, self.nn2.copy(), self.inertia,
                           self.damping, self.normalization, self.mode, self.pinn_physics, self.xdot_std,
                           self.nn2_angles, self.nn2_state_mean, self.nn2_state_std)

    def to_dict(self):
        return {
            "nn1_spec": self.nn1_spec.to_dict(), "nn1": self.nn1.tolist(),
            "nn2_spec": self.nn2_spec.to_dict(), "nn2": self.nn2.tolist(),
            "inertia": self.inertia.tolist(), "damping": self.damping.tolist(),
            "normalization": self.normalization.to_dict(), "mode": self.mode,
            "pinn_physics": self.pinn_physics.to_dict() if self.pinn_physics else None,
            "xdot_std": _opt_list(self.xdot_std),
            "nn2_angles": self.nn2_angles,
            "nn2_state_mean": _opt_list(self.nn2_state_mean),
            "nn2_state_std": _opt_list(self.nn2_state_std),
        }

    @classmethod
    def from_dict(cls, d):
        pp = d.get("pinn_physics")
        return cls(MlpSpec.from_dict(d["nn1_spec"]), np.array(d["nn1"], dtype=float),
                   MlpSpec.from_dict(d["nn2_spec"]), np.array(d["nn2"], dtype=float),
                   np.array(d["inertia"], dtype=float), np.array(d["damping"], dtype=float),
                   Normalization.from_dict(d["normalization"]), d.get("mode", "spinn"),
                   PinnPhysics.from_dict(pp) if pp else None,
                   _opt_array(d.get("xdot_std")), d.get("nn2_angles", "absolute"),
                   _opt_array(d.get("nn2_state_mean")), _opt_array(d.get("nn2_state_std")))


def make_bundle(case: NetworkCase, ds: Dataset, cfg: TrainConfig,
                fs: FaultSchedule = FaultSchedule()) -> ModelBundle:
    """Freshly initialized networks sized for ``case``; PINN mode also fixes its reference physics."""
    if ds.normalization is None:
        raise ValueError("dataset must be normalized before training")
    n = case.n_gen
    nf = 2 * len(case.load_buses)
    seeds = np.random.SeedSequence([cfg.seed, 101]).spawn(2)
    s1 = MlpSpec((nf + 1, *cfg.hidden, 2 * n), seed=cfg.seed)
    s2 = MlpSpec((2 * n + nf, *cfg.hidden, 2 * n), seed=cfg.seed)
    p1 = init_xavier_normal(s1, np.random.default_rng(seeds[0]))
    p2 = init_xavier_normal(s2, np.random.default_rng(seeds[1]))
    physics = None
    if cfg.mode == "pinn":
        ref = cfg.pinn_reference_oc
        if ref is None:
            raise ValueError("pinn mode requires pinn_reference_oc")
        physics = PinnPhysics.for_oc(case, ds.oc_by_id(ref), fs)
    train_set = ds.train
    xdot = -swing_residual(train_set.x, np.zeros_like(train_set.x), train_set.u, case.inertia, case.damping)
    xdot_std = xdot.std(axis=0)
    xdot_std = np.where(xdot_std > 0, xdot_std, 1.0)
    feats = nn2_state_features(train_set.x, n, cfg.nn2_angles)
    f_mean, f_std = feats.mean(axis=0), feats.std(axis=0)
    f_std = np.where(f_std > 1e-12, f_std, 1.0)
    return ModelBundle(s1, p1, s2, p2, case.inertia, case.damping, ds.normalization, cfg.mode, physics,
                       xdot_std, cfg.nn2_angles, f_mean, f_std)


# -- loss pieces ----------------------------------------------------------------

def _nn1_inputs(bundle, s, t):
    return bundle.normalization.normalize_inputs(np.column_stack([s, t]))


def _nn2_inputs(bundle, x, s):
    nz = bundle.normalization
    nf = bundle.n_feat
    s_std = (s - nz.input_mean[:nf]) / nz.input_std[:nf]
    feats = nn2_state_features(x, bundle.n_gen, bundle.nn2_angles)
    return np.column_stack([(feats - bundle.nn2_state_mean) / bundle.nn2_state_std, s_std])


def _nn2_input_vjp(bundle, g_in):
    """Gradient w.r.t. physical states from the gradient w.r.t. NN2's input."""
    g_feat = g_in[:, : 2 * bundle.n_gen] / bundle.nn2_state_std
    return nn2_state_features_vjp(g_feat, bundle.n_gen, bundle.nn2_angles)


def predict_states(bundle: ModelBundle, s, t):
    nz = bundle.normalization
    z = forward(bundle.nn1, bundle.nn1_spec, _nn1_inputs(bundle, s, t))
    return nz.state_mean + nz.state_std * z


def compute_data_loss(bundle: ModelBundle, batch: LabeledSet, with_grad=False):
    """Mean squared error in standardized state space."""
    nz = bundle.normalization
    rec = forward_record(bundle.nn1, bundle.nn1_spec, _nn1_inputs(bundle, batch.s, batch.t))
    err = rec.outputs - (batch.x - nz.state_mean) / nz.state_std
    loss = float(np.mean(err * err))
    if not with_grad:
        return loss
    g1, _ = backward(rec, bundle.nn1, bundle.nn1_spec, 2.0 * err / err.size)
    return loss, g1


def compute_anchor_loss(bundle: ModelBundle, batch: LabeledSet, with_grad=False):
    """NN2 evaluated at the true states against the true ``u`` labels."""
    nz = bundle.normalization
    rec = forward_record(bundle.nn2, bundle.nn2_spec, _nn2_inputs(bundle, batch.x, batch.s))
    err = rec.outputs - (batch.u - nz.u_mean) / nz.u_std
    loss = float(np.mean(err * err))
    if not with_grad:
        return loss
    g2, _ = backward(rec, bundle.nn2, bundle.nn2_spec, 2.0 * err / err.size)
    return loss, g2


def swing_residual(x, xdot, u, inertia, damping):
    """``xdot - f(x, u)`` for the swing equation with ``u = [P_mech; P_elec]``."""
    n = len(inertia)
    omega = x[..., n:]
    p_mech, p_elec = u[..., :n], u[..., n:]
    r_delta = xdot[..., :n] - omega
    r_omega = xdot[..., n:] - (-damping * omega - p_elec + p_mech) / inertia
    return np.concatenate([r_delta, r_omega], axis=-1)


def _residual_scale(bundle, cfg_scale):
    if cfg_scale == "none":
        return np.ones(2 * bundle.n_gen)
    if cfg_scale == "xdot_std" and bundle.xdot_std is not None:
        return bundle.xdot_std
    return bundle.normalization.state_std


def _physics_forward(bundle: ModelBundle, batch: CollocationSet):
    nz = bundle.normalization
    t_idx = bundle.n_feat
    rec1 = forward_record(bundle.nn1, bundle.nn1_spec, _nn1_inputs(bundle, batch.s, batch.t),
                          t_index=t_idx, t_scale=1.0 / nz.input_std[t_idx])
    z, zdot = rec1.outputs, rec1.time_tangent
    x = nz.state_mean + nz.state_std * z
    xdot = nz.state_std * zdot
    rec2 = None
    if bundle.mode == "pinn":
        pp = bundle.pinn_physics
        n = bundle.n_gen
        u = np.hstack([np.broadcast_to(pp.p_mech, (len(batch), n)), pp.p_elec(batch.t, x[:, :n])])
    else:
        rec2 = forward_record(bundle.nn2, bundle.nn2_spec, _nn2_inputs(bundle, x, batch.s))
        u = nz.u_mean + nz.u_std * rec2.outputs
    r = swing_residual(x, xdot, u, bundle.inertia, bundle.damping)
    return rec1, rec2, x, u, r


def compute_physics_residual(bundle: ModelBundle, points: CollocationSet):
    """Physical-unit residuals at collocation points, shape ``(N, 2n)``."""
    return _physics_forward(bundle, points)[4]


def compute_physics_loss(bundle: ModelBundle, batch: CollocationSet, residual_scale="xdot_std",
                         with_grad=False):
    """Mean squared (scaled) residual; returns zero gradients on an empty batch."""
    if len(batch) == 0:
        if with_grad:
            return 0.0, np.zeros_like(bundle.nn1), np.zeros_like(bundle.nn2)
        return 0.0
    rec1, rec2, x, u, r = _physics_forward(bundle, batch)
    rho = _residual_scale(bundle, residual_scale)
    rs = r / rho
    loss = float(np.mean(rs * rs))
    if not with_grad:
        return loss
    n = bundle.n_gen
    nz = bundle.normalization
    m, d = bundle.inertia, bundle.damping
    gr = 2.0 * rs / rho / rs.size
    gr_d, gr_w = gr[:, :n], gr[:, n:]
    g_xdot = gr
    g_x = np.zeros_like(x)
    g_x[:, n:] = -gr_d + gr_w * d / m
    g_pm = -gr_w / m
    g_pe = gr_w / m
    g2 = np.zeros_like(bundle.nn2)
    if bundle.mode == "pinn":
        jac = bundle.pinn_physics.p_elec_jacobian(batch.t, x[:, :n])
        g_x[:, :n] += np.einsum("nk,nkj->nj", g_pe, jac)
        g_z = nz.state_std * g_x
    else:
        g_w = nz.u_std * np.hstack([g_pm, g_pe])
        g2, g_in2 = backward(rec2, bundle.nn2, bundle.nn2_spec, g_w)
        g_z = nz.state_std * (g_x + _nn2_input_vjp(bundle, g_in2))
    g1, _ = backward(rec1, bundle.nn1, bundle.nn1_spec, g_z, nz.state_std * g_xdot)
    return loss, g1, g2


@dataclass(frozen=True)
class LossBreakdown:
    l_data: float
    l_physics: float
    l_anchor: float
    weights: tuple

    @property
    def total(self):
        wd, wp, wu = self.weights
        return wd * self.l_data + wp * self.l_physics + wu * self.l_anchor


def composite_loss(bundle: ModelBundle, labeled: LabeledSet, colloc: CollocationSet, cfg: TrainConfig,
                   weights=None):
    """Weighted loss of one batch and its gradient over ``[nn1; nn2]``."""
    wd, wp, wu = cfg.weights if weights is None else weights
    n1 = len(bundle.nn1)
    grad = np.zeros(n1 + len(bundle.nn2))
    l_d = l_p = l_u = 0.0
    if len(labeled):
        l_d, g = compute_data_loss(bundle, labeled, with_grad=True)
        grad[:n1] += wd * g
    if wp > 0 and len(colloc):
        l_p, g1, g2 = compute_physics_loss(bundle, colloc, cfg.residual_scale, with_grad=True)
        grad[:n1] += wp * g1
        grad[n1:] += wp * g2
    if wu > 0 and len(labeled):
        l_u, g2 = compute_anchor_loss(bundle, labeled, with_grad=True)
        grad[n1:] += wu * g2
    parts = LossBreakdown(l_d, l_p, l_u, (wd, wp, wu))
    return parts, grad


@dataclass(eq=False)
class TrainedModel:
    bundle: ModelBundle
    history: dict
    fingerprint: str
    train_time: float
    config: TrainConfig
    epochs_run: int = 0

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "bundle": self.bundle.to_dict(), "history": self.history,
                "fingerprint": self.fingerprint, "train_time": self.train_time,
                "config": self.config.to_dict(), "epochs_run": self.epochs_run}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported checkpoint schema_version {d.get('schema_version')!r}")
        return cls(ModelBundle.from_dict(d["bundle"]), d["history"], d["fingerprint"], d["train_time"],
                   TrainConfig.from_dict(d["config"]), d.get("epochs_run", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class TrainingAborted(RuntimeError):
    def __init__(self, message, model: TrainedModel):
        super().__init__(message)
        self.model = model


def train(bundle0: ModelBundle, ds: Dataset, cfg: TrainConfig, fingerprint: str | None = None) -> TrainedModel:
    """Adam over ``[nn1; nn2]`` with the configured batch schedule."""
    if cfg.mode != bundle0.mode:
        raise ValueError(f"bundle mode {bundle0.mode!r} does not match config mode {cfg.mode!r}")
    if cfg.mode == "pinn" and bundle0.pinn_physics is None:
        raise ValueError("pinn mode bundle lacks reference physics")
    if fingerprint is None:
        fingerprint = ds.fingerprint()
    t_start = time.perf_counter()
    bundle = bundle0.copy()
    train_set, val_set = ds.train, ds.validation
    colloc = ds.collocation if cfg.mode != "baseline" else CollocationSet.empty(train_set.s.shape[1])
    n_l, n_c = len(train_set), len(colloc)
    n1 = len(bundle.nn1)
    theta = np.concatenate([bundle.nn1, bundle.nn2])
    state = AdamState.fresh(len(theta), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 202]))
    hist = {k: [] for k in ("l_data", "l_physics", "l_anchor", "total", "val_data")}
    hist["lambda_physics"] = []
    wd, wp, wu = cfg.weights
    epoch = 0

    def result(epochs_run):
        return TrainedModel(bundle.copy(), hist, fingerprint, time.perf_counter() - t_start, cfg, epochs_run)

    for epoch in range(1, cfg.epochs + 1):
        weights = (wd, wp * cfg.physics_ramp(epoch), wu)
        if epoch > cfg.full_batch_after:
            n_batches = 1
        elif cfg.n_batches is not None:
            n_batches = min(cfg.n_batches, max(n_l, 1))
        else:
            n_batches = max(1, -(-max(n_l, 1) // cfg.batch_size))
        lab_batches = np.array_split(rng.permutation(n_l), n_batches) if n_l else [np.zeros(0, int)] * n_batches
        col_batches = np.array_split(rng.permutation(n_c), n_batches) if n_c else [np.zeros(0, int)] * n_batches
        sums = np.zeros(3)
        for bl, bc in zip(lab_batches, col_batches):
            parts, grad = composite_loss(bundle, train_set.take(bl), colloc.take(bc), cfg, weights)
            if not (np.isfinite(parts.total) and np.all(np.isfinite(grad))):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}", result(epoch - 1)) from \
                    NonFiniteLossError("non-finite loss", batch_ids=bl.tolist())
            state, theta = adam_step(state, theta, grad)
            bundle.nn1, bundle.nn2 = theta[:n1], theta[n1:]
            sums += (parts.l_data, parts.l_physics, parts.l_anchor)
        ep = LossBreakdown(*(sums / n_batches), weights=weights)
        hist["lambda_physics"].append(weights[1])
        hist["l_data"].append(ep.l_data)
        hist["l_physics"].append(ep.l_physics)
        hist["l_anchor"].append(ep.l_anchor)
        hist["total"].append(ep.total)
        val = compute_data_loss(bundle, val_set) if len(val_set) else float("nan")
        hist["val_data"].append(val)
        if cfg.early_stop is not None and len(val_set) and val <= cfg.early_stop:
            break
    return result(epoch)


def compute_u_labels(case: NetworkCase, oc: OperatingCondition, states, times,
                     fs: FaultSchedule = FaultSchedule()):
    """True ``[P_mech; P_elec]`` at given states, with the network active at each time."""
    models = FaultSimulation(oc.id, stage_models(case, oc, fs.fault_bus), fs, segments=[])
    return input_labels(models, times, states)


def predict_trajectory(model, oc: OperatingCondition, times) -> Trajectory:
    """NN1 evaluated on ``[s, t]`` for every requested time in one batched pass."""
    bundle = model.bundle if isinstance(model, TrainedModel) else model
    times = np.asarray(times, dtype=float)
    s = np.broadcast_to(oc.features(), (len(times), bundle.n_feat))
    return Trajectory(oc_id=oc.id, times=times, states=predict_states(bundle, s, times))
