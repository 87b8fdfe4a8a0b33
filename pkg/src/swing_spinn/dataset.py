"""Operating-condition sampling, labeled trajectories and collocation points.

Every random draw comes from its own stream keyed by ``(seed, purpose,
index)``, so a given OC's loads or sample times do not depend on how many
other OCs were requested or on the order they are generated in.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as _config
from .netmodel import NetworkCase, OperatingCondition, PowerFlowError, solve_power_flow, stage_models
from .simulator import FaultSchedule, SimConfig, StepUnderflowError, input_labels, simulate_dense

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_SEEN, _UNSEEN, _LABEL_TIMES, _COLLOC_TIMES, _SPLIT = range(5)


class SamplingError(RuntimeError):
    pass


def stream(seed, purpose, index=0) -> np.random.Generator:
    """Counter-based generator for one (purpose, index) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), purpose, index])))


@dataclass(frozen=True)
class SamplerConfig:
    n_seen: int = 70
    n_unseen: int = 30
    load_means: tuple = ((1.25, 0.45), (0.95, 0.25), (1.0, 0.3))
    load_stds: tuple = (0.05, 0.05, 0.05)
    n_labeled: int = 4200
    n_collocation: int = 200
    t_interp: float = 2.0
    t_extrap: float = 4.0
    seed: int = 0
    val_fraction: float = 0.1
    retry_factor: int = 100

    def __post_init__(self):
        if self.n_seen < 0 or self.n_unseen < 0:
            raise ValueError("OC counts must be non-negative")
        if self.n_labeled < 0 or self.n_collocation < 0:
            raise ValueError("n_labeled and n_collocation must be >= 0")
        if not 0 <= self.t_interp <= self.t_extrap:
            raise ValueError("need 0 <= t_interp <= t_extrap")
        if len(self.load_stds) != len(self.load_means):
            raise ValueError("load_stds must match load_means in length")
        if any(s < 0 for s in self.load_stds):
            raise ValueError("load standard deviations must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    @property
    def means(self):
        return np.array([complex(re, im) for re, im in self.load_means])

    def to_dict(self):
        return _config.to_mapping(self)

    @classmethod
    def from_dict(cls, d):
        return _config.from_mapping(cls, d, "sampler")


@dataclass(frozen=True, eq=False)
class LabeledSample:
    oc_id: int
    s: np.ndarray
    t: float
    x: np.ndarray


@dataclass(frozen=True, eq=False)
class CollocationPoint:
    oc_id: int
    s: np.ndarray
    t: float


@dataclass(eq=False)
class LabeledSet:
    """Column-stored labeled samples; ``u`` holds ``[P_mech; P_elec]`` targets."""

    oc_id: np.ndarray
    s: np.ndarray
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return LabeledSample(int(self.oc_id[i]), self.s[i], float(self.t[i]), self.x[i])

    def take(self, idx):
        return LabeledSet(self.oc_id[idx], self.s[idx], self.t[idx], self.x[idx], self.u[idx])

    @classmethod
    def empty(cls, n_feat=6, n_state=6):
        return cls(np.zeros(0, dtype=int), np.zeros((0, n_feat)), np.zeros(0),
                   np.zeros((0, n_state)), np.zeros((0, n_state)))


@dataclass(eq=False)
class CollocationSet:
    oc_id: np.ndarray
    s: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return CollocationPoint(int(self.oc_id[i]), self.s[i], float(self.t[i]))

    def take(self, idx):
        return CollocationSet(self.oc_id[idx], self.s[idx], self.t[idx])

    @classmethod
    def empty(cls, n_feat=6):
        return cls(np.zeros(0, dtype=int), np.zeros((0, n_feat)), np.zeros(0))


@dataclass(eq=False)
class Normalization:
    """Standardization statistics; ``flagged`` lists clamped zero-variance columns."""

    input_mean: np.ndarray
    input_std: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray
    u_mean: np.ndarray
    u_std: np.ndarray
    flagged: dict = field(default_factory=dict)

    def normalize_inputs(self, v):
        return (np.asarray(v) - self.input_mean) / self.input_std

    def denormalize_inputs(self, v):
        return np.asarray(v) * self.input_std + self.input_mean

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(self).items()}

    @classmethod
    def from_dict(cls, d):
        arrs = {k: np.array(v, dtype=float) for k, v in d.items() if k != "flagged"}
        return cls(**arrs, flagged={k: list(v) for k, v in d.get("flagged", {}).items()})


@dataclass(eq=False)
class OCRecord:
    oc: OperatingCondition
    seen: bool


@dataclass(eq=False)
class Dataset:
    labeled: LabeledSet
    collocation: CollocationSet
    ocs: list
    train_idx: np.ndarray
    val_idx: np.ndarray
    normalization: Normalization | None = None
    sampler_config: SamplerConfig | None = None
    excluded: list = field(default_factory=list)

    @property
    def train(self):
        return self.labeled.take(self.train_idx)

    @property
    def validation(self):
        return self.labeled.take(self.val_idx)

    def oc_by_id(self, oc_id):
        for rec in self.ocs:
            if rec.oc.id == oc_id:
                return rec.oc
        raise KeyError(oc_id)

    @property
    def seen_ocs(self):
        return [r.oc for r in self.ocs if r.seen]

    @property
    def unseen_ocs(self):
        return [r.oc for r in self.ocs if not r.seen]

    def to_dict(self):
        lab, col = self.labeled, self.collocation
        return {
            "schema_version": SCHEMA_VERSION,
            "sampler_config": self.sampler_config.to_dict() if self.sampler_config else None,
            "ocs": [{"id": r.oc.id, "seen": r.seen, "loads": [[z.real, z.imag] for z in r.oc.loads]}
                    for r in self.ocs],
            "labeled": {"oc_id": lab.oc_id.tolist(), "s": lab.s.tolist(), "t": lab.t.tolist(),
                        "x": lab.x.tolist(), "u": lab.u.tolist()},
            "collocation": {"oc_id": col.oc_id.tolist(), "s": col.s.tolist(), "t": col.t.tolist()},
            "split": {"train": self.train_idx.tolist(), "validation": self.val_idx.tolist()},
            "normalization": self.normalization.to_dict() if self.normalization else None,
            "excluded": list(self.excluded),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported dataset schema_version {d.get('schema_version')!r}")
        nf = len(d["ocs"][0]["loads"]) * 2 if d["ocs"] else 6
        lab, col = d["labeled"], d["collocation"]

        def mat(v, w):
            return np.array(v, dtype=float).reshape(-1, w)

        ns = len(lab["x"][0]) if lab["x"] else 6
        labeled = LabeledSet(np.array(lab["oc_id"], dtype=int), mat(lab["s"], nf), np.array(lab["t"], dtype=float),
                             mat(lab["x"], ns), mat(lab["u"], ns))
        colloc = CollocationSet(np.array(col["oc_id"], dtype=int), mat(col["s"], nf), np.array(col["t"], dtype=float))
        ocs = [OCRecord(OperatingCondition(np.array([complex(*z) for z in r["loads"]]), r["id"]), r["seen"])
               for r in d["ocs"]]
        sc = d.get("sampler_config")
        nz = d.get("normalization")
        return cls(labeled, colloc, ocs, np.array(d["split"]["train"], dtype=int),
                   np.array(d["split"]["validation"], dtype=int),
                   Normalization.from_dict(nz) if nz else None,
                   SamplerConfig.from_dict(sc) if sc else None, list(d.get("excluded", [])))

    def save(self, path):
        Path(path).write_text(canonical_json(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def fingerprint(self):
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def to_csv(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lab = self.labeled
        nf, ns = lab.s.shape[1], lab.x.shape[1]
        head = ["oc_id"] + [f"s_{i}" for i in range(nf)] + ["t"]
        rows = np.column_stack([lab.oc_id, lab.s, lab.t, lab.x, lab.u]) if len(lab) else []
        _write_csv(directory / "labeled.csv",
                   head + [f"x_{i}" for i in range(ns)] + [f"u_{i}" for i in range(ns)], rows)
        col = self.collocation
        rows = np.column_stack([col.oc_id, col.s, col.t]) if len(col) else []
        _write_csv(directory / "collocation.csv", head, rows)


def _write_csv(path, header, rows):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _draw_oc(cfg: SamplerConfig, rng):
    means = cfg.means
    std = np.asarray(cfg.load_stds, dtype=float)
    p = rng.normal(means.real, std) if np.any(std > 0) else means.real.copy()
    q = rng.normal(means.imag, std) if np.any(std > 0) else means.imag.copy()
    return p + 1j * q


def sample_operating_conditions(cfg: SamplerConfig, case: NetworkCase, fs: FaultSchedule | None = None,
                                sim_cfg: SimConfig | None = None) -> list[OCRecord]:
    """Seen OCs (ids ``0..n_seen-1``) then unseen ones, each drawn until power flow converges.

    With ``fs`` given, OCs whose fault simulation fails are also redrawn.
    """
    if len(cfg.load_means) != len(case.load_buses):
        raise SamplingError("load_means must have one entry per load bus")
    out = []
    for purpose, count in ((_SEEN, cfg.n_seen), (_UNSEEN, cfg.n_unseen)):
        for i in range(count):
            rng = stream(cfg.seed, purpose, i)
            oc_id = i if purpose == _SEEN else cfg.n_seen + i
            for attempt in range(cfg.retry_factor):
                oc = OperatingCondition(_draw_oc(cfg, rng), oc_id)
                try:
                    pf = solve_power_flow(case, oc)
                    if fs is not None:
                        simulate_dense(case, oc, fs, sim_cfg or SimConfig(),
                                       models=stage_models(case, oc, fs.fault_bus, pf=pf))
                except (PowerFlowError, StepUnderflowError, np.linalg.LinAlgError, ValueError):
                    continue
                out.append(OCRecord(oc, purpose == _SEEN))
                break
            else:
                raise SamplingError(f"OC {oc_id}: no acceptable draw in {cfg.retry_factor} tries "
                                    f"(acceptance rate {1 / cfg.retry_factor:.2%} or lower)")
    return out


def allocate(total, n_groups):
    """Split ``total`` evenly over groups, remainder to the lowest indices."""
    if n_groups == 0:
        return []
    base, rem = divmod(int(total), n_groups)
    return [base + (1 if i < rem else 0) for i in range(n_groups)]


def build_labeled_set(ocs_seen, case: NetworkCase, fs: FaultSchedule, cfg: SamplerConfig,
                      sim_cfg: SimConfig = SimConfig(), excluded=None, simulations=None) -> LabeledSet:
    """Uniform-random label times in ``[0, t_interp]`` read from dense simulation output.

    ``simulations`` is an optional dict that receives each OC's dense solution.
    """
    nf, ns = 2 * len(case.load_buses), 2 * case.n_gen
    counts = allocate(cfg.n_labeled, len(ocs_seen))
    parts = []
    for oc, n_s in zip(ocs_seen, counts):
        if n_s == 0:
            continue
        try:
            sim = simulate_dense(case, oc, fs, sim_cfg)
        except (PowerFlowError, StepUnderflowError) as exc:
            log.warning("OC %s excluded from labeled set: %s", oc.id, exc)
            if excluded is not None:
                excluded.append(int(oc.id))
            continue
        if simulations is not None:
            simulations[oc.id] = sim
        t = stream(cfg.seed, _LABEL_TIMES, oc.id).uniform(0.0, cfg.t_interp, n_s)
        x = sim(t)
        u = input_labels(sim, t, x)
        parts.append((np.full(n_s, oc.id), np.tile(oc.features(), (n_s, 1)), t, x, u))
    if not parts:
        return LabeledSet.empty(nf, ns)
    return LabeledSet(*(np.concatenate(cols) for cols in zip(*parts)))


def build_collocation_set(ocs_all, cfg: SamplerConfig) -> CollocationSet:
    counts = allocate(cfg.n_collocation, len(ocs_all))
    nf = 2 * len(ocs_all[0].loads) if ocs_all else 6
    parts = []
    for oc, n_s in zip(ocs_all, counts):
        if n_s == 0:
            continue
        t = stream(cfg.seed, _COLLOC_TIMES, oc.id).uniform(0.0, cfg.t_extrap, n_s)
        parts.append((np.full(n_s, oc.id), np.tile(oc.features(), (n_s, 1)), t))
    if not parts:
        return CollocationSet.empty(nf)
    return CollocationSet(*(np.concatenate(cols) for cols in zip(*parts)))


def split_train_validation(labeled: LabeledSet, cfg: SamplerConfig):
    """Per-OC split putting ``round(val_fraction * n_s)`` samples of each OC into validation."""
    train, val = [], []
    for oc_id in np.unique(labeled.oc_id):
        idx = np.flatnonzero(labeled.oc_id == oc_id)
        perm = stream(cfg.seed, _SPLIT, int(oc_id)).permutation(idx)
        n_val = int(round(cfg.val_fraction * len(idx)))
        if n_val >= len(idx):
            n_val = len(idx) - 1
        val.extend(perm[:n_val])
        train.extend(perm[n_val:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(val, dtype=int))


def _stats(cols, flagged, name):
    mean = cols.mean(axis=0)
    std = cols.std(axis=0)
    zero = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if np.any(zero):
        flagged[name] = np.flatnonzero(zero).tolist()
        std = np.where(zero, 1.0, std)
        # a summed mean can be off by one ulp; anchor constant columns to their value
        mean = np.where(zero, cols[0], mean)
    return mean, std


def normalize_features(ds: Dataset) -> Dataset:
    """Attach standardization statistics computed from the training rows only."""
    train = ds.train
    if len(train) == 0:
        raise SamplingError("training split is empty")
    flagged = {}
    inputs = np.column_stack([train.s, train.t])
    im, isd = _stats(inputs, flagged, "input")
    xm, xsd = _stats(train.x, flagged, "state")
    um, usd = _stats(train.u, flagged, "u")
    if flagged:
        log.info("zero-variance columns clamped to unit std: %s", flagged)
    ds.normalization = Normalization(im, isd, xm, xsd, um, usd, flagged)
    return ds


def build_dataset(case: NetworkCase, cfg: SamplerConfig, fs: FaultSchedule = FaultSchedule(),
                  sim_cfg: SimConfig = SimConfig(), ocs=None, simulations=None) -> Dataset:
    """Run the full sampling procedure: OCs, labels on seen OCs, collocation on all."""
    if ocs is None:
        ocs = sample_operating_conditions(cfg, case)
    excluded = []
    labeled = build_labeled_set([r.oc for r in ocs if r.seen], case, fs, cfg, sim_cfg, excluded, simulations)
    colloc = build_collocation_set([r.oc for r in ocs if r.oc.id not in excluded], cfg)
    train_idx, val_idx = split_train_validation(labeled, cfg)
    ds = Dataset(labeled, colloc, list(ocs), train_idx, val_idx, sampler_config=cfg, excluded=excluded)
    if len(train_idx):
        normalize_features(ds)
    return ds
