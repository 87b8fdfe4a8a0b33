"""Command-line entry point ``swing-spinn``.

Global flags (accepted before or after the subcommand):

``--config FILE``  JSON file with optional sections case, fault, sim, sampler, train, experiment
``--seed N``       overrides the sampler and training seeds (and the experiment seed list)
``--out PATH``     output file or directory, depending on the subcommand

The exit status is 0 only when every in-run assertion passed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import ConfigError, from_mapping, load_config
from .dataset import Dataset, SamplerConfig, build_dataset, sample_operating_conditions
from .netmodel import load_case
from .simulator import FaultSchedule, SimConfig, record_times, simulate_fault_case
from .training import TrainConfig, TrainedModel, make_bundle, predict_trajectory, train

log = logging.getLogger("swing_spinn")


@dataclasses.dataclass(frozen=True)
class CaseSection:
    path: str | None = None


class Settings:
    """Parsed config sections with the ``--seed`` override applied."""

    def __init__(self, cfg: dict, seed=None):
        self.case_section = from_mapping(CaseSection, cfg.get("case"), "case")
        self.case = load_case(self.case_section.path)
        self.fault = from_mapping(FaultSchedule, cfg.get("fault"), "fault")
        self.sim = from_mapping(SimConfig, cfg.get("sim"), "sim")
        self.sampler = from_mapping(SamplerConfig, cfg.get("sampler"), "sampler")
        self.train = from_mapping(TrainConfig, cfg.get("train"), "train")
        self.experiment = cfg.get("experiment") or {}
        # experiments fall back to the desk-scale sections, single commands to the full-scale defaults
        self._given = {k for k in ("sampler", "train") if cfg.get(k) is not None}
        if seed is not None:
            self.sampler = dataclasses.replace(self.sampler, seed=seed)
            self.train = dataclasses.replace(self.train, seed=seed)
        self.seed = seed

    def context(self):
        sampler = self.sampler if "sampler" in self._given else bench.DESK_SAMPLER
        tcfg = self.train if "train" in self._given else bench.DESK_TRAIN
        return bench.Context(self.case, self.fault, self.sim, sampler, tcfg)


class Checks:
    """In-run assertions; printed as they are recorded, summarised in the exit code."""

    def __init__(self):
        self.items = []

    def __call__(self, name, ok, detail=""):
        self.items.append((name, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))

    @property
    def ok(self):
        return all(ok for _, ok, _ in self.items)


def _out(args, default):
    return Path(args.out) if getattr(args, "out", None) else Path(default)


def cmd_simulate(args, st: Settings, chk: Checks):
    if args.oc is None:
        oc = st.case.nominal_oc()
    else:
        cfg = dataclasses.replace(st.sampler, n_seen=max(args.oc + 1, 1), n_unseen=0)
        oc = sample_operating_conditions(cfg, st.case)[args.oc].oc
    traj = simulate_fault_case(st.case, oc, st.fault, st.sim, fault=not args.no_fault)
    out = _out(args, "trajectory.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.save(out)
    traj.to_csv(out.with_suffix(".csv"))
    chk("trajectory finite", np.all(np.isfinite(traj.states)))
    chk("trajectory starts at t=0", traj.times[0] == 0.0)
    print(f"wrote {out} and {out.with_suffix('.csv')} ({len(traj.times)} rows)")


def cmd_sample(args, st: Settings, chk: Checks):
    ds = build_dataset(st.case, st.sampler, st.fault, st.sim)
    out = _out(args, "dataset.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(out)
    if args.csv:
        ds.to_csv(out.with_suffix(""))
    cfg = st.sampler
    chk("labeled count matches N_l (minus excluded OCs)",
        len(ds.labeled) <= cfg.n_labeled and (ds.excluded or len(ds.labeled) == cfg.n_labeled),
        f"{len(ds.labeled)} of {cfg.n_labeled}")
    chk("label times within [0, T_in]", np.all((ds.labeled.t >= 0) & (ds.labeled.t <= cfg.t_interp)))
    chk("collocation times within [0, T_ex]", np.all((ds.collocation.t >= 0) & (ds.collocation.t <= cfg.t_extrap)))
    print(f"wrote {out}; fingerprint {ds.fingerprint()}")


def cmd_train(args, st: Settings, chk: Checks):
    if not args.dataset:
        raise ConfigError("train needs --dataset")
    ds = Dataset.load(args.dataset)
    tcfg = st.train if args.mode is None else dataclasses.replace(st.train, mode=args.mode)
    if tcfg.mode == "pinn" and tcfg.pinn_reference_oc is None:
        tcfg = dataclasses.replace(tcfg, pinn_reference_oc=ds.seen_ocs[0].id)
    model = train(make_bundle(st.case, ds, tcfg, st.fault), ds, tcfg)
    out = _out(args, "model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    chk("final losses finite", all(np.isfinite(model.history[k][-1]) for k in ("l_data", "l_physics", "l_anchor"))
        if model.history["total"] else True)
    chk("checkpoint fingerprint matches dataset", model.fingerprint == ds.fingerprint())
    h = model.history
    if h["total"]:
        print(f"epochs {model.epochs_run}; l_data {h['l_data'][-1]:.4g} l_physics {h['l_physics'][-1]:.4g} "
              f"l_anchor {h['l_anchor'][-1]:.4g}; {model.train_time:.1f}s")
    print(f"wrote {out}")


def _pick_oc(args, st: Settings):
    if args.dataset:
        ds = Dataset.load(args.dataset)
        if args.oc_id is not None:
            return ds.oc_by_id(args.oc_id)
        return (ds.unseen_ocs or ds.seen_ocs)[0]
    return st.case.nominal_oc()


def cmd_predict(args, st: Settings, chk: Checks):
    model = TrainedModel.load(args.model)
    oc = _pick_oc(args, st)
    times = record_times(args.t_end, st.sim.record_dt)
    traj = predict_trajectory(model, oc, times)
    out = _out(args, "prediction.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.save(out)
    traj.to_csv(out.with_suffix(".csv"))
    chk("prediction finite", np.all(np.isfinite(traj.states)))
    chk("prediction shape", traj.states.shape == (len(times), 2 * st.case.n_gen), str(traj.states.shape))
    print(f"wrote {out} ({len(times)} rows, OC {oc.id})")


def cmd_eval(args, st: Settings, chk: Checks):
    model = TrainedModel.load(args.model)
    ds = Dataset.load(args.dataset)
    ocs = ds.unseen_ocs or ds.seen_ocs
    truths = {oc.id: simulate_fault_case(st.case, oc, st.fault, st.sim) for oc in ocs}
    cfg = ds.sampler_config or st.sampler
    ev, preds = bench.evaluate(model, ocs, truths, cfg.t_interp, cfg.t_extrap)
    rep = ev.as_report("eval")
    rep.raw["trajectories"] = bench.dump_trajectories(preds, truths)
    out = _out(args, "eval")
    bench.emit_report(rep, out)
    chk("percentages non-negative", np.all(ev.total_pct >= 0))
    print(f"interp {ev.mean_interp:.4g}%  extrap {ev.mean_extrap:.4g}%  total {ev.mean_total:.4g}%  -> {out}")


def cmd_bench_speed(args, st: Settings, chk: Checks):
    spec = bench.ExperimentSpec(**{**_experiment_fields(st, "speed"), "id": "speed"})
    model = TrainedModel.load(args.model) if args.model else None
    timing = bench.run_experiment_speed(spec, st.context(), model=model)
    rep = bench.speed_report(timing)
    out = _out(args, "bench_speed")
    bench.emit_report(rep, out)
    for h, r in zip(timing.horizons, timing.ratio):
        print(f"horizon {h:g}s: model {timing.model_s[list(timing.horizons).index(h)]:.4g}s, "
              f"ratio {r:.3g}")
    for name, ok, detail in rep.assertions:
        chk(name, ok, detail)


def _experiment_fields(st: Settings, exp_id):
    fields = dict(st.experiment)
    stored = fields.get("id")
    if stored is not None and stored != exp_id:
        fields.pop("grid", None)  # a grid belongs to the experiment it was written for
    fields["id"] = exp_id
    if st.seed is not None:
        fields["seeds"] = [st.seed]
    return fields


def cmd_experiment(args, st: Settings, chk: Checks):
    spec = from_mapping(bench.ExperimentSpec, _experiment_fields(st, args.id), "experiment")
    out = _out(args, spec.out_dir) / spec.id
    rep = bench.run_experiment(spec, st.context())
    files = bench.emit_report(rep, out)
    for name, ok, detail in rep.assertions:
        chk(name, ok, detail)
    print(f"wrote {len(files)} files under {out}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override sampler/train seeds")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="swing-spinn", parents=[common],
                                description="Swing-equation surrogates: simulate, sample, train, evaluate, benchmark.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate one OC through the fault")
    s.add_argument("--oc", type=int, default=None, help="index of a sampled seen OC (default: nominal loads)")
    s.add_argument("--no-fault", action="store_true", help="integrate from equilibrium without the fault")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sample", parents=[common], help="build and save a dataset")
    s.add_argument("--csv", action="store_true", help="also export CSV tables")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", parents=[common], help="train a model on a saved dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", choices=("spinn", "pinn", "baseline"), default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="predict a trajectory with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", default=None, help="dataset holding the OC (default: nominal loads)")
    s.add_argument("--oc-id", type=int, default=None)
    s.add_argument("--t-end", type=float, default=5.0)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", parents=[common], help="score a model on a dataset's unseen OCs")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench-speed", parents=[common], help="time prediction against simulation")
    s.add_argument("--model", default=None, help="trained model (default: train a quick SPINN)")
    s.set_defaults(func=cmd_bench_speed)

    s = sub.add_parser("experiment", parents=[common], help="run one experiment and emit its report")
    s.add_argument("id", choices=bench.EXPERIMENTS)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    chk = Checks()
    try:
        st = Settings(load_config(getattr(args, "config", None)), getattr(args, "seed", None))
        args.func(args, st, chk)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if chk.ok else 1


if __name__ == "__main__":
    sys.exit(main())
