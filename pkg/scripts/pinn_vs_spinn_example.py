"""Train a single-OC-physics PINN and a SPINN on one dataset and compare them on held-out OCs.

Writes the per-OC errors and one predicted-vs-true rotor angle trace to
``results/example/`` as CSV.
"""
import argparse
import dataclasses
from pathlib import Path

from swing_spinn import bench
from swing_spinn.dataset import build_dataset
from swing_spinn.simulator import simulate_fault_case
from swing_spinn.training import make_bundle, train


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--out", default="results/example")
    args = p.parse_args(argv)

    ctx = bench.Context()
    sampler = dataclasses.replace(ctx.sampler, seed=args.seed)
    ds = build_dataset(ctx.case, sampler, ctx.fs, ctx.sim)
    truths = {oc.id: simulate_fault_case(ctx.case, oc, ctx.fs, ctx.sim) for oc in ds.unseen_ocs}
    out = Path(args.out)
    for mode in ("pinn", "spinn"):
        cfg = dataclasses.replace(ctx.train, mode=mode, epochs=args.epochs, seed=args.seed,
                                  pinn_reference_oc=ds.seen_ocs[0].id if mode == "pinn" else None)
        model = train(make_bundle(ctx.case, ds, cfg, ctx.fs), ds, cfg)
        ev, preds = bench.evaluate(model, ds.unseen_ocs, truths, sampler.t_interp, sampler.t_extrap)
        bench.emit_report(ev.as_report(f"{mode}_eval"), out)
        oc0 = ds.unseen_ocs[0].id
        rows = [[t, p[0], y[0]] for t, p, y in zip(truths[oc0].times, preds[oc0].states, truths[oc0].states)]
        bench.write_csv(out / f"{mode}_trace_oc{oc0}.csv", ["t", "delta_1_pred", "delta_1_true"], rows)
        print(f"{mode}: interp {ev.mean_interp:.3f}%  extrap {ev.mean_extrap:.3f}%  total {ev.mean_total:.3f}%")


if __name__ == "__main__":
    main()
