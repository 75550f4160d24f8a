"""Command-line entry point: ``dualprobe <verb> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

import torch

from . import analyzer, appd, baselines, dataplane, dppd, harness, metrics, probes, topo, training


def _out(args, name: str) -> str:
    path = args.out or name
    if not os.path.isabs(path):
        path = os.path.join(args.out_dir, path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    return path


def _write_json(path: str, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _link(text: str) -> tuple[int, int]:
    u, v = text.replace(",", "-").split("-")
    return topo.canon(int(u), int(v))


def _service(args, t: topo.Topology) -> frozenset:
    if getattr(args, "service", None):
        with open(args.service) as fh:
            return topo.canon_set(json.load(fh))
    return topo.select_service_network(t, args.fraction, args.seed)


# --------------------------------------------------------------------------- verbs


def cmd_gen_topo(args):
    t = topo.gen_random_topology(args.nodes, args.edge_prob, args.seed)
    path = _out(args, "topo.json")
    topo.save_topology(t, path)
    print(path)


def cmd_appd(args):
    t = topo.load_topology(args.topo)
    plan = appd.plan_auxiliary_paths(t, args.lth, args.start)
    path = _out(args, "ap_plan.json")
    appd.save_plan(plan, path)
    print(f"{len(plan.paths)} auxiliary paths -> {path}")


def cmd_baseline(args):
    t = topo.load_topology(args.topo)
    service = _service(args, t)
    if args.algo == "latconst":
        plan = baselines.plan_latency_constrained(t, service, args.tmax)
    else:
        plan = baselines.PLANNERS[args.algo](t, service)
    path = _out(args, f"{args.algo}_plan.json")
    appd.save_plan(plan, path)
    m = metrics.compute_metrics(plan, t, service, metrics.TelemetryTask(service).label_bytes)
    print(f"{args.algo}: f1={m.f1_probes} f2={m.f2_latency_us:.1f}us f3={m.f3_bytes}B -> {path}")


def _hp(args, count: int) -> training.Hyperparams:
    return training.Hyperparams(epochs=args.epochs, batch=args.batch, lr_actor=args.lr, lr_critic=args.lr,
                                instance_count=count, seed=args.seed, optimizer=args.optimizer)


def _finish_training(args, model, record, default_name):
    path = _out(args, default_name)
    dppd.save_model(model, path)
    rec_path = os.path.splitext(path)[0] + "_record.csv"
    with open(rec_path, "w") as fh:
        fh.write(record.to_csv())
    sys.stdout.write(record.to_csv())
    print(f"model -> {path}; record -> {rec_path}")


def cmd_train(args):
    inst = training.generate_instances(args.instances, args.topo_nodes, args.seed, args.fraction)
    held = training.generate_instances(args.eval_instances, args.topo_nodes, args.seed + 1, args.fraction)
    model = dppd.PolicyModel(3 * args.topo_nodes, args.d, args.D, seed=args.seed)
    model, record = training.train(model, inst, _hp(args, len(inst)), _floats(args.weights), held)
    _finish_training(args, model, record, "model.bin")


def cmd_transfer(args):
    pre = dppd.load_model(getattr(args, "from"))
    inst = training.generate_instances(args.instances, args.topo_nodes, args.seed, args.fraction)
    held = training.generate_instances(args.eval_instances, args.topo_nodes, args.seed + 1, args.fraction)
    hp = _hp(args, len(inst))
    if args.mode == "reward":
        model, record = training.transfer_for_reward(pre, inst, hp, _floats(args.weights), held)
    else:
        model, record = training.transfer_for_dataset(pre, inst, hp, _floats(args.weights), held)
    _finish_training(args, model, record, "transferred.bin")


def cmd_dppd_plan(args):
    t = topo.load_topology(args.topo)
    model = dppd.load_model(args.model)
    service = _service(args, t)
    plan, logp = dppd.decode(model, dppd.build_instance(t, service), args.mode,
                             torch.Generator().manual_seed(args.seed))
    path = _out(args, "dp_plan.json")
    appd.save_plan(plan, path)
    m = metrics.compute_metrics(plan, t, service, metrics.TelemetryTask(service).label_bytes)
    print(f"dppd: f1={m.f1_probes} f2={m.f2_latency_us:.1f}us f3={m.f3_bytes}B logP={logp:.4f} -> {path}")


def cmd_run_plan(args):
    t = topo.load_topology(args.topo)
    plan = appd.load_plan(args.plan)
    faults = dataplane.FaultState()
    for f in args.fault or ():
        faults = dataplane.inject_link_fault(faults, _link(f), t)
    kind = probes.ProbeKind.AUXILIARY if args.kind == "aux" else probes.ProbeKind.DYNAMIC
    bitmap = 0 if kind is probes.ProbeKind.AUXILIARY else args.bitmap
    results = dataplane.run_plan(t, faults, plan.paths, kind, bitmap, args.lth)
    path = _out(args, "reports.json")
    _write_json(path, [r.to_json() for r in results])
    lost = [r for r in results if isinstance(r, dataplane.Lost)]
    print(f"{len(results) - len(lost)} delivered, {len(lost)} lost -> {path}")


def _load_models(specs):
    out = {}
    for spec in specs or ():
        m = dppd.load_model(spec)
        out[m.n_features // 3] = m
    return out


def cmd_scenario(args):
    rows = harness.run_scenario(args.id, args.planners.split(","), _ints(args.sizes), _ints(args.seeds),
                                _load_models(args.model), args.fraction)
    path = _out(args, f"scenario{args.id}.{args.format}")
    harness.export_results(rows, path, args.format)
    sys.stdout.write(harness.results_csv(rows))


def cmd_dual_run(args):
    t = topo.load_topology(args.topo)
    model = dppd.load_model(args.model)
    schedule: dict[int, list] = {}
    for spec in args.fault or ():
        rnd, link = spec.split("@")[1], spec.split("@")[0]
        schedule.setdefault(int(rnd), []).append(_link(link))
    task = metrics.TelemetryTask(_service(args, t), weights=_floats(args.weights),
                                 dp_period=args.dp_period, ap_period=args.ap_period)
    recs = harness.run_dual_timescale(t, task, model, args.rounds, schedule, args.perturb, args.seed, args.lth)
    path = _out(args, "dual_run.csv")
    with open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "ap_round", "f1", "f2_us", "f3_bytes", "C", "delivered", "lost", "candidates"])
        for r in recs:
            w.writerow([r.round, int(r.ap_round), r.f1, f"{r.f2_us:.3f}", r.f3_bytes, f"{r.C:.6f}",
                        r.delivered, r.lost, " ".join(f"{u}-{v}" for u, v in r.candidates)])
    _write_json(os.path.splitext(path)[0] + ".json", [asdict(r) for r in recs])
    print(f"{len(recs)} rounds -> {path}")


def cmd_export_grid(args):
    t = topo.load_topology(args.topo)
    down = [_link(f) for f in args.fault or ()]
    store = analyzer.TelemetryStore()
    plan = appd.load_plan(args.plan) if args.plan else appd.plan_auxiliary_paths(t, args.lth)
    faults = dataplane.FaultState(frozenset(down))
    results = dataplane.run_plan(t, faults, plan.paths, probes.ProbeKind.AUXILIARY, l_th=args.lth)
    analyzer.ingest_reports(store, results, 0)
    lost = [r for r in results if isinstance(r, dataplane.Lost)]
    candidates = analyzer.localize_fault(plan, lost)
    # the collector only knows what the probes told it
    known = analyzer.confirmed_faults(plan, lost) if not args.reveal else frozenset(down)
    grid = analyzer.export_grid(t, args.mode, store, known, candidates)
    prefix = _out(args, f"grid_{args.mode}")
    csv_path, svg_path = grid.write(os.path.splitext(prefix)[0])
    store.dump(os.path.splitext(prefix)[0] + "_store.json")
    print(f"{csv_path} {svg_path}")


def cmd_probe_dump(args):
    if args.hex is not None:
        data = bytes.fromhex(args.hex)
    else:
        with open(args.file, "rb") as fh:
            data = fh.read()
    frame = probes.decode_frame(data, args.lth)
    print(json.dumps(frame.to_json(), indent=2))


# --------------------------------------------------------------------------- parser


def _train_args(p, transfer=False):
    p.add_argument("--topo-nodes", type=int, default=10)
    p.add_argument("--instances", type=int, default=640)
    p.add_argument("--eval-instances", type=int, default=50)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--weights", default="0.1,0.9")
    p.add_argument("--fraction", type=float, default=1.0)
    if not transfer:
        p.add_argument("--d", type=int, default=128)
        p.add_argument("--D", type=int, default=128)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualprobe", description="Dual-timescale INT probe planning toolkit")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default=".")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        p.add_argument("--out", help="output file (relative paths land in --out-dir)")
        return p

    p = verb("gen-topo", cmd_gen_topo, "generate a random connected topology")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--edge-prob", type=float)

    p = verb("appd", cmd_appd, "plan auxiliary probe paths")
    p.add_argument("--topo", required=True)
    p.add_argument("--lth", type=int, default=16)
    p.add_argument("--start", type=int, default=1)

    p = verb("baseline", cmd_baseline, "plan with a classical baseline")
    p.add_argument("--topo", required=True)
    p.add_argument("--algo", choices=sorted(baselines.PLANNERS), required=True)
    p.add_argument("--tmax-us", "--tmax", dest="tmax", type=float, help="latency budget for latconst")
    p.add_argument("--fraction", type=float, default=1.0)

    p = verb("train", cmd_train, "train a dynamic-probe policy")
    _train_args(p)

    p = verb("transfer", cmd_transfer, "fine-tune a pretrained policy")
    p.add_argument("--from", required=True)
    p.add_argument("--mode", choices=("reward", "dataset"), required=True)
    _train_args(p, transfer=True)

    p = verb("dppd-plan", cmd_dppd_plan, "decode dynamic probe paths with a trained policy")
    p.add_argument("--topo", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--service", help="JSON list of [u, v] demanded links (default: sample by --fraction)")
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")

    p = verb("run-plan", cmd_run_plan, "send a plan's probes through the simulated data plane")
    p.add_argument("--topo", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--kind", choices=("aux", "dyn"), default="dyn")
    p.add_argument("--bitmap", type=int, default=metrics.DEFAULT_BITMAP)
    p.add_argument("--lth", type=int, default=16)
    p.add_argument("--fault", action="append", help="down link u-v (repeatable)")

    p = verb("scenario", cmd_scenario, "compare planners on one evaluation scenario")
    p.add_argument("--id", type=int, choices=sorted(metrics.SCENARIO_WEIGHTS), required=True)
    p.add_argument("--planners", default="dfs,euler,latconst")
    p.add_argument("--sizes", default="10")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--model", action="append", help="trained model (repeat for several sizes)")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--format", choices=("csv", "json", "svg"), default="csv")

    p = verb("dual-run", cmd_dual_run, "run the dual-timescale telemetry loop")
    p.add_argument("--topo", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--weights", default="0.1,0.9")
    p.add_argument("--dp-period", type=int, default=1)
    p.add_argument("--ap-period", type=int, default=10)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--lth", type=int, default=16)
    p.add_argument("--fault", action="append", help="u-v@round: link goes down at that round")
    p.add_argument("--perturb", action="store_true", help="re-draw latencies every AP period")

    p = verb("export-grid", cmd_export_grid, "render the network grid from one AP round")
    p.add_argument("--topo", required=True)
    p.add_argument("--mode", choices=("load", "fault"), default="load")
    p.add_argument("--plan", help="AP plan (default: plan one)")
    p.add_argument("--lth", type=int, default=16)
    p.add_argument("--fault", action="append", help="down link u-v (repeatable)")
    p.add_argument("--reveal", action="store_true", help="mark injected faults as known")

    p = verb("probe-dump", cmd_probe_dump, "decode a probe frame")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--hex")
    src.add_argument("--file")
    p.add_argument("--lth", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.fn(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
