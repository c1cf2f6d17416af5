"""Command-line entry point: ``pcmbnb <command> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, policy, training
from .bnb import BranchAndBound, Limits
from .milp import InfeasibleInstanceError, Schedule, build_milp, check_feasibility, write_mps
from .model import InstanceError, PcmInstance, generate_instance, ieee118_template, pjm5_base, \
    tiny_instance


def _limits(a) -> Limits:
    return Limits(work_units=a.limit_work, time=a.limit_time, nodes=a.limit_nodes)


def _add_limits(p):
    p.add_argument("--limit-work", type=int, default=None, help="work-unit budget per solve")
    p.add_argument("--limit-time", type=float, default=None, help="wall-clock seconds per solve")
    p.add_argument("--limit-nodes", type=int, default=None, help="node budget per solve")


def _add_flow(p):
    p.add_argument("--flow-model", choices=("transport", "dc_angle"), default="transport")


def _problem(path, flow_model="transport"):
    return build_milp(PcmInstance.load_file(path), flow_model)


def _instance_files(items) -> list:
    files = []
    for item in items:
        p = Path(item)
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    return files


def cmd_gen(a):
    if a.system == "pjm5":
        base = pjm5_base(a.horizon)
    elif a.system == "ieee118":
        base = ieee118_template(a.horizon)
    else:
        base = None
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in range(a.seed, a.seed + a.count):
        inst = tiny_instance(a.n_gen, a.horizon, s) if base is None else \
            generate_instance(base, a.noise, s)
        target = out / f"{a.system}_T{a.horizon}_s{s}.json"
        inst.save(target)
        print(target)
    return 0


def cmd_check(a):
    inst = PcmInstance.load_file(a.instance)
    rep = check_feasibility(inst, Schedule.load_file(a.schedule), a.tol, a.flow_model)
    print(rep)
    return 0 if rep.passed else 1


def cmd_solve(a):
    prob = _problem(a.instance, a.flow_model)
    rule = harness.make_rule(a.rule)
    if isinstance(rule, harness.RaceRule):
        res = harness.race(prob, rule.net_alpha, rule.net_beta, _limits(a))
        st = res.winner_state or res.states["alpha"]
        sched = None
        print(f"winner={res.winner}")
    else:
        bb = BranchAndBound(prob, rule, _limits(a))
        st = bb.run()
        sched = bb.schedule()
    print(f"status={st.status} objective={st.z_primal!r} dual={st.z_dual!r} "
          f"work_units={st.work_units} nodes={st.n_explored} seconds={st.wall_time:.3f}")
    if a.trace:
        Path(a.trace).write_text(harness.full_trace_csv(st))
    if a.bounds:
        harness.bound_trace_export(st, a.bounds)
    if a.schedule and sched is not None:
        sched.save(a.schedule)
    return 0


def cmd_export(a):
    write_mps(_problem(a.instance, a.flow_model), a.out)
    print(a.out)
    return 0


def cmd_collect(a):
    files = _instance_files(a.instances)
    store = training.collect_expert(((f.stem, _problem(f)) for f in files), _limits(a))
    store.save(a.out)
    pairs = store.pairs()
    print(f"trajectories={len(store)} pairs={len(pairs)} "
          f"incomplete={sum(not r.complete for r in store)}")
    return 0


def cmd_train_il(a):
    store = training.TrajectoryStore.load(a.store)
    cfg = training.IlConfig(a.epochs, a.batch_size, a.lr, a.seed)
    res = training.train_il(store, cfg)
    policy.save(res.net, a.out)
    print("epoch,loss")
    for i, loss in enumerate(res.losses, 1):
        print(f"{i},{loss!r}")
    return 0


def cmd_train_rl(a):
    files = _instance_files(a.instances)
    problems = {f.stem: _problem(f) for f in files}
    cfg = training.RlConfig(a.epochs, a.iterations, a.batch_size, a.lam, a.step, a.seed,
                            mode=a.mode, time_metric=a.time_metric)
    if a.time_metric == "wall":
        baselines = {pid: BranchAndBound(p, harness.make_rule("expert"), _limits(a)).run().wall_time
                     for pid, p in problems.items()}
    else:
        baselines = training.TrajectoryStore.load(a.store).baselines
    res = training.train_rl(problems, policy.load(a.alpha), cfg, baselines, _limits(a))
    policy.save(res.net, a.out)
    print("epoch,iteration,mean_return,truncated")
    for e, i, r, n in res.curve:
        print(f"{e},{i},{r!r},{n}")
    return 0


def cmd_race(a):
    prob = _problem(a.instance, a.flow_model)
    res = harness.race(prob, policy.load(a.alpha), policy.load(a.beta), _limits(a),
                       "deterministic" if a.deterministic else "concurrent", a.quantum)
    print(f"winner={res.winner} objective={res.objective!r} work_units={res.work_units} "
          f"loser_work_units={res.loser_progress_at_stop[0]} loser_gap={res.loser_progress_at_stop[1]!r}")
    return 0 if res.winner else 2


def cmd_bench(a):
    files = _instance_files([a.instances])
    specs = _split_rules(a.rules)
    rules = [(s, lambda s=s: harness.make_rule(s)) for s in specs]
    rep = harness.bench(((f.stem, _problem(f)) for f in files), rules, _limits(a), a.out)
    sys.stdout.write(rep.summary_csv())
    bad = rep.check_objectives()
    if bad:
        print(f"objective mismatch on: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def _split_rules(text: str) -> list:
    """Split a comma list while keeping ``race:A,B`` together."""
    out, parts = [], text.split(",")
    i = 0
    while i < len(parts):
        if parts[i].startswith("race:") and i + 1 < len(parts):
            out.append(parts[i] + "," + parts[i + 1])
            i += 2
        else:
            out.append(parts[i])
            i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcmbnb", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate instances")
    p.add_argument("--system", choices=("pjm5", "ieee118", "tiny"), default="pjm5")
    p.add_argument("--horizon", type=int, default=24, help="hours T")
    p.add_argument("--noise", type=float, default=0.05, help="noise sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--n-gen", type=int, default=2, help="generators for --system tiny")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("check", help="verify a schedule against an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    _add_flow(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="branch and bound with one rule")
    p.add_argument("--instance", required=True)
    p.add_argument("--rule", default="expert",
                   help="mostfrac|pscost|strong|expert|policy:PATH|race:PATH_A,PATH_B")
    p.add_argument("--trace", help="write the full trace table here")
    p.add_argument("--bounds", help="write the work/primal/dual bound trace here")
    p.add_argument("--schedule", help="write the incumbent schedule here")
    _add_flow(p)
    _add_limits(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("export", help="write the MILP in MPS format")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    _add_flow(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("collect", help="record expert trajectories")
    p.add_argument("--instances", nargs="+", required=True, help="instance files or directories")
    p.add_argument("--out", required=True)
    _add_limits(p)
    p.set_defaults(func=cmd_collect)

    d = training.IlConfig()
    p = sub.add_parser("train-il", help="imitation learning from a trajectory store")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_train_il)

    r = training.RlConfig()
    p = sub.add_parser("train-rl", help="REINFORCE fine-tuning")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--alpha", required=True, help="starting weights")
    p.add_argument("--store", help="trajectory store with expert baselines")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=r.epochs)
    p.add_argument("--iterations", type=int, default=r.iterations)
    p.add_argument("--batch-size", type=int, default=r.batch_size)
    p.add_argument("--lam", type=float, default=r.lam)
    p.add_argument("--step", type=float, default=r.step)
    p.add_argument("--seed", type=int, default=r.seed)
    p.add_argument("--mode", choices=("sample", "greedy"), default=r.mode)
    p.add_argument("--time-metric", choices=("work_units", "wall"), default=r.time_metric)
    _add_limits(p)
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("race", help="race two policies on one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--alpha", required=True)
    p.add_argument("--beta", required=True)
    p.add_argument("--deterministic", action="store_true",
                   help="interleave in work-unit quanta instead of using two threads")
    p.add_argument("--quantum", type=int, default=harness.QUANTUM)
    _add_flow(p)
    _add_limits(p)
    p.set_defaults(func=cmd_race)

    p = sub.add_parser("bench", help="run rules over a directory of instances")
    p.add_argument("--instances", required=True)
    p.add_argument("--rules", default="mostfrac,pscost,expert",
                   help="comma-separated rule names (race:A,B kept together)")
    p.add_argument("--out", required=True)
    _add_limits(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    if a.command == "train-rl" and a.time_metric == "work_units" and not a.store:
        print("train-rl: --store is required for work-unit baselines", file=sys.stderr)
        return 2
    try:
        return a.func(a)
    except (InstanceError, InfeasibleInstanceError, policy.PolicyFormatError,
            FileNotFoundError, ValueError) as e:
        print(f"pcmbnb {a.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
