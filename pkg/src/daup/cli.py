"""Command-line entry point: ``daup <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import adversary, experiments
from .attack import AttackDataset, MlpConfig, evaluate, save_model, train_lr, train_mlp
from .protocol import CaptureLog, ScenarioConfig, build_deployment, dump_records

log = logging.getLogger("daup")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--config", type=Path, help="JSON file with ExperimentSpec fields")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--node-count", type=int)
    g.add_argument("--n", type=int, help="challenge length (power of two)")
    g.add_argument("--s", type=int, help="node id length in bits")
    g.add_argument("--taps", type=_ints, help="LFSR tap degrees, e.g. '6,5'")
    g.add_argument("--noise-sigma", type=float)
    g.add_argument("--r-bits", type=int)
    g.add_argument("--training-sizes", type=_ints)
    g.add_argument("--holdout", type=int)
    g.add_argument("--table-crps", type=_ints, help="per-link CRP counts, e.g. '100,1000'")
    g.add_argument("--l-values", type=_ints)
    g.add_argument("--learner", choices=["mlp", "lr"])
    g.add_argument("--repetitions", type=int)
    g.add_argument("--epochs", type=int, help="MLP epochs (default 2000)")


_SPEC_FIELDS = ["seed", "node_count", "n", "s", "taps", "noise_sigma", "r_bits", "training_sizes",
                "holdout", "table_crps", "l_values", "learner", "repetitions"]


def spec_from_args(args) -> experiments.ExperimentSpec:
    d = json.loads(args.config.read_text()) if args.config else {}
    for name in _SPEC_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    if getattr(args, "epochs", None) is not None:
        d.setdefault("mlp", {})["epochs"] = args.epochs
    return experiments.ExperimentSpec.from_dict(d)


def scenario_from_args(args) -> ScenarioConfig:
    d = json.loads(args.config.read_text()) if args.config else {}
    for name in ["seed", "node_count", "n", "s", "taps", "noise_sigma", "r_bits",
                 "n_challenges", "crp_per_verifier"]:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    return ScenarioConfig.from_dict(d)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)
    return path


def cmd_enroll(args) -> int:
    cfg = scenario_from_args(args)
    dep = build_deployment(cfg, tap_links=False)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.save(args.out / "scenario.json")
    dep.prover.puf.save(args.out / "prover_puf.json")
    for k, v in enumerate(dep.verifiers, start=1):
        dump_records(dep.crps[v.node_id], args.out / f"crps_v{k}.jsonl")
    print(f"enrolled prover {dep.prover.node_id:#010x} with {len(dep.verifiers)} verifiers "
          f"x {cfg.crp_per_verifier} CRPs -> {args.out}")
    return 0


def cmd_traffic(args) -> int:
    cfg = scenario_from_args(args)
    _, logs = adversary.capture_traffic(cfg, scrambling=not args.no_scrambling)
    args.out.mkdir(parents=True, exist_ok=True)
    for k, lg in enumerate(logs.values(), start=1):
        lg.dump(args.out / f"capture_v{k}.jsonl")
    print(f"captured {sum(len(x) for x in logs.values())} exchanges on {len(logs)} links -> {args.out}")
    return 0


def cmd_attack(args) -> int:
    train_log = CaptureLog(scenario="train")
    for p in args.train:
        train_log.entries.extend(CaptureLog.load(p).entries)
    test_log = CaptureLog(scenario="test")
    for p in args.test:
        test_log.entries.extend(CaptureLog.load(p).entries)
    train = AttackDataset.from_log(train_log, bit=args.bit)
    test = AttackDataset.from_log(test_log, bit=args.bit, split="test").without(train)
    if args.learner == "lr":
        model = train_lr(train)
    else:
        model = train_mlp(train, MlpConfig(epochs=args.epochs), seed=args.seed)
    ev = evaluate(model, test)
    print(f"{args.learner}: trained on {len(train)}, accuracy {ev.accuracy:.4f} ({ev.correct}/{ev.total})")
    if args.model_out:
        save_model(model, args.model_out)
    return 0


def cmd_fig3(args) -> int:
    spec = spec_from_args(args)
    res = experiments.run_fig3(spec)
    _write(args.out, "fig3.csv", res.csv())
    lines = []
    for size in spec.training_sizes:
        parts = [f"{'scrambled' if scr else 'unprotected'} {res.mean(size, scr):.3f}"
                 for scr in spec.scrambling]
        lines.append(f"size {size}: " + ", ".join(parts))
    body = "\n".join(lines)
    _write(args.out, "fig3_summary.txt", experiments.summary_text(spec, "accuracy vs training size", body))
    print(body)
    return 0


def cmd_table(args) -> int:
    spec = spec_from_args(args)
    res = experiments.run_table(spec, args.which)
    _write(args.out, f"table{args.which}.csv", res.matrix_csv())
    _write(args.out, f"table{args.which}_cells.csv", res.cells_csv())
    _write(args.out, f"table{args.which}_summary.txt",
           experiments.summary_text(spec, f"Table {args.which}", res.matrix_csv()))
    print(res.matrix_csv(), end="")
    return 0


def cmd_overhead(args) -> int:
    spec = spec_from_args(args)
    csv_text, text = experiments.run_overhead_report(spec)
    _write(args.out, "overhead.csv", csv_text)
    _write(args.out, "overhead.txt", text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daup", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, helptext in [("enroll", cmd_enroll, "enroll a prover and dump per-verifier CRP sets"),
                               ("traffic", cmd_traffic, "run authentication traffic and dump tap logs")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, help="JSON scenario file")
        p.add_argument("--seed", type=int)
        p.add_argument("--node-count", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--s", type=int)
        p.add_argument("--taps", type=_ints)
        p.add_argument("--noise-sigma", type=float)
        p.add_argument("--r-bits", type=int)
        p.add_argument("--n-challenges", type=int)
        p.add_argument("--crp-per-verifier", type=int)
        p.add_argument("--out", type=Path, required=True)
        if name == "traffic":
            p.add_argument("--no-scrambling", action="store_true", help="prover answers with its raw PUF")
        p.set_defaults(func=fn)

    p = sub.add_parser("attack", help="train a model on capture logs and test it on others")
    p.add_argument("--train", type=Path, nargs="+", required=True)
    p.add_argument("--test", type=Path, nargs="+", required=True)
    p.add_argument("--learner", choices=["mlp", "lr"], default="mlp")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--bit", type=int, default=0, help="response bit position to model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", type=Path)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("fig3", help="accuracy vs training size, with and without scrambling")
    _add_spec_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fig3, needs_seed=True)

    p = sub.add_parser("table", help="Scenario I/II/III accuracy tables")
    _add_spec_flags(p)
    p.add_argument("--which", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_table, needs_seed=True)

    p = sub.add_parser("overhead", help="storage and per-authentication operation counts")
    _add_spec_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_overhead)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "needs_seed", False) and args.seed is None:
        parser.error(f"{args.command} requires --seed")
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
