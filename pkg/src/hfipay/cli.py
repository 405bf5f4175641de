"""Command line entry point: ``hfipay <subcommand>``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import codec
from .harness import attacks, games
from .harness.report import build_report
from .harness.scenario import render_report, run_scenario


def _print(obj, as_json: bool) -> None:
    if as_json:
        print(json.dumps(obj, sort_keys=True))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            print(f"{k}: {v}")
    else:
        print(obj)


def cmd_run(args) -> int:
    report = run_scenario(args.scenario, seed=args.seed, mode=args.mode, epoch_len=args.epoch_len)
    text = render_report(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if args.json:
        sys.stdout.write(text)
    else:
        for a in report["assertions"]:
            print(("PASS " if a["passed"] else "FAIL ") + json.dumps(a["assertion"], sort_keys=True))
        print(f"{report['name']}: {'passed' if report['passed'] else 'FAILED'}")
    return 0 if report["passed"] else 1


def cmd_game(args) -> int:
    try:
        adversary = games.get_adversary(args.adversary)
    except KeyError as exc:
        args.parser.error(str(exc.args[0]))
    seed = 0 if args.seed is None else args.seed
    mode = args.mode or "baseline"
    if args.game == "g1":
        result = games.game_g1(adversary, args.trials, seed, mode, args.epoch_len)
    else:
        result = games.game_g2(adversary, args.trials, seed, not args.unmatched, mode, args.epoch_len)
    _print(result.to_json(), args.json)
    return 0


def cmd_conformance(args) -> int:
    path = args.vectors or codec.default_vectors_path()
    vectors = codec.load_vectors(path)
    failures = [i for i, v in enumerate(vectors) if not codec.check_vector(v)]
    out = {"vectors": len(vectors), "failures": failures, "passed": not failures}
    _print(out, args.json)
    return 0 if not failures else 1


def cmd_attack(args) -> int:
    fn = attacks.ATTACKS[args.name]
    kwargs = {} if args.seed is None else {"seed": args.seed}
    if args.name == "cross-sender" and args.epoch_len:
        kwargs["epoch_lens"] = (args.epoch_len,)
    if args.trials and args.name == "lemma1":
        kwargs["trials"] = args.trials
    _print(fn(**kwargs), args.json)
    return 0


def cmd_report(args) -> int:
    out = build_report(args.out, trials=args.trials, seed=0 if args.seed is None else args.seed,
                       mode=args.mode or "baseline", epoch_len=args.epoch_len)
    _print(out, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--epoch-len", type=int, default=None, help="binding epoch length in seconds")
    common.add_argument("--mode", choices=["baseline", "verified"], default=None)

    parser = argparse.ArgumentParser(prog="hfipay", description="identifier-routed payment simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("game", parents=[common], help="play G1 or G2")
    p.add_argument("game", choices=["g1", "g2"])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--adversary", default="random")
    p.add_argument("--unmatched", action="store_true", help="G2 with recipient-habitual metadata")
    p.set_defaults(fn=cmd_game, parser=p)

    p = sub.add_parser("conformance", parents=[common], help="check encoding vectors")
    p.add_argument("--vectors", default=None)
    p.set_defaults(fn=cmd_conformance)

    p = sub.add_parser("attack", parents=[common], help="run an attack demonstration")
    p.add_argument("name", choices=sorted(attacks.ATTACKS))
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("report", parents=[common], help="write CSV results and figures")
    p.add_argument("--out", required=True, help="CSV path; figures are written next to it")
    p.add_argument("--trials", type=int, default=2000)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
