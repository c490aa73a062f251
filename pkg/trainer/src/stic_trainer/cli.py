"""CLI for the toy trainer: cross-check losses, run the two toy loops."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .losses import FixtureError, compute_fixture_losses
from .train import ToyTrainConfig, sft_toy, train_toy


def _write_report(report: dict, out: Optional[str]) -> None:
    text = json.dumps(report, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {out}")
    summary = {
        k: report[k]
        for k in ("kind", "records", "initial_mean_loss", "final_mean_loss", "decreased")
    }
    print(json.dumps(summary, indent=2))


def cmd_compute_losses(args) -> int:
    losses = compute_fixture_losses(args.records, args.lam, args.alpha)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump([{"id": i, "loss": v} for i, v in losses], fh, indent=2)
        print(f"wrote {args.json_out}")
    else:
        for record_id, value in losses:
            print(f"{record_id}\t{value!r}")
    return 0


def _config_from_args(args) -> ToyTrainConfig:
    overrides = {}
    for name in (
        "lam", "alpha", "learning_rate", "global_batch_size", "epochs", "seed",
        "sft_learning_rate", "sft_global_batch_size",
    ):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return ToyTrainConfig(**overrides)


def cmd_train(args) -> int:
    report = train_toy(args.pref, _config_from_args(args))
    _write_report(report, args.out)
    return 0


def cmd_sft(args) -> int:
    report = sft_toy(args.infused, _config_from_args(args))
    _write_report(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stic-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute-losses", help="evaluate the loss over a record file")
    p.add_argument("--records", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--alpha", default="1/1024")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_compute_losses)

    p = sub.add_parser("train", help="preference fine-tune the toy model")
    p.add_argument("--pref", required=True, help="preference JSONL from the data factory")
    p.add_argument("--out", help="write the full report JSON here")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--alpha")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch", dest="global_batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sft", help="supervised epoch on the infused dataset")
    p.add_argument("--infused", required=True)
    p.add_argument("--out")
    p.add_argument("--learning-rate", dest="sft_learning_rate", type=float)
    p.add_argument("--batch", dest="sft_global_batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sft)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FixtureError as exc:
        print(f"error [records]: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
