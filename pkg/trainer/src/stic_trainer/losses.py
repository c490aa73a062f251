"""Standalone evaluation of the regularized preference loss.

This is a from-scratch implementation kept deliberately independent of the
service package (different numerical route: numpy's logaddexp instead of a
branched log1p kernel) so the two codebases can be diffed record by record
on a shared fixture file.
"""

from __future__ import annotations

import json
import math
from typing import Union

import numpy as np

_FIELDS = ("policy_w", "policy_l", "ref_w", "ref_l")


class FixtureError(ValueError):
    """Record-file problems, with the offending line numbers."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def parse_alpha(value: Union[str, float, int]) -> float:
    """Accept a plain number or a fraction string like "1/1024"."""
    if isinstance(value, (int, float)):
        return float(value)
    text = value.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def regularized_loss(pw: float, pl: float, rw: float, rl: float, lam: float, alpha: float) -> float:
    """log(1 + exp(-lam*((pw-rw)-(pl-rl)))) - alpha*pw."""
    t = lam * ((pw - rw) - (pl - rl))
    return float(np.logaddexp(0.0, -t) - alpha * pw)


def load_records(path) -> list[dict]:
    records = []
    problems = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                problems.append(f"line {line_no}: not valid JSON")
                continue
            if not isinstance(obj, dict) or "id" not in obj:
                problems.append(f"line {line_no}: missing id")
                continue
            bad = [f for f in _FIELDS if not isinstance(obj.get(f), (int, float))]
            if bad:
                problems.append(f"line {line_no}: missing or non-numeric {', '.join(bad)}")
                continue
            if any(not math.isfinite(obj[f]) or obj[f] > 0 for f in _FIELDS):
                problems.append(f"line {line_no}: log-probs must be finite and <= 0")
                continue
            records.append(obj)
    if problems:
        raise FixtureError(problems)
    return records


def compute_fixture_losses(path, lam: float, alpha: Union[str, float]) -> list[tuple[str, float]]:
    """Per-record regularized losses for a JSONL record file."""
    a = parse_alpha(alpha)
    return [
        (
            str(rec["id"]),
            regularized_loss(
                rec["policy_w"], rec["policy_l"], rec["ref_w"], rec["ref_l"], lam, a
            ),
        )
        for rec in load_records(path)
    ]
