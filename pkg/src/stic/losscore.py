"""Preference-loss core with analytic gradients.

Implements the loss family used for preference fine-tuning on sequence
log-probabilities: autoregressive sequence log-prob totals, the logistic
preference (DPO) loss on policy/reference log-ratios, the self-play variant
(same arithmetic, reference = previous iterate), and the regularized
objective that adds an explicit pull on the preferred response's policy
log-prob. All gradients are with respect to the four sequence log-probs a
record carries, not model parameters.

Everything is plain float64 with numerically stable kernels: the logistic
loss never overflows for any finite margin, and batch means use compensated
summation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


class RecordParseError(ValueError):
    """A loss-record file line failed to parse or validate."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class PreferenceLogprobRecord:
    """The four sequence log-prob totals (nats) the loss consumes."""

    record_id: str
    policy_w: float
    policy_l: float
    ref_w: float
    ref_l: float

    def __post_init__(self):
        for name in ("policy_w", "policy_l", "ref_w", "ref_l"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
            if v > 0:
                raise ValueError(f"{name} is a log-probability and must be <= 0, got {v}")


@dataclass(frozen=True)
class LossConfig:
    """lam scales the log-ratio margin; alpha weights the preferred-response pull."""

    lam: float = 0.1
    alpha: float = 1.0 / 1024.0

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be positive and finite, got {self.lam}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be non-negative and finite, got {self.alpha}")


def seq_logprob(token_logprobs: Sequence[float]) -> float:
    """Total sequence log-prob: compensated sum of per-token log-probs."""
    if len(token_logprobs) == 0:
        raise ValueError("sequence must contain at least one token log-prob")
    for i, v in enumerate(token_logprobs):
        if not math.isfinite(v):
            raise ValueError(f"token log-prob {i} must be finite, got {v!r}")
        if v > 0:
            raise ValueError(f"token log-prob {i} must be <= 0, got {v}")
    return math.fsum(token_logprobs)


def logistic_loss(t: float) -> float:
    """log(1 + exp(-t)), evaluated without overflow for any finite t."""
    if not math.isfinite(t):
        raise ValueError(f"logistic_loss requires a finite argument, got {t!r}")
    if t >= 0:
        return math.log1p(math.exp(-t))
    return -t + math.log1p(math.exp(t))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def margin(rec: PreferenceLogprobRecord, lam: float) -> float:
    """lam * [(policy_w - ref_w) - (policy_l - ref_l)]."""
    return lam * ((rec.policy_w - rec.ref_w) - (rec.policy_l - rec.ref_l))


def dpo_loss(rec: PreferenceLogprobRecord, lam: float) -> float:
    """Logistic loss on the scaled log-ratio margin."""
    return logistic_loss(margin(rec, lam))


def spin_loss(rec: PreferenceLogprobRecord, lam: float) -> float:
    """Self-play variant: numerically identical to dpo_loss.

    The caller supplies ref_* from the previous model iterate and the
    dispreferred side from the model's own generation; the arithmetic on the
    four log-probs is the same.
    """
    return dpo_loss(rec, lam)


def stic_loss(rec: PreferenceLogprobRecord, cfg: LossConfig) -> float:
    """Regularized loss: logistic margin term minus alpha * policy_w.

    policy_w <= 0, so the regularizer contributes >= 0 and pulls the policy
    toward higher probability on the preferred response.
    """
    return logistic_loss(margin(rec, cfg.lam)) - cfg.alpha * rec.policy_w


def stic_loss_grad(rec: PreferenceLogprobRecord, cfg: LossConfig) -> tuple[float, float, float, float]:
    """Analytic gradient of stic_loss w.r.t. (policy_w, policy_l, ref_w, ref_l).

    With s = sigmoid(-lam * margin): (-lam*s - alpha, +lam*s, +lam*s, -lam*s).
    The four components always sum to -alpha.
    """
    s = _sigmoid(-margin(rec, cfg.lam))
    ls = cfg.lam * s
    return (-ls - cfg.alpha, ls, ls, -ls)


@dataclass(frozen=True)
class RecordLoss:
    record_id: str
    loss: float
    margin: float
    dpo_term: float
    reg_term: float
    gradient: Optional[tuple[float, float, float, float]] = None

    def to_dict(self) -> dict:
        d = {
            "id": self.record_id,
            "loss": self.loss,
            "margin": self.margin,
            "dpo_term": self.dpo_term,
            "reg_term": self.reg_term,
        }
        if self.gradient is not None:
            d["gradient"] = {
                "policy_w": self.gradient[0],
                "policy_l": self.gradient[1],
                "ref_w": self.gradient[2],
                "ref_l": self.gradient[3],
            }
        return d


@dataclass(frozen=True)
class LossReport:
    lam: float
    alpha: float
    records: tuple[RecordLoss, ...]
    mean_loss: float
    mean_margin: float
    frac_margin_positive: float

    def to_dict(self) -> dict:
        return {
            "config": {"lambda": self.lam, "alpha": self.alpha},
            "aggregate": {
                "count": len(self.records),
                "mean_loss": self.mean_loss,
                "mean_margin": self.mean_margin,
                "frac_margin_positive": self.frac_margin_positive,
            },
            "records": [r.to_dict() for r in self.records],
        }


def batch_report(
    records: Iterable[PreferenceLogprobRecord],
    cfg: LossConfig,
    want_grads: bool = False,
) -> LossReport:
    """Per-record losses plus compensated-sum aggregates over the batch."""
    entries = []
    for rec in records:
        m = margin(rec, cfg.lam)
        dpo_term = logistic_loss(m)
        reg_term = -cfg.alpha * rec.policy_w
        grad = stic_loss_grad(rec, cfg) if want_grads else None
        entries.append(
            RecordLoss(
                record_id=rec.record_id,
                loss=dpo_term + reg_term,
                margin=m,
                dpo_term=dpo_term,
                reg_term=reg_term,
                gradient=grad,
            )
        )
    if not entries:
        raise ValueError("batch_report requires a non-empty batch")
    n = len(entries)
    mean_loss = math.fsum(e.loss for e in entries) / n
    mean_margin = math.fsum(e.margin for e in entries) / n
    frac_pos = sum(1 for e in entries if e.margin > 0) / n
    return LossReport(
        lam=cfg.lam,
        alpha=cfg.alpha,
        records=tuple(entries),
        mean_loss=mean_loss,
        mean_margin=mean_margin,
        frac_margin_positive=frac_pos,
    )


_RECORD_FIELDS = ("policy_w", "policy_l", "ref_w", "ref_l")


def parse_logprob_record(obj: dict, line_no: int = 0) -> PreferenceLogprobRecord:
    if not isinstance(obj, dict):
        raise RecordParseError(line_no, "expected a JSON object")
    if "id" not in obj:
        raise RecordParseError(line_no, "missing field 'id'")
    values = {}
    for field in _RECORD_FIELDS:
        if field not in obj:
            raise RecordParseError(line_no, f"missing field '{field}'")
        v = obj[field]
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise RecordParseError(line_no, f"field '{field}' must be a number")
        values[field] = float(v)
    try:
        return PreferenceLogprobRecord(record_id=str(obj["id"]), **values)
    except ValueError as exc:
        raise RecordParseError(line_no, str(exc)) from exc


def load_logprob_records(path) -> list[PreferenceLogprobRecord]:
    """Read a JSONL file of loss records; errors name the offending line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(line_no, f"invalid JSON: {exc.msg}") from exc
            records.append(parse_logprob_record(obj, line_no))
    return records
