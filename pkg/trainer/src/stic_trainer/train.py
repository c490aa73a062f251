"""Toy training loops: preference fine-tuning with a frozen reference, and
supervised next-token tuning on the description-infused set.

The point is not model quality; it is an executable cross-check that the
regularized objective behaves as specified inside a real autodiff loop:
margins start at exactly zero against a fresh reference clone, the initial
per-record loss is ln2 + alpha * (-policy_w), and a training epoch moves
the mean loss down.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Union

import torch
import torch.nn.functional as F

from .data import load_preference_pairs, load_sft_examples
from .losses import parse_alpha
from .model import TinyCharLM, clone_frozen_reference, sequence_logprobs


@dataclass
class ToyTrainConfig:
    lam: float = 0.1
    alpha: Union[str, float] = "1/1024"
    learning_rate: float = 1e-7
    optimizer: str = "adamw"
    global_batch_size: int = 4
    epochs: int = 1
    lora_r: int = 128
    lora_alpha: int = 256
    warmup_ratio: float = 0.03
    lr_scheduler: str = "cosine"
    weight_decay: float = 0.0
    model_max_length: int = 1024
    sft_learning_rate: float = 2e-5
    sft_global_batch_size: int = 64
    d_model: int = 32
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.alpha_value() < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        for name in ("learning_rate", "sft_learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("global_batch_size", "epochs", "lora_r", "lora_alpha", "model_max_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def alpha_value(self) -> float:
        return parse_alpha(self.alpha)


def _build_model(cfg: ToyTrainConfig) -> TinyCharLM:
    torch.manual_seed(cfg.seed)
    return TinyCharLM(
        d_model=cfg.d_model, hidden=cfg.hidden, lora_r=cfg.lora_r, lora_alpha=cfg.lora_alpha
    )


def _make_optimizer(params, lr: float, cfg: ToyTrainConfig, total_steps: int):
    if cfg.optimizer.lower() != "adamw":
        raise ValueError(f"unsupported optimizer {cfg.optimizer!r}")
    optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=cfg.weight_decay)
    warmup = max(1, int(round(cfg.warmup_ratio * total_steps)))

    def schedule(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        if cfg.lr_scheduler == "cosine" and total_steps > warmup:
            progress = (step - warmup) / (total_steps - warmup)
            return 0.5 * (1.0 + math.cos(math.pi * progress))
        return 1.0

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, schedule)
    return optimizer, scheduler


def _preference_batch_losses(policy, reference, batch, cfg: ToyTrainConfig):
    prompts = [p.prompt_ids for p in batch]
    chosen = [p.chosen_ids for p in batch]
    rejected = [p.rejected_ids for p in batch]
    policy_w = sequence_logprobs(policy, prompts, chosen)
    policy_l = sequence_logprobs(policy, prompts, rejected)
    with torch.no_grad():
        ref_w = sequence_logprobs(reference, prompts, chosen)
        ref_l = sequence_logprobs(reference, prompts, rejected)
    margins = cfg.lam * ((policy_w - ref_w) - (policy_l - ref_l))
    losses = F.softplus(-margins) - cfg.alpha_value() * policy_w
    return losses, margins, policy_w


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start : start + size]


@torch.no_grad()
def _eval_preference(policy, reference, pairs, cfg: ToyTrainConfig):
    records = []
    for batch in _batches(pairs, cfg.global_batch_size):
        losses, margins, policy_w = _preference_batch_losses(policy, reference, batch, cfg)
        for pair, loss, m, pw in zip(batch, losses, margins, policy_w):
            records.append(
                {
                    "id": pair.pair_id,
                    "loss": float(loss),
                    "margin": float(m),
                    "policy_w": float(pw),
                }
            )
    mean = sum(r["loss"] for r in records) / len(records)
    return mean, records


def train_toy(pref_path, cfg: ToyTrainConfig) -> dict:
    """One preference fine-tuning run; returns the training report."""
    pairs = load_preference_pairs(pref_path, cfg.model_max_length)
    if len(pairs) < 64:
        raise ValueError(f"need at least 64 preference records, got {len(pairs)}")
    policy = _build_model(cfg)
    reference = clone_frozen_reference(policy)
    policy.train()

    initial_mean, initial_records = _eval_preference(policy, reference, pairs, cfg)

    steps_per_epoch = math.ceil(len(pairs) / cfg.global_batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    optimizer, scheduler = _make_optimizer(
        policy.trainable_parameters(), cfg.learning_rate, cfg, total_steps
    )

    generator = torch.Generator().manual_seed(cfg.seed)
    loss_curve = []
    margin_curve = []
    for _ in range(cfg.epochs):
        order = torch.randperm(len(pairs), generator=generator).tolist()
        shuffled = [pairs[i] for i in order]
        for batch in _batches(shuffled, cfg.global_batch_size):
            losses, margins, _ = _preference_batch_losses(policy, reference, batch, cfg)
            loss = losses.mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            loss_curve.append(float(loss.detach()))
            margin_curve.append(float(margins.detach().mean()))

    policy.eval()
    final_mean, _ = _eval_preference(policy, reference, pairs, cfg)
    return {
        "kind": "preference",
        "config": asdict(cfg),
        "records": len(pairs),
        "initial_mean_loss": initial_mean,
        "final_mean_loss": final_mean,
        "decreased": final_mean < initial_mean,
        "final_initial_ratio": final_mean / initial_mean if initial_mean else float("nan"),
        "loss_curve": loss_curve,
        "margin_curve": margin_curve,
        "initial_records": initial_records,
    }


def _sft_batch_loss(model, batch):
    prompts = [e.prompt_ids for e in batch]
    completions = [e.completion_ids for e in batch]
    logprobs = sequence_logprobs(model, prompts, completions)
    lengths = torch.tensor([len(c) for c in completions], dtype=torch.double)
    return -(logprobs / lengths).mean()


@torch.no_grad()
def _eval_sft(model, examples, batch_size):
    total = 0.0
    for batch in _batches(examples, batch_size):
        total += float(_sft_batch_loss(model, batch)) * len(batch)
    return total / len(examples)


def sft_toy(infused_path, cfg: ToyTrainConfig) -> dict:
    """One supervised epoch over (infused prompt -> completion) pairs."""
    examples = load_sft_examples(infused_path, cfg.model_max_length)
    if not examples:
        raise ValueError("infused dataset is empty")
    model = _build_model(cfg)
    model.train()

    batch_size = min(cfg.sft_global_batch_size, len(examples))
    initial_mean = _eval_sft(model, examples, batch_size)

    steps_per_epoch = math.ceil(len(examples) / batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    optimizer, scheduler = _make_optimizer(
        model.trainable_parameters(), cfg.sft_learning_rate, cfg, total_steps
    )

    generator = torch.Generator().manual_seed(cfg.seed)
    loss_curve = []
    for _ in range(cfg.epochs):
        order = torch.randperm(len(examples), generator=generator).tolist()
        shuffled = [examples[i] for i in order]
        for batch in _batches(shuffled, batch_size):
            loss = _sft_batch_loss(model, batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            loss_curve.append(float(loss.detach()))

    model.eval()
    final_mean = _eval_sft(model, examples, batch_size)
    return {
        "kind": "sft",
        "config": asdict(cfg),
        "records": len(examples),
        "initial_mean_loss": initial_mean,
        "final_mean_loss": final_mean,
        "decreased": final_mean < initial_mean,
        "final_initial_ratio": final_mean / initial_mean if initial_mean else float("nan"),
        "loss_curve": loss_curve,
    }
