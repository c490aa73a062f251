"""Tiny byte-level language model with low-rank adapters.

The base weights stay frozen during preference training; only the adapter
matrices learn. Adapters initialize to an exact zero delta, so a freshly
cloned frozen reference and the policy start out numerically identical.
Everything runs in float64 to keep loss identities checkable at desk scale.
"""

from __future__ import annotations

import copy

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import BOS_ID, PAD_ID, VOCAB_SIZE


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank delta (scale/r * B A)."""

    def __init__(self, base: nn.Linear, rank: int, scale: float):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.scaling = scale / rank
        self.lora_a = nn.Parameter(torch.randn(rank, base.in_features, dtype=base.weight.dtype) * 0.01)
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank, dtype=base.weight.dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * F.linear(F.linear(x, self.lora_a), self.lora_b)


class TinyCharLM(nn.Module):
    """Embedding -> adapted input projection -> GRU -> adapted output head."""

    def __init__(self, d_model: int = 32, hidden: int = 64, lora_r: int = 128, lora_alpha: int = 256):
        super().__init__()
        self.embed = nn.Embedding(VOCAB_SIZE, d_model, padding_idx=PAD_ID)
        self.in_proj = LoRALinear(nn.Linear(d_model, d_model), lora_r, float(lora_alpha))
        self.rnn = nn.GRU(d_model, hidden, batch_first=True)
        self.head = LoRALinear(nn.Linear(hidden, VOCAB_SIZE), lora_r, float(lora_alpha))
        self.embed.weight.requires_grad_(False)
        for p in self.rnn.parameters():
            p.requires_grad_(False)
        self.double()

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.in_proj(self.embed(ids))
        out, _ = self.rnn(x)
        return self.head(out)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def clone_frozen_reference(model: TinyCharLM) -> TinyCharLM:
    ref = copy.deepcopy(model)
    for p in ref.parameters():
        p.requires_grad_(False)
    ref.eval()
    return ref


def pad_batch(sequences: list[list[int]]) -> torch.Tensor:
    width = max(len(s) for s in sequences)
    out = torch.full((len(sequences), width), PAD_ID, dtype=torch.long)
    for i, seq in enumerate(sequences):
        out[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return out


def sequence_logprobs(
    model: nn.Module, prompts: list[tuple[int, ...]], completions: list[tuple[int, ...]]
) -> torch.Tensor:
    """Sum of completion-token log-probs given the prompt, per sequence."""
    ids = pad_batch([[BOS_ID, *p, *c] for p, c in zip(prompts, completions)])
    logits = model(ids[:, :-1])
    logprobs = F.log_softmax(logits, dim=-1)
    targets = ids[:, 1:]
    picked = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    mask = torch.zeros_like(picked)
    for i, (p, c) in enumerate(zip(prompts, completions)):
        mask[i, len(p) : len(p) + len(c)] = 1.0
    return (picked * mask).sum(dim=-1)
