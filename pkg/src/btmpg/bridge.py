"""Gumbel-softmax hand-off between models: noise, relaxation, soft embedding, temperature, soft decoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from .corpus import BOS, EOS
from .paraphraser import LOG_EPS

GUMBEL_EPS = 1e-20
AS_PRINTED = "as-printed"
INCREASING = "increasing"


@dataclass
class SoftSequence:
    """Row-stochastic stand-in for a batch of sentences."""

    rows: torch.Tensor  # [B, N, V]
    lengths: torch.Tensor  # [B]

    def __len__(self) -> int:
        return self.rows.size(0)

    def argmax_ids(self) -> torch.Tensor:
        return self.rows.argmax(dim=-1)

    @classmethod
    def one_hot(cls, ids: torch.Tensor, vocab_size: int, lengths=None, dtype=torch.float32) -> "SoftSequence":
        rows = torch.nn.functional.one_hot(ids, vocab_size).to(dtype)
        if lengths is None:
            lengths = torch.full((ids.size(0),), ids.size(1), dtype=torch.long)
        return cls(rows, lengths)


def gumbel_noise(shape, seed: Optional[int] = None, generator: Optional[torch.Generator] = None, dtype=torch.float32):
    """g = -log(-log u) with u ~ U(0, 1), kept finite by a 1e-20 offset."""
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else seed)
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return gumbel_from_uniform(u)


def gumbel_from_uniform(u: torch.Tensor) -> torch.Tensor:
    return -torch.log(-torch.log(u + GUMBEL_EPS) + GUMBEL_EPS)


def gumbel_softmax(p: torch.Tensor, tau: float, g: Optional[torch.Tensor] = None) -> torch.Tensor:
    """softmax((log p + g) / tau) over the last axis; ``g=None`` means zero noise."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = torch.log(p + LOG_EPS)
    if g is not None:
        logits = logits + g
    return torch.softmax(logits / tau, dim=-1)


def soft_embed(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """Each row becomes its probability-weighted average of embedding rows."""
    return x @ weight


@dataclass
class TemperatureSchedule:
    tau_max: float = 5.0
    total_epochs: int = 30
    direction: str = AS_PRINTED

    def __post_init__(self):
        if self.tau_max <= 0:
            raise ValueError("tau_max must be positive")
        if self.direction not in (AS_PRINTED, INCREASING):
            raise ValueError(f"unknown direction {self.direction!r}")

    def __call__(self, epoch: int) -> float:
        return temperature(epoch, self)


def temperature(n_e: int, schedule: TemperatureSchedule) -> float:
    """tau_max ** (-n_e / N_e), or its reciprocal when the schedule is increasing."""
    frac = n_e / max(schedule.total_epochs, 1)
    if schedule.direction == INCREASING:
        return schedule.tau_max**frac
    return schedule.tau_max ** (-frac)


def autoregressive_soft_decode(
    model,
    z: torch.Tensor,
    enc,
    max_len: int = 21,
    tau: float = 1.0,
    generator: Optional[torch.Generator] = None,
    noise: Optional[torch.Tensor] = None,
) -> SoftSequence:
    """Decode without teacher forcing, feeding each step's gumbel-softmax row back in.

    ``noise`` [B, max_len, V] freezes the gumbel draws; otherwise they come from
    ``generator``. A sentence ends at the first row whose argmax is EOS.
    """
    B, V = z.size(0), model.vocab_size
    dtype = z.dtype
    prev = torch.zeros(B, V, dtype=dtype)
    prev[:, BOS] = 1.0
    state = model.init_state(enc)
    rows = []
    lengths = torch.full((B,), max_len, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    for t in range(max_len):
        out, state = model.decode_step(model.embed(prev), z, state, enc)
        g = noise[:, t] if noise is not None else gumbel_noise((B, V), generator=generator, dtype=dtype)
        y = gumbel_softmax(out.p, tau, g)
        rows.append(y)
        hit_eos = (y.argmax(dim=-1) == EOS) & ~done
        lengths[hit_eos] = t + 1
        done |= hit_eos
        if done.all():
            break
        prev = y
    return SoftSequence(torch.stack(rows, dim=1), lengths)
