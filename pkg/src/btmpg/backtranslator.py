"""Transformer back-translation model with a copy gate, mapping any round's paraphrase back to the source."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn as nn

from .bridge import SoftSequence
from .corpus import BOS, PAD
from .paraphraser import embed_tokens, infer_lengths, mix_copy, sequence_mask, token_nll


@dataclass
class BTConfig:
    vocab_size: int
    layers: int = 3
    model_dim: int = 450
    heads: int = 9
    ff_dim: Optional[int] = None
    dropout: float = 0.1
    max_positions: int = 256

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.ff_dim is None:
            self.ff_dim = 4 * self.model_dim


class BTOutput(NamedTuple):
    p: torch.Tensor  # [B, M, V]
    p_a: torch.Tensor  # [B, M, L] head-averaged cross-attention of the last layer
    eta: torch.Tensor  # [B, M, 1]


def sinusoidal_positions(n: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(n, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return table


def causal_mask(n: int) -> torch.Tensor:
    return torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)


class EncoderLayer(nn.Module):
    def __init__(self, c: BTConfig):
        super().__init__()
        self.attn = nn.MultiheadAttention(c.model_dim, c.heads, dropout=c.dropout, batch_first=True)
        self.ff = nn.Sequential(nn.Linear(c.model_dim, c.ff_dim), nn.ReLU(), nn.Linear(c.ff_dim, c.model_dim))
        self.norm1 = nn.LayerNorm(c.model_dim)
        self.norm2 = nn.LayerNorm(c.model_dim)
        self.drop = nn.Dropout(c.dropout)

    def forward(self, x, pad_mask):
        a, _ = self.attn(x, x, x, key_padding_mask=pad_mask, need_weights=False)
        x = self.norm1(x + self.drop(a))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, c: BTConfig):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(c.model_dim, c.heads, dropout=c.dropout, batch_first=True)
        # no attention dropout here: the last layer's weights double as the copy distribution
        self.cross_attn = nn.MultiheadAttention(c.model_dim, c.heads, batch_first=True)
        self.ff = nn.Sequential(nn.Linear(c.model_dim, c.ff_dim), nn.ReLU(), nn.Linear(c.ff_dim, c.model_dim))
        self.norm1 = nn.LayerNorm(c.model_dim)
        self.norm2 = nn.LayerNorm(c.model_dim)
        self.norm3 = nn.LayerNorm(c.model_dim)
        self.drop = nn.Dropout(c.dropout)

    def forward(self, y, memory, self_mask, memory_pad_mask):
        a, _ = self.self_attn(y, y, y, attn_mask=self_mask, need_weights=False)
        y = self.norm1(y + self.drop(a))
        a, weights = self.cross_attn(y, memory, memory, key_padding_mask=memory_pad_mask, need_weights=True)
        y = self.norm2(y + self.drop(a))
        return self.norm3(y + self.drop(self.ff(y))), weights


class BackTranslator(nn.Module):
    def __init__(self, config: BTConfig):
        super().__init__()
        self.config = c = config
        self.embedding = nn.Embedding(c.vocab_size, c.model_dim)
        self.register_buffer("positions", sinusoidal_positions(c.max_positions, c.model_dim), persistent=False)
        self.encoder_layers = nn.ModuleList(EncoderLayer(c) for _ in range(c.layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(c) for _ in range(c.layers))
        self.out_proj = nn.Linear(2 * c.model_dim, c.vocab_size)
        self.gate = nn.Linear(3 * c.model_dim, 1)
        self.drop = nn.Dropout(c.dropout)

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def _embed(self, x):
        e = embed_tokens(self.embedding, x) * math.sqrt(self.config.model_dim)
        return e, self.drop(e + self.positions[: e.size(1)].to(e.dtype))

    def encode(self, source, lengths=None):
        if source.size(1) == 0:
            raise ValueError("cannot back-translate an empty input")
        lengths = infer_lengths(source, lengths)
        if (lengths <= 0).any():
            raise ValueError("cannot back-translate an empty input")
        pad_mask = ~sequence_mask(lengths, source.size(1))
        _, x = self._embed(source)
        for layer in self.encoder_layers:
            x = layer(x, pad_mask)
        return x, pad_mask

    def forward(self, source, target, lengths=None) -> BTOutput:
        """Teacher-forced distributions for every position of ``target`` (ids framed with EOS).

        ``source`` holds ids [B, L] or soft rows [B, L, V]; soft rows go through
        the embedding as a weighted average.
        """
        memory, pad_mask = self.encode(source, lengths)
        dec_ids = torch.cat([torch.full_like(target[:, :1], BOS), target[:, :-1]], dim=1)
        e, y = self._embed(dec_ids)
        self_mask = causal_mask(y.size(1))
        weights = None
        for layer in self.decoder_layers:
            y, weights = layer(y, memory, self_mask, pad_mask)
        context = weights @ memory
        feats = torch.cat([y, context], dim=-1)
        p_d = torch.softmax(self.out_proj(feats), dim=-1)
        eta = torch.sigmoid(self.gate(torch.cat([feats, e], dim=-1)))
        p = mix_copy(p_d, weights, eta, source, self.vocab_size)
        return BTOutput(p, weights, eta)


def bt_forward(model: BackTranslator, source, target, lengths=None) -> torch.Tensor:
    return model(source, target, lengths).p


def sequence_ce(p: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Cross-entropy averaged over each sentence's non-PAD tokens, then over the batch."""
    nll = token_nll(p, target)
    mask = (target != PAD).to(nll.dtype)
    return ((nll * mask).sum(dim=1) / mask.sum(dim=1).clamp_min(1)).mean()


def bt_cross_entropy(model: BackTranslator, source, original: torch.Tensor, lengths=None) -> torch.Tensor:
    if isinstance(source, SoftSequence):
        source, lengths = source.rows, source.lengths
    return sequence_ce(model(source, original, lengths).p, original)


def combine_bt(l_p, l_s: Sequence, lam: float):
    """L_p + lambda * sum_i L_s^i."""
    total = l_p
    for term in l_s:
        total = total + lam * term
    return total


def bt_loss(
    model: BackTranslator,
    round_inputs: Sequence[SoftSequence],
    paraphrase: torch.Tensor,
    original: torch.Tensor,
    lam: float = 1.0,
    return_parts: bool = False,
):
    l_p = bt_cross_entropy(model, paraphrase, original)
    l_s = [bt_cross_entropy(model, s, original) for s in round_inputs]
    total = combine_bt(l_p, l_s, lam)
    if return_parts:
        return total, l_p, l_s
    return total
