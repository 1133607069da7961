"""Conditional-VAE paraphrase model: shared LSTM encoders, Gaussian latent, LSTM decoder with attention and copy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from .corpus import PAD

LOG_EPS = 1e-20
LOGVAR_CLAMP = 10.0


@dataclass
class ParaphraserConfig:
    vocab_size: int
    d_e: int = 300
    d_h: int = 512
    d_z: int = 128
    layers: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if min(self.vocab_size, self.d_e, self.d_h, self.d_z, self.layers) <= 0:
            raise ValueError("all paraphraser dimensions must be positive")
        if self.d_z > self.d_h:
            raise ValueError("d_z must not exceed d_h")


class EncoderOutput(NamedTuple):
    O_s: torch.Tensor  # [B, L, d_h]
    h_s: torch.Tensor  # [B, d_h]
    state: tuple  # final (h, c) of every layer, each [layers, B, d_h]
    mask: torch.Tensor  # [B, L], True on real positions
    source: torch.Tensor  # ids [B, L] or soft rows [B, L, V], for the copy scatter
    lengths: torch.Tensor


class LatentPosterior(NamedTuple):
    mu: torch.Tensor
    sigma2: torch.Tensor

    @property
    def logvar(self) -> torch.Tensor:
        return torch.log(self.sigma2)


class DecoderStepOutput(NamedTuple):
    p_d: torch.Tensor
    p_a: torch.Tensor
    eta: torch.Tensor
    p: torch.Tensor
    V_a: torch.Tensor


def is_soft(x: torch.Tensor) -> bool:
    return x.is_floating_point()


def sequence_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def infer_lengths(source: torch.Tensor, lengths: Optional[torch.Tensor]) -> torch.Tensor:
    if lengths is not None:
        return lengths.to(torch.long)
    if is_soft(source):
        return torch.full((source.size(0),), source.size(1), dtype=torch.long)
    return (source != PAD).sum(dim=1)


def embed_tokens(embedding: nn.Embedding, x: torch.Tensor) -> torch.Tensor:
    """Row lookup for ids; ``rows @ W_e`` for soft rows, so an exact one-hot equals the lookup."""
    if is_soft(x):
        return x @ embedding.weight
    return embedding(x)


def sample_latent(post: LatentPosterior, eps: Optional[torch.Tensor] = None, generator=None) -> torch.Tensor:
    """Reparameterised sample z = mu + sqrt(sigma2) * eps."""
    if eps is None:
        eps = torch.randn(post.mu.shape, generator=generator, dtype=post.mu.dtype)
    return post.mu + torch.sqrt(post.sigma2) * eps


def prior_sample(batch: int, d_z: int, generator=None, dtype=torch.float32) -> torch.Tensor:
    return torch.randn((batch, d_z), generator=generator, dtype=dtype)


def attend(O_d: torch.Tensor, O_s: torch.Tensor, mask: Optional[torch.Tensor] = None):
    """Unscaled dot-product attention.

    ``O_d`` is [B, d_h] for one step or [B, M, d_h] for a sequence; returns
    (p_a, V_a) with matching leading shape.
    """
    single = O_d.dim() == 2
    q = O_d.unsqueeze(1) if single else O_d
    scores = q @ O_s.transpose(1, 2)
    if mask is not None:
        scores = scores.masked_fill(~mask[:, None, :], float("-inf"))
    p_a = torch.softmax(scores, dim=-1)
    V_a = p_a @ O_s
    if single:
        return p_a.squeeze(1), V_a.squeeze(1)
    return p_a, V_a


def copy_scatter(p_a: torch.Tensor, source: torch.Tensor, vocab_size: int) -> torch.Tensor:
    """Move attention mass over source positions onto the vocabulary.

    Hard sources scatter-add by token id (duplicates accumulate); soft sources
    spread each position's weight over its row distribution.
    """
    single = p_a.dim() == 2
    pa = p_a.unsqueeze(1) if single else p_a
    if is_soft(source):
        out = pa @ source.to(pa.dtype)
    else:
        index = source[:, None, :].expand(-1, pa.size(1), -1)
        out = pa.new_zeros(pa.size(0), pa.size(1), vocab_size).scatter_add(2, index, pa)
    return out.squeeze(1) if single else out


def mix_copy(p_d, p_a, eta, source, vocab_size: int) -> torch.Tensor:
    """Final output distribution eta * p_d + (1 - eta) * scatter(p_a)."""
    return eta * p_d + (1.0 - eta) * copy_scatter(p_a, source, vocab_size)


def kl_loss(post: LatentPosterior) -> torch.Tensor:
    """Closed-form KL(N(mu, sigma2) || N(0, I)) summed over latent dims, one value per row."""
    mu, sigma2 = post.mu, post.sigma2
    return 0.5 * torch.sum(mu.pow(2) + sigma2 - 1.0 - torch.log(sigma2), dim=-1)


def first_word_coefficient(n_batch: int, n_w1: int) -> float:
    """ln((N_b / n_w1) * e); at least 1 whenever n_w1 <= N_b."""
    if not 1 <= n_w1 <= n_batch:
        raise ValueError("need 1 <= n_w1 <= N_b")
    return 1.0 + math.log(n_batch / n_w1)


def first_word_coefficients(targets: torch.Tensor) -> torch.Tensor:
    """Per-sentence coefficient from how many batch targets share its first token."""
    first = targets[:, 0]
    counts = (first[:, None] == first[None, :]).sum(dim=1)
    return 1.0 + torch.log(targets.size(0) / counts.to(torch.float64))


def token_nll(p: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """-log p(target) per position; ``p`` holds probabilities, not logits."""
    picked = p.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked + LOG_EPS)


def paraphrase_loss(
    p: torch.Tensor,
    targets: torch.Tensor,
    post: Optional[LatentPosterior] = None,
    first_word_coeff: Optional[torch.Tensor] = None,
    kl_weight: float = 1.0,
    first_word_mode: str = "replace",
    return_parts: bool = False,
):
    """Negative ELBO with the first-word penalty.

    Cross-entropy is averaged over each sentence's non-PAD tokens, then over the
    batch; the KL term is summed over latent dims and averaged over the batch.
    ``first_word_mode`` is "replace" (scale the first token's NLL by the
    coefficient), "add" (add the scaled term on top of the plain NLL) or "off".
    """
    nll = token_nll(p, targets)
    mask = (targets != PAD).to(nll.dtype)
    if first_word_mode != "off":
        if first_word_coeff is None:
            first_word_coeff = first_word_coefficients(targets)
        coeff = first_word_coeff.to(nll.dtype)
        if first_word_mode == "add":
            coeff = coeff + 1.0
        elif first_word_mode != "replace":
            raise ValueError(f"unknown first_word_mode {first_word_mode!r}")
        weights = torch.ones_like(nll)
        weights[:, 0] = coeff
        nll = nll * weights
    ce = ((nll * mask).sum(dim=1) / mask.sum(dim=1).clamp_min(1)).mean()
    kl = kl_loss(post).mean() if post is not None else ce.new_zeros(())
    total = ce + kl_weight * kl
    if return_parts:
        return total, ce, kl
    return total


class Paraphraser(nn.Module):
    def __init__(self, config: ParaphraserConfig):
        super().__init__()
        self.config = c = config
        self.embedding = nn.Embedding(c.vocab_size, c.d_e)
        # one LSTM serves as both the source and paraphrase encoder
        self.encoder = nn.LSTM(c.d_e, c.d_h, c.layers, batch_first=True)
        self.mu_head = nn.Linear(c.d_h, c.d_z)
        self.logvar_head = nn.Linear(c.d_h, c.d_z)
        self.init_proj = nn.Linear(c.d_h, c.layers * c.d_h)
        self.decoder = nn.LSTM(c.d_e + c.d_z, c.d_h, c.layers, batch_first=True)
        self.out_proj = nn.Linear(2 * c.d_h, c.vocab_size)  # W_o, b_o
        self.gate_h = nn.Linear(2 * c.d_h, 1)  # W_h, b_eta
        self.gate_s = nn.Linear(c.d_e + c.d_z, 1, bias=False)  # W_s
        self.dropout = nn.Dropout(c.dropout)

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return embed_tokens(self.embedding, x)

    def _run_lstm(self, lstm: nn.LSTM, emb, lengths, state=None):
        packed = nn.utils.rnn.pack_padded_sequence(emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, (h, c) = lstm(packed, state)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=emb.size(1))
        return out, (h, c)

    def encode_source(self, source: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> EncoderOutput:
        """Encode ids [B, L] or soft rows [B, L, V]."""
        if source.size(1) == 0:
            raise ValueError("cannot encode an empty sequence")
        lengths = infer_lengths(source, lengths)
        if (lengths <= 0).any():
            raise ValueError("cannot encode an empty sequence")
        emb = self.dropout(self.embed(source))
        O_s, state = self._run_lstm(self.encoder, emb, lengths)
        return EncoderOutput(O_s, state[0][-1], state, sequence_mask(lengths, source.size(1)), source, lengths)

    def encode_posterior(self, target: torch.Tensor, enc: EncoderOutput, lengths=None) -> LatentPosterior:
        lengths = infer_lengths(target, lengths)
        emb = self.dropout(self.embed(target))
        _, (h, _) = self._run_lstm(self.encoder, emb, lengths, enc.state)
        h_z = h[-1]
        logvar = self.logvar_head(h_z).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        return LatentPosterior(self.mu_head(h_z), torch.exp(logvar))

    def init_state(self, enc: EncoderOutput):
        c = self.config
        B = enc.h_s.size(0)
        h0 = torch.tanh(self.init_proj(enc.h_s)).view(B, c.layers, c.d_h).transpose(0, 1).contiguous()
        return h0, torch.zeros_like(h0)

    def _output(self, O_d, dec_in, enc: EncoderOutput):
        p_a, V_a = attend(O_d, enc.O_s, enc.mask)
        feats = torch.cat([O_d, V_a], dim=-1)
        p_d = torch.softmax(self.out_proj(feats), dim=-1)
        eta = torch.sigmoid(self.gate_h(feats) + self.gate_s(dec_in))
        p = mix_copy(p_d, p_a, eta, enc.source, self.vocab_size)
        return DecoderStepOutput(p_d, p_a, eta, p, V_a)

    def decode_step(self, e_d: torch.Tensor, z: torch.Tensor, state, enc: EncoderOutput):
        """One decoder step from the previous token's embedding ``e_d`` [B, d_e]."""
        dec_in = torch.cat([e_d, z], dim=-1)
        out, state = self.decoder(self.dropout(dec_in).unsqueeze(1), state)
        return self._output(out.squeeze(1), dec_in, enc), state

    def decode_teacher_forced(self, decoder_input: torch.Tensor, z: torch.Tensor, enc: EncoderOutput) -> DecoderStepOutput:
        """Teacher-forced pass over BOS + gold prefix; every field gains a time axis."""
        e = self.embed(decoder_input)
        dec_in = torch.cat([e, z[:, None, :].expand(-1, e.size(1), -1)], dim=-1)
        O_d, _ = self.decoder(self.dropout(dec_in), self.init_state(enc))
        return self._output(O_d, dec_in, enc)
