"""Multi-round paraphrase generation with greedy decoding and UNK repair."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import BOS, EOS, MAX_TOKENS, PAD, SPECIALS, UNK, Vocabulary, pad_sequences, tokenize
from .paraphraser import Paraphraser

UNK_SURFACE = SPECIALS[UNK]


@dataclass
class RoundResult:
    round: int
    token_ids: list[int]
    text: str
    copy_attention: np.ndarray  # [N, L], one row per emitted token
    source_text: str


def sentence_generator(seed: int, index: int) -> torch.Generator:
    """Independent stream per input line, so results do not depend on batching."""
    g = torch.Generator()
    g.manual_seed(int(np.random.SeedSequence([seed, index]).generate_state(1)[0]))
    return g


@torch.no_grad()
def greedy_decode(
    model: Paraphraser,
    z: torch.Tensor,
    enc,
    max_len: int = MAX_TOKENS + 1,
    sample: bool = False,
    generators: Optional[Sequence[torch.Generator]] = None,
):
    """Argmax (or sampled) decoding over the mixed output distribution.

    Returns per-sentence token ids (EOS stripped) and copy-attention rows
    [N, L] aligned with them. EOS is barred at the first step so no round
    comes back empty.
    """
    B = z.size(0)
    prev = torch.full((B,), BOS, dtype=torch.long)
    state = model.init_state(enc)
    ids = [[] for _ in range(B)]
    attn = [[] for _ in range(B)]
    done = [False] * B
    for t in range(max_len):
        out, state = model.decode_step(model.embed(prev), z, state, enc)
        p = out.p.clone()
        p[:, PAD] = 0.0
        p[:, BOS] = 0.0
        if t == 0:
            p[:, EOS] = 0.0
        if t == max_len - 1:
            p[:, :] = 0.0
            p[:, EOS] = 1.0
        if sample:
            nxt = torch.stack([torch.multinomial(p[b] / p[b].sum(), 1, generator=generators[b])[0] for b in range(B)])
        else:
            nxt = p.argmax(dim=-1)
        for b in range(B):
            if done[b]:
                continue
            tok = int(nxt[b])
            if tok == EOS:
                done[b] = True
                continue
            ids[b].append(tok)
            attn[b].append(out.p_a[b].cpu().numpy())
        if all(done):
            break
        prev = nxt
    copy = [np.array(a).reshape(len(a), -1) for a in attn]
    return ids, copy


def replace_unk(token_ids: Sequence[int], copy_attention, source_tokens: Sequence[str], vocab: Vocabulary) -> list[str]:
    """Map ids to words, filling each UNK with the source word it attends to most.

    Positions outside the source words (e.g. the EOS slot) and source words that
    are themselves the UNK surface are skipped; with no usable position the UNK
    is dropped.
    """
    out = []
    for step, tok in enumerate(token_ids):
        if tok != UNK:
            out.append(vocab.tokens[tok])
            continue
        row = np.asarray(copy_attention[step], dtype=float)
        for pos in np.argsort(-row, kind="stable"):
            if pos < len(source_tokens) and source_tokens[pos] != UNK_SURFACE:
                out.append(source_tokens[pos])
                break
    return out


def encode_sentences(tokens: Sequence[Sequence[str]], vocab: Vocabulary) -> tuple[torch.Tensor, torch.Tensor]:
    return pad_sequences([vocab.encode(t) + [EOS] for t in tokens])


@torch.no_grad()
def generate_batch(
    sentences: Sequence[str],
    rounds: int,
    model: Paraphraser,
    vocab: Vocabulary,
    seed: int = 0,
    offset: int = 0,
    max_len: int = MAX_TOKENS + 1,
    sample: bool = False,
) -> list[list[RoundResult]]:
    """Chain ``rounds`` rounds for each sentence; result[i][r] is sentence i's round r+1."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    model.eval()
    dtype = next(model.parameters()).dtype
    gens = [sentence_generator(seed, offset + i) for i in range(len(sentences))]
    texts = list(sentences)
    results: list[list[RoundResult]] = [[] for _ in sentences]
    for r in range(1, rounds + 1):
        tokens = [tokenize(t)[:MAX_TOKENS] for t in texts]
        for t, raw in zip(tokens, texts):
            if not t:
                raise ValueError(f"cannot paraphrase an empty sentence: {raw!r}")
        src, lengths = encode_sentences(tokens, vocab)
        enc = model.encode_source(src, lengths)
        z = torch.stack([torch.randn(model.config.d_z, generator=g, dtype=dtype) for g in gens])
        ids, copy = greedy_decode(model, z, enc, max_len, sample, gens)
        new_texts = []
        for i in range(len(texts)):
            words = replace_unk(ids[i], copy[i], tokens[i], vocab)
            text = " ".join(words)
            results[i].append(RoundResult(r, ids[i], text, copy[i], texts[i]))
            new_texts.append(text if words else texts[i])
        texts = new_texts
    return results


def generate_rounds(source: str, rounds: int, model: Paraphraser, vocab: Vocabulary, seed: int = 0, **kw) -> list[RoundResult]:
    return generate_batch([source], rounds, model, vocab, seed, **kw)[0]


def generate_corpus(
    sentences: Sequence[str],
    rounds: int,
    model: Paraphraser,
    vocab: Vocabulary,
    seed: int = 0,
    batch_size: int = 64,
    max_len: int = MAX_TOKENS + 1,
    sample: bool = False,
) -> list[list[str]]:
    """Per-round corpora: output[r][i] is the round r+1 paraphrase of line i."""
    per_round: list[list[str]] = [[] for _ in range(rounds)]
    for start in range(0, len(sentences), batch_size):
        chunk = generate_batch(sentences[start : start + batch_size], rounds, model, vocab, seed, start, max_len, sample)
        for res in chunk:
            for r, rr in enumerate(res):
                per_round[r].append(rr.text)
    return per_round
