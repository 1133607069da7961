"""Paraphrase corpora: tokenization, vocabulary, loaders and padded batches."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import torch

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")
MAX_TOKENS = 20

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, keeping each punctuation mark as its own token."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Bijective token <-> id map whose first four ids are the reserved specials."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        self.tokens = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    pad, unk, bos, eos = PAD, UNK, BOS, EOS

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())

    def digest(self) -> str:
        """sha256 of the saved file contents."""
        data = "".join(t + "\n" for t in self.tokens).encode("utf-8")
        return hashlib.sha256(data).hexdigest()


@dataclass
class ParaphrasePair:
    source_ids: list[int]
    target_ids: list[int]
    raw_source: str
    raw_target: str


def build_vocab(pairs: Iterable, max_size: int = 25_000 + len(SPECIALS)) -> Vocabulary:
    """Keep the most frequent tokens (ties by first occurrence) up to ``max_size`` ids in total.

    ``pairs`` may hold ParaphrasePair objects or plain (source, target) string tuples.
    """
    if max_size < len(SPECIALS):
        raise ValueError("max_size must leave room for the four specials")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for pair in pairs:
        texts = (pair.raw_source, pair.raw_target) if isinstance(pair, ParaphrasePair) else pair
        for text in texts:
            for tok in tokenize(text):
                if tok in SPECIALS:
                    continue
                counts[tok] += 1
                first_seen.setdefault(tok, len(first_seen))
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocabulary(list(SPECIALS) + ranked[: max_size - len(SPECIALS)])


def make_pair(source: str, target: str, vocab: Vocabulary | None = None, max_len: int = MAX_TOKENS) -> ParaphrasePair:
    src = tokenize(source)[:max_len]
    tgt = tokenize(target)[:max_len]
    if vocab is None:
        return ParaphrasePair([], [], source, target)
    return ParaphrasePair(vocab.encode(src), vocab.encode(tgt), source, target)


def encode_pairs(pairs: Iterable[ParaphrasePair], vocab: Vocabulary, max_len: int = MAX_TOKENS) -> list[ParaphrasePair]:
    return [make_pair(p.raw_source, p.raw_target, vocab, max_len) for p in pairs]


def load_quora(path: str | Path) -> Iterator[ParaphrasePair]:
    """Yield duplicate question pairs (is_duplicate == 1) from the Quora CSV/TSV dump."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Quora file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        head = fh.readline()
        fh.seek(0)
        delimiter = "\t" if head.count("\t") > head.count(",") else ","
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = {"question1", "question2", "is_duplicate"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        skipped = 0
        for row in reader:
            q1, q2, dup = row.get("question1"), row.get("question2"), row.get("is_duplicate")
            if not q1 or not q2 or dup is None or dup.strip() not in ("0", "1"):
                skipped += 1
                continue
            if dup.strip() == "1":
                yield make_pair(q1, q2)
    if skipped:
        logger.warning("%s: skipped %d malformed rows", path, skipped)


def pair_consecutive(captions: Sequence[str]) -> list[tuple[str, str]]:
    """Default MSCOCO policy: disjoint consecutive pairs (c1,c2), (c3,c4), ..."""
    return [(captions[i], captions[i + 1]) for i in range(0, len(captions) - 1, 2)]


def load_mscoco(
    path: str | Path,
    pairing: Callable[[Sequence[str]], list[tuple[str, str]]] = pair_consecutive,
) -> Iterator[ParaphrasePair]:
    """Yield caption pairs from an MSCOCO captions JSON (``annotations`` list)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"MSCOCO file not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    by_image: dict = defaultdict(list)
    for ann in data["annotations"]:
        by_image[ann["image_id"]].append(ann["caption"])
    for image_id in by_image:
        captions = by_image[image_id]
        if len(captions) < 2:
            continue
        for a, b in pairing(captions):
            yield make_pair(a, b)


def load_aligned(source_path: str | Path, target_path: str | Path) -> Iterator[ParaphrasePair]:
    """Two aligned UTF-8 files, one sentence per line."""
    for p in (source_path, target_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"file not found: {p}")
    src = Path(source_path).read_text(encoding="utf-8").splitlines()
    tgt = Path(target_path).read_text(encoding="utf-8").splitlines()
    if len(src) != len(tgt):
        raise ValueError(f"{source_path} has {len(src)} lines but {target_path} has {len(tgt)}")
    for a, b in zip(src, tgt):
        if a.strip() and b.strip():
            yield make_pair(a, b)


def split_pairs(pairs: Sequence, valid_size: int = 3000, test_size: int = 3000, seed: int = 0):
    """Seeded random split into (train, valid, test) with index manifests.

    Small corpora fall back to a 90/5/5 split so that training data is never empty.
    """
    n = len(pairs)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    if valid_size + test_size >= n:
        valid_size = test_size = max(1, n // 20) if n >= 3 else 0
    valid_idx = sorted(order[:valid_size])
    test_idx = sorted(order[valid_size : valid_size + test_size])
    train_idx = sorted(order[valid_size + test_size :])
    manifest = {"train": train_idx, "valid": valid_idx, "test": test_idx}
    take = lambda idx: [pairs[i] for i in idx]  # noqa: E731
    return take(train_idx), take(valid_idx), take(test_idx), manifest


def save_split_manifest(manifest: dict, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    for name, idx in manifest.items():
        (out_dir / f"split_{name}.txt").write_text("".join(f"{i}\n" for i in idx))


@dataclass
class Batch:
    source_matrix: torch.Tensor  # [B, L_max]
    target_matrix: torch.Tensor  # [B, M_max]
    source_lengths: torch.Tensor
    target_lengths: torch.Tensor
    pad_mask: torch.Tensor  # True on PAD positions of target_matrix
    source_pad_mask: torch.Tensor
    raw_sources: list[str]

    def __len__(self) -> int:
        return self.source_matrix.size(0)

    @property
    def decoder_input(self) -> torch.Tensor:
        """BOS followed by the target shifted right."""
        bos = torch.full_like(self.target_matrix[:, :1], BOS)
        return torch.cat([bos, self.target_matrix[:, :-1]], dim=1)


def frame(ids: Sequence[int], max_len: int = MAX_TOKENS) -> list[int]:
    return list(ids[:max_len]) + [EOS]


def pad_sequences(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    out = torch.full((len(seqs), int(lengths.max())), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out, lengths


def collate(pairs: Sequence[ParaphrasePair], max_len: int = MAX_TOKENS) -> Batch:
    src, src_len = pad_sequences([frame(p.source_ids, max_len) for p in pairs])
    tgt, tgt_len = pad_sequences([frame(p.target_ids, max_len) for p in pairs])
    return Batch(
        source_matrix=src,
        target_matrix=tgt,
        source_lengths=src_len,
        target_lengths=tgt_len,
        pad_mask=tgt == PAD,
        source_pad_mask=src == PAD,
        raw_sources=[p.raw_source for p in pairs],
    )


def make_batches(
    pairs: Sequence[ParaphrasePair],
    vocab: Vocabulary | None = None,
    batch_size: int = 50,
    max_len: int = MAX_TOKENS,
    seed: int | None = None,
) -> Iterator[Batch]:
    """Frame, pad and batch pairs; ``seed`` shuffles the order, ``None`` keeps it.

    If ``vocab`` is given the raw text is (re-)encoded against it, otherwise the
    pairs' existing ids are used.
    """
    if vocab is not None:
        pairs = encode_pairs(pairs, vocab, max_len)
    order = list(range(len(pairs)))
    if seed is not None:
        random.Random(seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        yield collate([pairs[i] for i in order[start : start + batch_size]], max_len)
