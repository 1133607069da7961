"""Diversity and adequacy metrics: BLEU4, self-BLEU, TER/self-TER, p-BLEU and an external semantic scorer."""
from __future__ import annotations

import json
import math
import shlex
import subprocess
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import SPECIALS, tokenize

MAX_ORDER = 4
MAX_SHIFT_SIZE = 10


class AlignmentError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(message)
        self.line = line


def _tokens(s) -> list[str]:
    if isinstance(s, str):
        return tokenize(s)
    return [t for t in s if t != SPECIALS[0]]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyp: Sequence[str], ref: Sequence[str]) -> tuple[list[int], list[int]]:
    correct, total = [], []
    for n in range(1, MAX_ORDER + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        correct.append(sum(min(c, r[g]) for g, c in h.items()))
        total.append(max(len(hyp) - n + 1, 0))
    return correct, total


def _brevity(hyp_len: int, ref_len: int) -> float:
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len) if hyp_len > 0 else 0.0


def check_aligned(a: Sequence, b: Sequence, what: str = "inputs") -> None:
    if len(a) != len(b):
        raise AlignmentError(f"{what} are misaligned: {len(a)} vs {len(b)} lines", min(len(a), len(b)) + 1)


def bleu4(hypotheses: Sequence, references: Sequence) -> float:
    """Corpus BLEU (n <= 4, no smoothing) in [0, 100].

    Orders for which the hypotheses contain no n-grams at all are left out of
    the geometric mean.
    """
    check_aligned(hypotheses, references, "hypotheses and references")
    correct, total = [0] * MAX_ORDER, [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        h, r = _tokens(h), _tokens(r)
        c, t = bleu_stats(h, r)
        correct = [a + b for a, b in zip(correct, c)]
        total = [a + b for a, b in zip(total, t)]
        hyp_len += len(h)
        ref_len += len(r)
    if hyp_len == 0:
        return 100.0 if ref_len == 0 else 0.0
    log_sum, orders = 0.0, 0
    for c, t in zip(correct, total):
        if t == 0:
            continue
        if c == 0:
            return 0.0
        log_sum += math.log(c / t)
        orders += 1
    return 100.0 * _brevity(hyp_len, ref_len) * math.exp(log_sum / orders)


def sentence_bleu(hypothesis, reference) -> float:
    """Sentence BLEU with add-one smoothing on orders 2-4."""
    h, r = _tokens(hypothesis), _tokens(reference)
    if not h:
        return 100.0 if not r else 0.0
    correct, total = bleu_stats(h, r)
    if correct[0] == 0:
        return 0.0
    log_sum = math.log(correct[0] / total[0])
    for c, t in zip(correct[1:], total[1:]):
        log_sum += math.log((c + 1) / (t + 1))
    return 100.0 * _brevity(len(h), len(r)) * math.exp(log_sum / MAX_ORDER)


def self_bleu(hypotheses: Sequence, originals: Sequence) -> float:
    return bleu4(hypotheses, originals)


def edit_distance(hyp: Sequence[str], ref: Sequence[str]) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def _best_shift(hyp: list[str], ref: list[str], current: int):
    """Greedy step: the phrase move that lowers the edit distance the most.

    Only phrases that also occur in the reference are candidates, as in tercom.
    """
    ref_phrases = {tuple(ref[i : i + k]) for k in range(1, MAX_SHIFT_SIZE + 1) for i in range(len(ref) - k + 1)}
    best, best_cost = None, current
    n = len(hyp)
    for size in range(1, min(MAX_SHIFT_SIZE, n) + 1):
        for start in range(n - size + 1):
            phrase = hyp[start : start + size]
            if tuple(phrase) not in ref_phrases:
                continue
            rest = hyp[:start] + hyp[start + size :]
            for dest in range(len(rest) + 1):
                if dest == start:
                    continue
                cand = rest[:dest] + phrase + rest[dest:]
                cost = edit_distance(cand, ref)
                if cost < best_cost:
                    best, best_cost = cand, cost
    return best, best_cost


def ter_edits(hypothesis, reference, shifts: bool = True) -> int:
    hyp, ref = _tokens(hypothesis), _tokens(reference)
    cost = edit_distance(hyp, ref)
    n_shifts = 0
    while shifts and cost > 0:
        cand, new_cost = _best_shift(hyp, ref, cost)
        if cand is None:
            break
        hyp, cost = cand, new_cost
        n_shifts += 1
    return n_shifts + cost


def ter(hypothesis, reference, shifts: bool = True) -> float:
    """Edits (with greedy block shifts unless ``shifts`` is False) per reference token, in percent.

    An empty reference counts as length 1.
    """
    ref_len = len(_tokens(reference))
    return 100.0 * ter_edits(hypothesis, reference, shifts) / max(ref_len, 1)


def self_ter(hypotheses: Sequence, originals: Sequence, shifts: bool = True) -> float:
    check_aligned(hypotheses, originals, "hypotheses and originals")
    if not hypotheses:
        return 0.0
    return sum(ter(h, o, shifts) for h, o in zip(hypotheses, originals)) / len(hypotheses)


def p_bleu_line(outputs: Sequence) -> float:
    k = len(outputs)
    if k < 2:
        raise ValueError("p-BLEU needs at least two outputs")
    total = sum(sentence_bleu(outputs[i], outputs[j]) for i in range(k) for j in range(k) if i != j)
    return total / (k * (k - 1))


def p_bleu(round_outputs: Sequence[Sequence]) -> float:
    """Mean pairwise BLEU across k rounds, per input line, averaged over lines."""
    if len(round_outputs) < 2:
        raise ValueError("p-BLEU needs at least two rounds")
    n = len(round_outputs[0])
    for r, corpus in enumerate(round_outputs[1:], 2):
        check_aligned(round_outputs[0], corpus, f"round 1 and round {r}")
    if n == 0:
        return 0.0
    return sum(p_bleu_line([c[i] for c in round_outputs]) for i in range(n)) / n


def read_scores(path: str | Path, expected: int) -> list[float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    scores = []
    for i, line in enumerate(lines, 1):
        try:
            scores.append(float(line.strip()))
        except ValueError:
            raise AlignmentError(f"{path}: line {i}: not a number: {line!r}", i) from None
    if len(scores) != expected:
        line = min(len(scores), expected) + 1
        raise AlignmentError(f"{path}: {len(scores)} scores for {expected} hypotheses (line {line})", line)
    return scores


def semantic_score_adapter(
    hypotheses: Sequence[str],
    originals: Sequence[str],
    scores_file: Optional[str | Path] = None,
    command: Optional[str] = None,
) -> Optional[float]:
    """Mean of externally computed per-line scores, or None when nothing is configured.

    ``command`` is run with two extra arguments (hypothesis file, original file)
    and must print one score per line.
    """
    check_aligned(hypotheses, originals, "hypotheses and originals")
    if scores_file is not None:
        scores = read_scores(scores_file, len(hypotheses))
    elif command:
        with tempfile.TemporaryDirectory() as tmp:
            hyp_path, orig_path, out_path = Path(tmp, "hyp.txt"), Path(tmp, "orig.txt"), Path(tmp, "scores.txt")
            hyp_path.write_text("".join(h + "\n" for h in hypotheses), encoding="utf-8")
            orig_path.write_text("".join(o + "\n" for o in originals), encoding="utf-8")
            res = subprocess.run(shlex.split(command) + [str(hyp_path), str(orig_path)], capture_output=True, text=True, check=True)
            out_path.write_text(res.stdout, encoding="utf-8")
            scores = read_scores(out_path, len(hypotheses))
    else:
        return None
    return sum(scores) / len(scores) if scores else 0.0


@dataclass
class MetricsReport:
    self_bleu: float
    self_ter: float
    bleu4: Optional[float] = None
    p_bleu: Optional[float] = None
    semantic_score: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: round(v, 2) for k, v in asdict(self).items() if v is not None}


def canonical_json(obj, indent: int = 0) -> str:
    """Sorted keys, two-space indent, every float written with exactly two decimals."""
    pad = "  " * (indent + 1)
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        text = json.dumps(obj)
    elif isinstance(obj, float):
        text = f"{obj:.2f}" if math.isfinite(obj) else "null"
    elif isinstance(obj, dict):
        if not obj:
            text = "{}"
        else:
            items = [f"{pad}{json.dumps(str(k))}: {canonical_json(obj[k], indent + 1)}" for k in sorted(obj)]
            text = "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    elif isinstance(obj, (list, tuple)):
        if not obj:
            text = "[]"
        else:
            text = "[\n" + ",\n".join(pad + canonical_json(v, indent + 1) for v in obj) + "\n" + "  " * indent + "]"
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    return text if indent else text + "\n"


def evaluate(
    hypotheses: Sequence[str],
    originals: Sequence[str],
    references: Optional[Sequence[str]] = None,
    rounds: Optional[Sequence[Sequence[str]]] = None,
    scores_file=None,
    scorer_command=None,
) -> MetricsReport:
    report = MetricsReport(
        self_bleu=self_bleu(hypotheses, originals),
        self_ter=self_ter(hypotheses, originals),
    )
    if references is not None:
        report.bleu4 = bleu4(hypotheses, references)
    if rounds is not None and len(rounds) >= 2:
        report.p_bleu = p_bleu(rounds)
    report.semantic_score = semantic_score_adapter(hypotheses, originals, scores_file, scorer_command)
    return report
