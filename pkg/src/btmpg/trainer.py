"""Joint two-round training of the paraphraser and the back-translator."""
from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from .backtranslator import BackTranslator, bt_cross_entropy
from .bridge import TemperatureSchedule, autoregressive_soft_decode
from .config import RunConfig
from .corpus import Batch, ParaphrasePair, Vocabulary, make_batches
from .paraphraser import Paraphraser, paraphrase_loss, prior_sample, sample_latent

logger = logging.getLogger(__name__)

LOSS_KEYS = ("total", "L_para", "CE", "KL", "L_p", "L_s1", "L_s2")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, parts: dict):
        super().__init__(f"non-finite loss: {parts}")
        self.parts = parts


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    skipped: int = 0
    running: dict = field(default_factory=dict)

    def record(self, parts: dict) -> None:
        for k, v in parts.items():
            total, n = self.running.get(k, (0.0, 0))
            self.running[k] = (total + v, n + 1)

    def means(self) -> dict:
        return {k: total / n for k, (total, n) in self.running.items() if n}


def build_models(config: RunConfig, vocab_size: int, dtype=torch.float32):
    torch.manual_seed(config.seed)
    para = Paraphraser(config.paraphraser_config(vocab_size)).to(dtype)
    bt = BackTranslator(config.bt_config(vocab_size)).to(dtype)
    return para, bt


def build_optimizer(config: RunConfig, params):
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.lr)
    if config.optimizer == "sgd":
        return torch.optim.SGD(params, lr=config.lr)
    raise ValueError(f"unknown optimizer {config.optimizer!r}")


class Trainer:
    def __init__(self, config: RunConfig, para: Paraphraser, bt: BackTranslator, generator: Optional[torch.Generator] = None):
        self.config = config
        self.para = para
        self.bt = bt
        self.params = list(para.parameters()) + list(bt.parameters())
        self.optimizer = build_optimizer(config, self.params)
        if generator is None:
            generator = torch.Generator()
            generator.manual_seed(config.seed)
        self.generator = generator
        self.state = TrainState()
        self.schedule = TemperatureSchedule(config.tau_max, config.epochs, config.tau_direction)

    @property
    def dtype(self):
        return next(self.para.parameters()).dtype

    def kl_weight(self) -> float:
        c = self.config
        if c.kl_anneal_steps > 0:
            return c.kl_weight * min(1.0, self.state.step / c.kl_anneal_steps)
        return c.kl_weight

    def compute_losses(self, batch: Batch, tau: float) -> dict:
        """Forward pass for both trained rounds; returns tensors keyed like LOSS_KEYS."""
        c, para, bt = self.config, self.para, self.bt
        src, tgt = batch.source_matrix, batch.target_matrix
        enc0 = para.encode_source(src, batch.source_lengths)
        post = para.encode_posterior(tgt, enc0, batch.target_lengths)
        eps = torch.randn(post.mu.shape, generator=self.generator, dtype=self.dtype)
        z1 = sample_latent(post, eps)

        tf = para.decode_teacher_forced(batch.decoder_input, z1, enc0)
        l_para, ce, kl = paraphrase_loss(
            tf.p, tgt, post, kl_weight=self.kl_weight(), first_word_mode=c.first_word_mode, return_parts=True
        )

        # with lambda = 0 the chained rounds carry no gradient; evaluate them for the log only
        grad_ctx = contextlib.nullcontext() if c.lam > 0 else torch.no_grad()
        with grad_ctx:
            rounds = [autoregressive_soft_decode(para, z1, enc0, c.decode_max_len, tau, self.generator)]
            for _ in range(1, c.rounds_trained):
                prev = rounds[-1]
                enc = para.encode_source(prev.rows, prev.lengths)
                z = prior_sample(len(batch), para.config.d_z, self.generator, self.dtype)
                rounds.append(autoregressive_soft_decode(para, z, enc, c.decode_max_len, tau, self.generator))
            used = rounds[:1] if c.bt_rounds == "first" else rounds
            l_s = [bt_cross_entropy(bt, s, src) for s in used]

        l_p = bt_cross_entropy(bt, tgt, src, batch.target_lengths)
        total = l_para + l_p
        for term in l_s:
            total = total + c.lam * term
        out = {"total": total, "L_para": l_para, "CE": ce, "KL": kl, "L_p": l_p}
        for i, term in enumerate(l_s, 1):
            out[f"L_s{i}"] = term
        return out

    def training_step(self, batch: Batch, tau: float) -> dict:
        """One joint update; raises NonFiniteLoss (without updating) on a bad loss."""
        self.para.train()
        self.bt.train()
        losses = self.compute_losses(batch, tau)
        parts = {k: float(v.detach()) for k, v in losses.items()}
        if not all(math.isfinite(v) for v in parts.values()):
            raise NonFiniteLoss(parts)
        self.optimizer.zero_grad()
        losses["total"].backward()
        if self.config.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(self.params, self.config.clip_norm)
        self.optimizer.step()
        self.state.step += 1
        self.state.record(parts)
        return parts

    @torch.no_grad()
    def evaluate_ce(self, pairs: Sequence[ParaphrasePair], max_batches: int = 20) -> float:
        """Round-1 teacher-forced cross-entropy per token, posterior mean as latent."""
        self.para.eval()
        total, count = 0.0, 0
        for i, batch in enumerate(make_batches(pairs, batch_size=self.config.batch_size, max_len=self.config.max_len)):
            if i >= max_batches:
                break
            enc = self.para.encode_source(batch.source_matrix, batch.source_lengths)
            post = self.para.encode_posterior(batch.target_matrix, enc, batch.target_lengths)
            out = self.para.decode_teacher_forced(batch.decoder_input, post.mu, enc)
            _, ce, _ = paraphrase_loss(out.p, batch.target_matrix, first_word_mode="off", return_parts=True)
            total += float(ce) * len(batch)
            count += len(batch)
        return total / max(count, 1)

    def state_dict(self) -> dict:
        return {
            "paraphraser": self.para.state_dict(),
            "bt": self.bt.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "generator": self.generator.get_state(),
            "epoch": self.state.epoch,
            "step": self.state.step,
        }

    def load_state_dict(self, sd: dict) -> None:
        self.para.load_state_dict(sd["paraphraser"])
        self.bt.load_state_dict(sd["bt"])
        self.optimizer.load_state_dict(sd["optimizer"])
        self.generator.set_state(sd["generator"])
        self.state.epoch = sd["epoch"]
        self.state.step = sd["step"]


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def checkpoint_paths(out_dir: str | Path) -> list[Path]:
    return sorted((Path(out_dir) / "checkpoints").glob("epoch_*.pt"))


def save_checkpoint(trainer: Trainer, vocab: Vocabulary, out_dir: Path, epoch: int, release: bool) -> Path:
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    path = ckpt_dir / f"epoch_{epoch:03d}.pt"
    sd = trainer.state_dict()
    sd["config"] = trainer.config.to_dict()
    torch.save(sd, path)
    meta = {
        "config": trainer.config.to_dict(),
        "vocab_hash": vocab.digest(),
        "epoch": epoch,
        "seed": trainer.config.seed,
        "release": release,
        "dtype": str(trainer.dtype).replace("torch.", ""),
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if release:
        (out_dir / "release.txt").write_text(path.name + "\n")
    return path


def resolve_checkpoint(path: str | Path) -> Path:
    """Accept a .pt file or a run directory (its release checkpoint, else the latest)."""
    path = Path(path)
    if path.is_file():
        return path
    if (path / "release.txt").exists():
        return path / "checkpoints" / (path / "release.txt").read_text().strip()
    found = checkpoint_paths(path)
    if not found:
        raise FileNotFoundError(f"no checkpoint under {path}")
    return found[-1]


def load_checkpoint(path: str | Path, vocab: Optional[Vocabulary] = None):
    """Return (paraphraser, back-translator, config, vocab, meta) in eval mode.

    Without an explicit vocabulary, ``vocab.txt`` next to the checkpoints is used.
    Raises ValueError when the vocabulary hash disagrees with the sidecar.
    """
    path = resolve_checkpoint(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if vocab is None:
        vocab = Vocabulary.load(path.parent.parent / "vocab.txt")
    if vocab.digest() != meta["vocab_hash"]:
        raise ValueError(f"vocabulary hash mismatch for checkpoint {path}")
    config = RunConfig.from_dict(meta["config"])
    sd = torch.load(path, map_location="cpu", weights_only=False)
    dtype = getattr(torch, meta.get("dtype", "float32"))
    para, bt = build_models(config, len(vocab), dtype)
    para.load_state_dict(sd["paraphraser"])
    bt.load_state_dict(sd["bt"])
    para.eval()
    bt.eval()
    meta["checkpoint_hash"] = file_digest(path)
    meta["path"] = str(path)
    return para, bt, config, vocab, meta


def run_training(
    config: RunConfig,
    train_pairs: Sequence[ParaphrasePair],
    vocab: Vocabulary,
    out_dir: str | Path,
    valid_pairs: Sequence[ParaphrasePair] = (),
    dtype=torch.float32,
) -> list[Path]:
    """Train for ``config.epochs`` epochs, checkpointing and logging every epoch.

    Resumes after the latest checkpoint already present in ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")
    para, bt = build_models(config, len(vocab), dtype)
    trainer = Trainer(config, para, bt)
    start = 0
    existing = checkpoint_paths(out_dir)
    if existing:
        trainer.load_state_dict(torch.load(existing[-1], map_location="cpu", weights_only=False))
        start = trainer.state.epoch + 1
        logger.info("resuming from %s", existing[-1])
    log_path = out_dir / "metrics.jsonl"
    paths = list(existing)
    for epoch in range(start, config.epochs):
        tau = trainer.schedule(epoch)
        trainer.state.epoch = epoch
        trainer.state.running = {}
        # per-epoch shuffle seed so a resumed run sees the same order
        batches = make_batches(train_pairs, batch_size=config.batch_size, max_len=config.max_len, seed=config.seed * 1000 + epoch)
        for i, batch in enumerate(batches):
            if config.steps_per_epoch and i >= config.steps_per_epoch:
                break
            try:
                trainer.training_step(batch, tau)
            except NonFiniteLoss as exc:
                trainer.state.skipped += 1
                logger.warning("epoch %d batch %d skipped: %s", epoch, i, exc.parts)
        record = {"epoch": epoch, "tau": tau, "steps": trainer.state.step, "skipped": trainer.state.skipped}
        record.update(trainer.state.means())
        if valid_pairs:
            record["valid_ce"] = trainer.evaluate_ce(valid_pairs)
        with log_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        logger.info("epoch %d: %s", epoch, record)
        paths.append(save_checkpoint(trainer, vocab, out_dir, epoch, release=epoch == config.epochs - 1))
    return paths


def ablate_lambda(
    config: RunConfig,
    lambdas: Sequence[float],
    train_pairs: Sequence[ParaphrasePair],
    valid_pairs: Sequence[ParaphrasePair],
    vocab: Vocabulary,
    out_dir: str | Path,
    rounds: int = 10,
    scorer=None,
) -> list[dict]:
    """Train one model per lambda under a shared seed and budget, then score its rounds.

    ``scorer`` optionally maps (hypotheses, originals) to a semantic score.
    """
    from .inference import generate_corpus
    from .metrics import p_bleu, self_bleu

    out_dir = Path(out_dir)
    originals = [p.raw_source for p in valid_pairs]
    rows = []
    for lam in sorted(set(lambdas)):
        run_dir = out_dir / f"lambda_{lam:g}"
        run_training(config.replace(lam=lam), train_pairs, vocab, run_dir)
        para, _, _, _, meta = load_checkpoint(run_dir, vocab)
        outputs = generate_corpus(originals, rounds, para, vocab, seed=config.seed, max_len=config.decode_max_len)
        row = {
            "lambda": lam,
            "p_bleu": p_bleu(outputs),
            "self_bleu": [self_bleu(o, originals) for o in outputs],
            "checkpoint_hash": meta["checkpoint_hash"],
        }
        if scorer is not None:
            row["semantic_score"] = [scorer(o, originals) for o in outputs]
        rows.append(row)
    return rows


def seed_everything(seed: int) -> None:
    random.seed(seed)
    torch.manual_seed(seed)
