"""Command-line entry points: train, generate, evaluate, ablate."""
from __future__ import annotations

import argparse
import datetime as dt
import glob
import json
import logging
import re
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .config import ALIASES, ConfigError, RunConfig, load_config

log = logging.getLogger("btmpg")


class CommandError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, command: str, argv: Sequence[str], config: RunConfig | None, started: str, **extra) -> Path:
    """Write this run's manifest without touching earlier ones."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    n = 1
    while path.exists():
        path = out_dir / f"manifest.{n}.json"
        n += 1
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config.to_dict() if config is not None else None,
        "started": started,
        "finished": _now(),
    }
    manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def add_config_flags(p: argparse.ArgumentParser) -> None:
    """One --flag per config key; unset flags stay out of the override dict."""
    inv = {v: k for k, v in ALIASES.items()}
    group = p.add_argument_group("config overrides")
    for f in fields(RunConfig):
        key = inv.get(f.name, f.name)
        flag = "--" + key.replace("_", "-")
        if flag in ("--seed", "--rounds"):
            continue
        kind = {"int": int, "float": float}.get(f.type, str)
        group.add_argument(flag, dest=f"cfg_{f.name}", type=kind, default=argparse.SUPPRESS, metavar=f.type.upper())
    p.add_argument("--data", dest="cfg_data_path", default=argparse.SUPPRESS, help="alias of --data-path")


def overrides_from(args: argparse.Namespace) -> dict:
    out = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "rounds", None) is not None:
        out["rounds"] = args.rounds
    return out


def resolve_config(args) -> RunConfig:
    try:
        return load_config(args.config, overrides_from(args))
    except ConfigError as exc:
        raise CommandError(str(exc), code=2) from None
    except FileNotFoundError as exc:
        raise CommandError(f"config file not found: {exc.filename}") from None


def load_pairs(config: RunConfig):
    from .corpus import load_aligned, load_mscoco, load_quora

    if not config.data_path:
        raise CommandError("no training data given (--data PATH)")
    try:
        if config.dataset == "quora":
            return list(load_quora(config.data_path))
        if config.dataset == "mscoco":
            return list(load_mscoco(config.data_path))
        if config.dataset == "text":
            if not config.data_target_path:
                raise CommandError("text mode needs --data-target-path")
            return list(load_aligned(config.data_path, config.data_target_path))
    except FileNotFoundError as exc:
        raise CommandError(str(exc)) from None
    raise CommandError(f"unknown dataset {config.dataset!r}", code=2)


def prepare_data(config: RunConfig, out_dir: Path):
    from .corpus import build_vocab, encode_pairs, save_split_manifest, split_pairs

    pairs = load_pairs(config)
    if not pairs:
        raise CommandError(f"no paraphrase pairs found in {config.data_path}")
    train, valid, test, manifest = split_pairs(pairs, config.valid_size, config.test_size, config.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_split_manifest(manifest, out_dir)
    vocab = build_vocab(train, config.vocab_size + 4)
    enc = lambda ps: encode_pairs(ps, vocab, config.max_len)  # noqa: E731
    return enc(train), enc(valid), enc(test), vocab


def cmd_train(args) -> int:
    from .trainer import run_training

    started = _now()
    config = resolve_config(args)
    out = Path(args.out)
    train, valid, test, vocab = prepare_data(config, out)
    log.info("train/valid/test = %d/%d/%d pairs, vocabulary %d", len(train), len(valid), len(test), len(vocab))
    paths = run_training(config, train, vocab, out, valid)
    write_manifest(
        out, "train", args.argv, config, started,
        seed=config.seed, inputs=[config.data_path] + ([config.data_target_path] if config.data_target_path else []),
        outputs=[str(p) for p in paths], vocab_hash=vocab.digest(),
    )
    return 0


def read_lines(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise CommandError(f"file not found: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def cmd_generate(args) -> int:
    from .corpus import Vocabulary
    from .inference import generate_corpus
    from .trainer import load_checkpoint

    started = _now()
    if args.rounds is not None and args.rounds < 1:
        raise CommandError("--rounds must be >= 1", code=2)
    sentences = read_lines(args.input)
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    try:
        para, _, config, vocab, meta = load_checkpoint(args.checkpoint, vocab)
    except (ValueError, FileNotFoundError) as exc:
        raise CommandError(str(exc)) from None
    rounds = args.rounds if args.rounds is not None else config.rounds
    seed = args.seed if args.seed is not None else config.seed
    try:
        outputs = generate_corpus(
            sentences, rounds, para, vocab, seed=seed, batch_size=args.batch_size,
            max_len=config.decode_max_len, sample=args.sample,
        )
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for r, lines in enumerate(outputs, 1):
        path = out / f"round_{r}.txt"
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        files.append(str(path))
    write_manifest(
        out, "generate", args.argv, config, started,
        seed=seed, R=rounds, checkpoint=meta["path"], checkpoint_hash=meta["checkpoint_hash"],
        vocab_hash=vocab.digest(), inputs=[str(args.input)], outputs=files,
    )
    return 0


def round_files(pattern: str) -> list[Path]:
    paths = [Path(p) for p in glob.glob(pattern)] if any(c in pattern for c in "*?[") else [Path(pattern)]

    def key(p: Path):
        m = re.search(r"(\d+)", p.stem)
        return (int(m.group(1)) if m else 0, p.name)

    return sorted(paths, key=key)


def cmd_evaluate(args) -> int:
    from .metrics import AlignmentError, MetricsReport, bleu4, canonical_json, p_bleu, self_bleu, self_ter, semantic_score_adapter
    from .plotting import plot_rounds

    started = _now()
    originals = read_lines(args.originals)
    files = round_files(args.hypotheses)
    if not files:
        raise CommandError(f"no hypothesis files match {args.hypotheses}")
    rounds = [read_lines(f) for f in files]
    references = read_lines(args.references) if args.references else None
    try:
        reports = []
        for i, hyps in enumerate(rounds):
            rep = MetricsReport(self_bleu=self_bleu(hyps, originals), self_ter=self_ter(hyps, originals))
            if references is not None:
                rep.bleu4 = bleu4(hyps, references)
            if i == 0:
                rep.semantic_score = semantic_score_adapter(hyps, originals, args.scores_file, args.scorer_cmd)
            reports.append(rep)
        result = reports[0].to_dict()
        if len(rounds) >= 2:
            result["p_bleu"] = p_bleu(rounds)
            result["rounds"] = [dict(r.to_dict(), round=i) for i, r in enumerate(reports, 1)]
    except AlignmentError as exc:
        raise CommandError(f"{exc} (first offending line {exc.line})") from None
    text = canonical_json(result)
    sys.stdout.write(text)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(text)
    outputs = [str(out / "metrics.json")]
    if len(rounds) >= 2:
        tsv = out / "metrics_by_round.tsv"
        cols = [k for k in ("bleu4", "self_bleu", "self_ter") if getattr(reports[0], k) is not None]
        lines = ["round\t" + "\t".join(cols)]
        lines += [f"{i}\t" + "\t".join(f"{getattr(r, c):.2f}" for c in cols) for i, r in enumerate(reports, 1)]
        tsv.write_text("\n".join(lines) + "\n")
        fig = plot_rounds({c: [getattr(r, c) for r in reports] for c in cols}, out / "metrics_by_round.png")
        outputs += [str(tsv), str(fig)]
    write_manifest(
        out, "evaluate", args.argv, None, started, seed=None,
        inputs=[str(args.originals)] + [str(f) for f in files] + ([str(args.references)] if args.references else []),
        outputs=outputs,
    )
    return 0


def parse_lambdas(text: str) -> list[float]:
    values = [float(v) for v in text.split(",") if v.strip()]
    unique = sorted(set(values))
    if len(unique) != len(values):
        log.warning("duplicate lambda values dropped: %s", text)
    return unique


def ablation_table(rows: Sequence[dict]) -> str:
    header = f"{'lambda':>8} {'p-BLEU':>8} {'self-BLEU R1':>13} {'self-BLEU Rk':>13}"
    lines = [header]
    for r in rows:
        sb = r["self_bleu"]
        lines.append(f"{r['lambda']:>8g} {r['p_bleu']:>8.2f} {sb[0]:>13.2f} {sb[-1]:>13.2f}")
    return "\n".join(lines) + "\n"


def is_non_decreasing(values: Sequence[float]) -> bool:
    return all(a <= b for a, b in zip(values, values[1:]))


def cmd_ablate(args) -> int:
    from .metrics import canonical_json, semantic_score_adapter
    from .plotting import plot_ablation
    from .trainer import ablate_lambda

    started = _now()
    config = resolve_config(args)
    lambdas = parse_lambdas(args.lambdas)
    out = Path(args.out)
    train, valid, _, vocab = prepare_data(config, out)
    if args.max_valid:
        valid = valid[: args.max_valid]
    scorer = None
    if args.scorer_cmd:
        scorer = lambda h, o: semantic_score_adapter(h, o, command=args.scorer_cmd)  # noqa: E731
    rows = ablate_lambda(config, lambdas, train, valid, vocab, out, rounds=config.rounds, scorer=scorer)
    result = {
        "rows": rows,
        "rounds": config.rounds,
        "p_bleu_non_decreasing": is_non_decreasing([r["p_bleu"] for r in rows]),
    }
    (out / "ablation.json").write_text(canonical_json(result))
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table)
    tsv = ["lambda\tp_bleu\t" + "\t".join(f"self_bleu_r{i}" for i in range(1, config.rounds + 1))]
    tsv += [f"{r['lambda']:g}\t{r['p_bleu']:.2f}\t" + "\t".join(f"{v:.2f}" for v in r["self_bleu"]) for r in rows]
    (out / "ablation.tsv").write_text("\n".join(tsv) + "\n")
    fig = plot_ablation(rows, out / "ablation.png")
    sys.stdout.write(table)
    sys.stdout.write(f"p-BLEU non-decreasing in lambda: {result['p_bleu_non_decreasing']}\n")
    write_manifest(
        out, "ablate", args.argv, config, started, seed=config.seed, lambdas=lambdas,
        inputs=[config.data_path], outputs=[str(out / n) for n in ("ablation.json", "ablation.txt", "ablation.tsv")] + [str(fig)],
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btmpg", description="Multi-round paraphrase generation guided by back-translation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, config=True):
        if config:
            p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train paraphraser and back-translator jointly")
    shared(p)
    p.add_argument("--rounds", type=int, default=None, help=argparse.SUPPRESS)
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="multi-round generation from a checkpoint")
    shared(p, config=False)
    p.add_argument("--checkpoint", required=True, help="run directory or .pt file")
    p.add_argument("--input", required=True, help="one sentence per line")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--vocab", help="vocabulary file (default: the run's vocab.txt)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--sample", action="store_true", help="sample tokens instead of greedy argmax")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU4, self-BLEU, self-TER, p-BLEU")
    shared(p, config=False)
    p.add_argument("--originals", required=True)
    p.add_argument("--hypotheses", required=True, help="file or glob such as 'out/round_*.txt'")
    p.add_argument("--references")
    p.add_argument("--scores-file", help="precomputed per-line semantic scores for the first hypothesis file")
    p.add_argument("--scorer-cmd", help="external scorer: called with <hyp file> <orig file>, prints one score per line")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train one model per lambda and compare p-BLEU")
    shared(p)
    p.add_argument("--lambdas", default="0,0.5,1,2,5")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--max-valid", type=int, default=0, help="score only the first N validation sentences")
    p.add_argument("--scorer-cmd")
    add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
