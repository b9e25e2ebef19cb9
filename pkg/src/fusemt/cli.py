"""Command-line pipeline: data synthesis, subword/vocab prep, two-stage
training, translation, and scoring.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure. Vocabularies and BPE merges learned during train-tm are written
as sidecar files next to the checkpoint (<ckpt>.src.vocab, .tgt.vocab,
.lm.vocab, .bpe) so translate can find them without extra flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from fusemt import checkpoint as ckpt_mod
from fusemt.bpe import BpeModel, learn_bpe
from fusemt.config import RunConfig, load_run_config
from fusemt.corpus import ParallelCorpus, load_parallel, load_sentences, save_sentences
from fusemt.decoding import shallow_decode, translate_corpus
from fusemt.errors import (ConfigError, DataError, NumericError, ShapeError,
                           VocabularyMismatchError)
from fusemt.evaluation import dump_attention, score_corpus
from fusemt.fusion import ShallowConfig
from fusemt.synth import generate_monolingual, generate_synthetic
from fusemt.training import format_log, train_lm, train_two_stage
from fusemt.vocab import Vocabulary, build_vocab

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _sidecar(ckpt_path, suffix: str) -> Path:
    return Path(str(ckpt_path) + suffix)


def _load_bpe(cfg: RunConfig) -> BpeModel | None:
    return BpeModel.load(cfg.path("bpe_merges")) if cfg.has("bpe_merges") else None


def _encode_corpus(corpus: ParallelCorpus, bpe: BpeModel) -> ParallelCorpus:
    pairs = [(tuple(bpe.encode(s)), tuple(bpe.encode(t))) for s, t in corpus]
    return ParallelCorpus(pairs=pairs, provenance=f"{corpus.provenance}+bpe")


def cmd_synth_data(args) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = args.pairs + args.dev + args.test
    full = generate_synthetic(args.seed, total, args.vocab_size)
    splits = {
        "train": full.pairs[: args.pairs],
        "dev": full.pairs[args.pairs: args.pairs + args.dev],
        "test": full.pairs[args.pairs + args.dev:],
    }
    for name, pairs in splits.items():
        part = ParallelCorpus(pairs=pairs,
                              provenance=f"synthetic seed={args.seed} split={name}")
        part.save(out / f"{name}.src", out / f"{name}.tgt")
        print(f"wrote {len(pairs)} pairs to {out / name}.src/.tgt")
    mono = generate_monolingual(args.seed, args.mono, args.vocab_size)
    save_sentences(mono, out / "mono.txt")
    print(f"wrote {len(mono)} sentences to {out / 'mono.txt'}")


def cmd_build_vocab(args) -> None:
    corpus = []
    for path in args.input:
        corpus.extend(load_sentences(path))
    vocab = build_vocab(corpus, args.max_size)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} entries to {args.out}")


def cmd_learn_bpe(args) -> None:
    corpus = []
    for path in args.input:
        corpus.extend(load_sentences(path))
    model = learn_bpe(corpus, args.ops)
    model.save(args.out)
    print(f"wrote {len(model.merges)} merges to {args.out}")


def cmd_train_lm(args) -> None:
    cfg = load_run_config(args.config)
    cfg.require_paths("mono")
    mono = load_sentences(cfg.path("mono"))
    bpe = _load_bpe(cfg)
    if bpe is not None:
        mono = [tuple(bpe.encode(s)) for s in mono]
    if cfg.has("lm_vocab"):
        vocab = Vocabulary.load(cfg.path("lm_vocab"))
    else:
        vocab = build_vocab(mono, cfg.train.vocab_size)
    encoded = [vocab.encode(s) for s in mono if len(s) <= cfg.train.max_tokens]
    dev = None
    if cfg.has("mono_dev"):
        dev_text = load_sentences(cfg.path("mono_dev"))
        if bpe is not None:
            dev_text = [tuple(bpe.encode(s)) for s in dev_text]
        dev = [vocab.encode(s) for s in dev_text]
    params, logs = train_lm(encoded, len(vocab), cfg.train, dev)
    ckpt_mod.save_lm(args.out, params, cfg.train)
    vocab.save(_sidecar(args.out, ".vocab"))
    log_path = args.log or _sidecar(args.out, ".log")
    Path(log_path).write_text(format_log(logs), encoding="utf-8")
    print(f"wrote language model to {args.out} "
          f"(final train loss {logs[-1].train_loss:.4f})")


def _shared_vocab_check(variant: str, parallel: ParallelCorpus, cfg: RunConfig,
                        lm_vocab: Vocabulary) -> None:
    """Simple fusion renormalizes the LM over the decoder's own
    vocabulary, so the two must be identical token-for-token."""
    if variant not in ("postnorm", "prenorm"):
        return
    kept = parallel.filtered(cfg.train.max_tokens)
    preview = build_vocab(kept.targets(), cfg.train.vocab_size)
    if preview.tokens != lm_vocab.tokens:
        raise VocabularyMismatchError(
            f"variant '{variant}' needs the language model and decoder to "
            f"share one vocabulary, but they differ "
            f"({len(lm_vocab)} LM vs {len(preview)} target entries); "
            f"use cold or dynamic fusion for mismatched vocabularies"
        )


def cmd_train_tm(args) -> None:
    cfg = load_run_config(args.config)
    cfg.require_paths("train_src", "train_tgt")
    parallel = load_parallel(cfg.path("train_src"), cfg.path("train_tgt"))
    dev = None
    if cfg.has("dev_src") or cfg.has("dev_tgt"):
        cfg.require_paths("dev_src", "dev_tgt")
        dev = load_parallel(cfg.path("dev_src"), cfg.path("dev_tgt"))
    bpe = _load_bpe(cfg)
    if bpe is not None:
        parallel = _encode_corpus(parallel, bpe)
        dev = _encode_corpus(dev, bpe) if dev is not None else None

    lm_params = lm_vocab = None
    if cfg.variant != "baseline":
        if not args.lm:
            raise ConfigError(
                f"variant '{cfg.variant}' needs a pretrained language model; "
                f"pass --lm <checkpoint> (train one with train-lm)"
            )
        if cfg.has("lm_vocab"):
            lm_vocab = Vocabulary.load(cfg.path("lm_vocab"))
        else:
            sidecar = _sidecar(args.lm, ".vocab")
            if not sidecar.is_file():
                raise ConfigError(
                    f"no lm_vocab configured and {sidecar} not found"
                )
            lm_vocab = Vocabulary.load(sidecar)
        lm_params = ckpt_mod.load_lm(args.lm, lm_vocab)
        _shared_vocab_check(cfg.variant, parallel, cfg, lm_vocab)
    elif args.lm:
        print("warning: baseline variant ignores the --lm checkpoint",
              file=sys.stderr)

    model = train_two_stage(parallel, None, cfg.variant, cfg.train, dev=dev,
                            lm_level=cfg.lm_level, lm_vocab=lm_vocab,
                            lm_params=lm_params)
    ckpt_mod.save_model(args.out, model)
    model.src_vocab.save(_sidecar(args.out, ".src.vocab"))
    model.tgt_vocab.save(_sidecar(args.out, ".tgt.vocab"))
    if model.lm_vocab is not None:
        model.lm_vocab.save(_sidecar(args.out, ".lm.vocab"))
    if bpe is not None:
        bpe.save(_sidecar(args.out, ".bpe"))
    log_path = args.log or _sidecar(args.out, ".log")
    Path(log_path).write_text(format_log(model.tm_logs), encoding="utf-8")
    print(f"wrote {model.variant} checkpoint to {args.out} "
          f"(final train loss {model.tm_logs[-1].train_loss:.4f})")


def _translate_vocab(cfg: RunConfig | None, key: str, ckpt_path,
                     suffix: str, required: bool) -> Vocabulary | None:
    if cfg is not None and cfg.has(key):
        return Vocabulary.load(cfg.path(key))
    sidecar = _sidecar(ckpt_path, suffix)
    if sidecar.is_file():
        return Vocabulary.load(sidecar)
    if required:
        raise ConfigError(f"cannot find vocabulary: set {key} in a config "
                          f"or keep {sidecar} next to the checkpoint")
    return None


def cmd_translate(args) -> None:
    if args.lam is not None and not args.shallow:
        raise ConfigError("--lambda is only meaningful with --shallow")
    cfg = load_run_config(args.config) if args.config else None
    src_vocab = _translate_vocab(cfg, "src_vocab", args.ckpt, ".src.vocab", True)
    tgt_vocab = _translate_vocab(cfg, "tgt_vocab", args.ckpt, ".tgt.vocab", True)
    lm_vocab = _translate_vocab(cfg, "lm_vocab", args.ckpt, ".lm.vocab", False)
    model = ckpt_mod.load_model(args.ckpt, src_vocab, tgt_vocab, lm_vocab)

    bpe = None
    if cfg is not None and cfg.has("bpe_merges"):
        bpe = BpeModel.load(cfg.path("bpe_merges"))
    elif _sidecar(args.ckpt, ".bpe").is_file():
        bpe = BpeModel.load(_sidecar(args.ckpt, ".bpe"))

    sources = load_sentences(args.input)
    encoded = [tuple(bpe.encode(s)) for s in sources] if bpe else sources

    shallow_lm = None
    if args.shallow:
        if model.variant != "baseline":
            raise ConfigError(
                f"--shallow rescoring applies to baseline checkpoints, "
                f"not {model.variant!r}"
            )
        lam = 0.2 if args.lam is None else args.lam
        shallow_vocab = _translate_vocab(cfg, "lm_vocab", args.shallow,
                                         ".vocab", True)
        if shallow_vocab.tokens != tgt_vocab.tokens:
            raise VocabularyMismatchError(
                "shallow fusion needs the language model to share the "
                "decoder vocabulary token-for-token"
            )
        shallow_lm = ckpt_mod.load_lm(args.shallow, shallow_vocab)
        shallow_cfg = ShallowConfig(lam=lam)

    outputs, dumps = [], []
    for sent in encoded:
        if not sent:
            outputs.append([])
            continue
        if shallow_lm is not None:
            ids = shallow_decode(model, shallow_lm, shallow_cfg, list(sent),
                                 beam=args.beam, max_len=args.max_len)
        else:
            ids = translate_corpus(model, [list(sent)], beam=args.beam,
                                   max_len=args.max_len)[0]
        if args.dump_attention:
            dumps.append(dump_attention(model, list(sent), target_ids=ids,
                                        max_len=args.max_len))
        tokens = model.tgt_vocab.decode(ids)
        outputs.append(bpe.decode(tokens) if bpe else tokens)

    save_sentences(outputs, args.output)
    if args.dump_attention:
        blocks = ["\n".join(lines) for lines in dumps]
        Path(args.dump_attention).write_text("\n\n".join(blocks) + "\n",
                                             encoding="utf-8")
    print(f"wrote {len(outputs)} hypotheses to {args.output}")


def cmd_score(args) -> None:
    hyps = load_sentences(args.hyp)
    refs = load_sentences(args.ref)
    rival = load_sentences(args.rival) if args.rival else None
    report = score_corpus(hyps, refs, rival=rival, n_samples=args.n_samples,
                          seed=args.seed)
    sys.stdout.write(report.render())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusemt",
        description="Desk-scale NMT laboratory with language-model fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic toy corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--dev", type=int, default=200)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--mono", type=int, default=5000)
    p.add_argument("--vocab-size", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("build-vocab", help="build a frequency vocabulary")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=10000)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("learn-bpe", help="learn byte-pair merges")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--ops", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_bpe)

    p = sub.add_parser("train-lm", help="stage 1: train the language model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("train-tm", help="stage 2: train translation + fusion")
    p.add_argument("--config", required=True)
    p.add_argument("--lm", help="pretrained language-model checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train_tm)

    p = sub.add_parser("translate", help="decode a source file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=60)
    p.add_argument("--config", help="optional config for vocab/bpe paths")
    p.add_argument("--shallow", help="language-model checkpoint for "
                                     "shallow-fusion rescoring")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="language-model weight (with --shallow)")
    p.add_argument("--dump-attention",
                   help="write per-token word-attention records here "
                        "(dynamic variant only; blank line between sentences)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="BLEU/RIBES report, optional bootstrap")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--rival", help="second hypothesis file to test against")
    p.add_argument("--n-samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, VocabularyMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
