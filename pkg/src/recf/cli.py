"""``recf`` command line: embed, train, predict, evaluate, sweep, synth."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import io
from .data import DataError, SparseRatings
from .datasets import make_planted
from .embeddings import (DescriptionMatrix, build_description_matrix, load_embeddings, save_embeddings,
                         train_skipgram)
from .evaluation import evaluate, run_sweep
from .factor_model import fit, predict_pairs
from .text_corpus import build_huffman, build_vocab, write_vocab
from .utils import atomic_write

logger = logging.getLogger("recf")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key = value run configuration")
    p.add_argument("--seed", type=int, help="overrides RECF_SEED and the config seed")
    p.add_argument("--format", dest="ratings_format", choices=sorted(io.FORMATS), help="ratings file layout")
    p.add_argument("--quiet", action="store_true", help="no progress lines on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="recf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", parents=[common], help="train word vectors")
    p.add_argument("--corpus", help="one sentence per line")
    p.add_argument("--descriptions", help="item description file used as the corpus")
    p.add_argument("--out", required=True, help="embedding file; inner-node vectors go to <out>.nodes")
    p.add_argument("--vocab", help="also write the vocabulary with counts")

    p = sub.add_parser("train", parents=[common], help="fit a model")
    p.add_argument("--ratings")
    p.add_argument("--labels")
    p.add_argument("--descriptions")
    p.add_argument("--embeddings", help="pre-trained embedding file; trained from the descriptions if absent")
    p.add_argument("--corpus", help="corpus for training embeddings instead of the descriptions")
    p.add_argument("--model", required=True, help="output model file")

    p = sub.add_parser("predict", parents=[common], help="score user/item pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--user")
    p.add_argument("--item")
    p.add_argument("--queries", help="file of user<sep>item lines")
    p.add_argument("--raw", action="store_true", help="do not clip scores to the rating scale")

    p = sub.add_parser("evaluate", parents=[common], help="MAE / RMSE on a test file")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("sweep", parents=[common], help="run the sparsity sweep")
    p.add_argument("--ratings")
    p.add_argument("--descriptions")
    p.add_argument("--output-dir", dest="output_dir")

    p = sub.add_parser("synth", parents=[common], help="write a planted synthetic dataset")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=150)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--item-skew", dest="item_skew", type=float, default=2.0)
    return parser


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RECF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"RECF_SEED must be an integer, got {env!r}") from None
    return None


def _run_config(args) -> io.RunConfig:
    overrides = {"seed": _seed(args), "ratings_format": args.ratings_format}
    for key in ("ratings", "labels", "descriptions", "corpus", "embeddings", "output_dir"):
        overrides[key] = getattr(args, key, None)
    return io.load_config(args.config, overrides)


def _train_embeddings(cfg: io.RunConfig, corpus):
    vocab = build_vocab(corpus, cfg.min_count)
    logger.info("training %d-dim vectors for %d words", cfg.embed_dim, len(vocab))
    return vocab, train_skipgram(corpus, vocab, build_huffman(vocab), cfg.skipgram)


def _corpus(cfg: io.RunConfig, Q):
    return io.read_corpus(cfg.corpus) if cfg.corpus else [q for q in Q if q]


def cmd_embed(args, cfg: io.RunConfig) -> int:
    if cfg.corpus:
        corpus = io.read_corpus(cfg.corpus)
    elif cfg.descriptions:
        corpus = [q for q in io.parse_descriptions(cfg.descriptions)[0] if q]
    else:
        raise UsageError("embed needs --corpus or --descriptions")
    vocab, table = _train_embeddings(cfg, corpus)
    save_embeddings(table, args.out)
    if args.vocab:
        write_vocab(vocab, args.vocab)
    logger.info("wrote %s", args.out)
    return EXIT_OK


def _load_training_data(cfg: io.RunConfig):
    if not cfg.ratings:
        raise UsageError("no ratings file given (--ratings or config key 'ratings')")
    ratings = io.parse_ratings(cfg.ratings, cfg.ratings_format, cfg.scale)
    labels = None
    if cfg.labels:
        labels = io.parse_labels(cfg.labels, cfg.ratings_format, ratings.user_ids, ratings.item_ids)
        if labels.shape != ratings.shape:
            logger.info("labels mention %d new users and %d new items", labels.n_users - ratings.n_users,
                        labels.n_items - ratings.n_items)
            ratings = SparseRatings(labels.n_users, labels.n_items, ratings.users, ratings.items, ratings.values,
                                    user_ids=labels.user_ids, item_ids=labels.item_ids, scale=ratings.scale)
    return ratings, labels


def _description_matrix(cfg: io.RunConfig, item_ids) -> DescriptionMatrix | None:
    if not cfg.descriptions:
        return None
    if not os.path.exists(cfg.descriptions):
        logger.warning("description file %s not found; fitting without descriptions", cfg.descriptions)
        return None
    Q, _ = io.parse_descriptions(cfg.descriptions, item_ids)
    if cfg.embeddings:
        table = load_embeddings(cfg.embeddings)
    else:
        table = _train_embeddings(cfg, _corpus(cfg, Q))[1]
    C = build_description_matrix(Q, table)
    logger.info("%d of %d items have a usable description", int(C.present.sum()), C.n_items)
    return C


def cmd_train(args, cfg: io.RunConfig) -> int:
    ratings, labels = _load_training_data(cfg)
    C = _description_matrix(cfg, ratings.item_ids)
    logger.info("fitting %dx%d ratings (%d observed), d=%d", *ratings.shape, len(ratings), cfg.fit.d)
    model, trace = fit(ratings, labels, C, cfg.fit)
    logger.info("%s after %d iterations, objective %.6g", "converged" if trace.converged else "stopped",
                trace.n_iter, trace.records[-1].objective if trace.records else trace.initial_objective)
    io.save_model(model, args.model)
    logger.info("wrote %s", args.model)
    return EXIT_OK


def _lookup(ids, raw: str, kind: str, n: int) -> int:
    if ids is not None:
        index = {x: i for i, x in enumerate(ids)}
        if raw not in index:
            raise DataError(f"unknown {kind} {raw!r}")
        return index[raw]
    try:
        i = int(raw)
    except ValueError:
        raise DataError(f"{kind} must be an index for a model without ids, got {raw!r}") from None
    if not 0 <= i < n:
        raise DataError(f"{kind} index {i} out of range [0, {n})")
    return i


def cmd_predict(args, cfg: io.RunConfig) -> int:
    model = io.load_model(args.model)
    clamp = None if args.raw else model.scale
    if args.queries:
        sep = io.FORMATS[cfg.ratings_format]
        with open(args.queries, encoding="utf-8") as fh:
            queries = [tuple(p.strip() for p in line.split(sep)[:2]) for line in fh if line.strip()]
        if any(len(q) != 2 for q in queries):
            raise DataError(f"{args.queries}: expected user{sep}item lines")
    elif args.user is not None and args.item is not None:
        queries, sep = [(args.user, args.item)], None
    else:
        raise UsageError("predict needs --user and --item, or --queries")
    users = np.array([_lookup(model.user_ids, u, "user", model.shape[0]) for u, _ in queries], dtype=np.intp)
    items = np.array([_lookup(model.item_ids, v, "item", model.shape[1]) for _, v in queries], dtype=np.intp)
    scores = predict_pairs(model, users, items, clamp)
    for (u, v), s in zip(queries, scores):
        print(f"{s:.4f}" if sep is None else f"{u}{sep}{v}{sep}{s:.4f}")
    return EXIT_OK


def cmd_evaluate(args, cfg: io.RunConfig) -> int:
    model = io.load_model(args.model)
    N, M = model.shape
    scale = model.scale or cfg.scale
    # a model without id maps is addressed by dense index
    users = model.user_ids or tuple(str(i) for i in range(N))
    items = model.item_ids or tuple(str(i) for i in range(M))
    test = io.parse_ratings(args.test, cfg.ratings_format, scale, users, items)
    known = np.flatnonzero((test.users < N) & (test.items < M))
    if known.size < len(test):
        logger.warning("skipping %d test ratings of users or items the model has never seen", len(test) - known.size)
    test = test.subset(known)
    test = SparseRatings(N, M, test.users, test.items, test.values, scale=scale)
    for key, value in evaluate(model, test).items():
        print(f"{key}\t{value:.6f}")
    return EXIT_OK


def cmd_sweep(args, cfg: io.RunConfig) -> int:
    if not cfg.ratings:
        raise UsageError("no ratings file given (--ratings or config key 'ratings')")
    ratings = io.parse_ratings(cfg.ratings, cfg.ratings_format, cfg.scale)
    Q = None
    if cfg.descriptions:
        Q, _ = io.parse_descriptions(cfg.descriptions, ratings.item_ids)
    C = None
    if cfg.embeddings and Q is not None:
        C = build_description_matrix(Q, load_embeddings(cfg.embeddings))
    elif cfg.corpus and Q is not None:
        C = build_description_matrix(Q, _train_embeddings(cfg, _corpus(cfg, Q))[1])
    report = run_sweep(ratings, Q, cfg.fit, cfg.n_values, cfg.seeds, cfg.variants, cfg.skipgram,
                       cfg.min_count, C=C, timing=cfg.timing)
    os.makedirs(cfg.output_dir, exist_ok=True)
    atomic_write(os.path.join(cfg.output_dir, "report.csv"), report.to_csv())
    atomic_write(os.path.join(cfg.output_dir, "aggregate.csv"), report.aggregate_csv())
    failed = sum(not r.ok for r in report.records)
    if failed:
        logger.warning("%d of %d cells failed", failed, len(report.records))
    logger.info("wrote report.csv and aggregate.csv to %s", cfg.output_dir)
    return EXIT_OK


def cmd_synth(args, cfg: io.RunConfig) -> int:
    data = make_planted(args.users, args.items, args.density, item_skew=args.item_skew, seed=cfg.fit.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    r = data.ratings
    ratings = SparseRatings(r.n_users, r.n_items, r.users, r.items, r.values,
                            user_ids=tuple(str(i + 1) for i in range(r.n_users)),
                            item_ids=tuple(str(i + 1) for i in range(r.n_items)), scale=r.scale)
    io.write_ratings(ratings, os.path.join(args.out_dir, "ratings.dat"), cfg.ratings_format)
    lines = [f"{v + 1}::{'|'.join(q)}\n" for v, q in enumerate(data.descriptions)]
    atomic_write(os.path.join(args.out_dir, "descriptions.dat"), "".join(lines))
    logger.info("wrote %d ratings and %d descriptions to %s", len(ratings), len(lines), args.out_dir)
    return EXIT_OK


COMMANDS = {
    "embed": cmd_embed,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _run_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, io.ConfigError) as exc:
        print(f"recf {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"recf {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
