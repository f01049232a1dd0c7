"""File formats: ratings, labels, descriptions, corpora, models and run configs."""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DataError, DuplicateEntryError, MalformedLineError, OutOfScaleError, SparseLabels, SparseRatings
from .embeddings import SkipgramConfig
from .evaluation import VARIANTS
from .factor_model import FitConfig, HybridModel
from .text_corpus import tokenize
from .utils import atomic_write

__all__ = [
    "FORMATS",
    "ConfigError",
    "RunConfig",
    "parse_ratings",
    "parse_labels",
    "write_ratings",
    "parse_descriptions",
    "read_corpus",
    "save_model",
    "load_model",
    "load_config",
]

logger = logging.getLogger(__name__)

FORMATS = {"double-colon": "::", "tab": "\t", "comma": ","}
MODEL_MAGIC = "recf-model"
MODEL_VERSION = "v1"


class ConfigError(ValueError):
    """Invalid run configuration."""


def _separator(fmt: str) -> str:
    try:
        return FORMATS[fmt]
    except KeyError:
        raise ValueError(f"unknown format {fmt!r}; choose from {list(FORMATS)}") from None


def _read_triplets(path, fmt, users, items):
    sep = _separator(fmt)
    user_index = {u: i for i, u in enumerate(users or ())}
    item_index = {v: i for i, v in enumerate(items or ())}
    rows, cols, vals, linenos = [], [], [], []
    seen = set()
    first = True
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = [p.strip() for p in line.split(sep)]
            if len(parts) not in (3, 4) or not parts[0] or not parts[1]:
                raise MalformedLineError(path, lineno, f"expected user{sep}item{sep}value[{sep}timestamp]")
            try:
                value = float(parts[2])
            except ValueError:
                if first:  # header row such as "userId,movieId,rating,timestamp"
                    first = False
                    continue
                raise MalformedLineError(path, lineno, f"value {parts[2]!r} is not a number") from None
            first = False
            u = user_index.setdefault(parts[0], len(user_index))
            v = item_index.setdefault(parts[1], len(item_index))
            if (u, v) in seen:
                raise DuplicateEntryError(f"{path}:{lineno}: duplicate entry for user {parts[0]}, item {parts[1]}")
            seen.add((u, v))
            rows.append(u)
            cols.append(v)
            vals.append(value)
            linenos.append(lineno)
    return rows, cols, np.asarray(vals, dtype=float), linenos, tuple(user_index), tuple(item_index)


def parse_ratings(path, fmt: str = "double-colon", scale=(1.0, 5.0),
                  users: Sequence[str] | None = None, items: Sequence[str] | None = None) -> SparseRatings:
    """Read ``user<sep>item<sep>rating[<sep>timestamp]`` lines.

    Raw ids are densified in order of first appearance; ``users`` / ``items``
    pre-seed the maps (e.g. with a trained model's ids) and new ids are
    appended after them.
    """
    rows, cols, vals, linenos, uids, iids = _read_triplets(path, fmt, users, items)
    bad = (vals < scale[0]) | (vals > scale[1])
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise OutOfScaleError(f"{path}:{linenos[i]}: rating {vals[i]:g} outside scale [{scale[0]:g}, {scale[1]:g}]")
    return SparseRatings(len(uids), len(iids), rows, cols, vals, user_ids=uids, item_ids=iids,
                         scale=(float(scale[0]), float(scale[1])))


def parse_labels(path, fmt: str = "double-colon", users=None, items=None) -> SparseLabels:
    """Same layout as ratings with values restricted to 0 / 1."""
    rows, cols, vals, linenos, uids, iids = _read_triplets(path, fmt, users, items)
    bad = (vals != 0) & (vals != 1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"{path}:{linenos[i]}: label {vals[i]:g} is not 0 or 1")
    return SparseLabels(len(uids), len(iids), rows, cols, vals, user_ids=uids, item_ids=iids)


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_ratings(ratings: SparseRatings | SparseLabels, path, fmt: str = "double-colon") -> None:
    sep = _separator(fmt)
    uids = ratings.user_ids or tuple(str(i) for i in range(ratings.n_users))
    iids = ratings.item_ids or tuple(str(i) for i in range(ratings.n_items))
    lines = [f"{uids[u]}{sep}{iids[v]}{sep}{_fmt(x)}" for u, v, x in zip(ratings.users, ratings.items, ratings.values)]
    atomic_write(path, "".join(line + "\n" for line in lines))


def parse_descriptions(path, items: Sequence[str] | None = None) -> tuple[list[list[str]], tuple[str, ...]]:
    """Read ``itemId<sep>title<sep>tag1|tag2`` or ``itemId<sep>tag1, tag2`` lines.

    ``<sep>`` is ``::`` or a tab. The tag field (always the last one) is
    tokenized; titles are ignored. With ``items`` given, the result is aligned
    to that id list: unlisted items get an empty description and lines for
    unknown items are dropped. Otherwise items are indexed by file order.
    Returns the token lists and the item ids they are aligned to.
    """
    parsed: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            sep = "::" if "::" in line else "\t"
            parts = line.split(sep)
            if len(parts) < 2 or not parts[0].strip():
                raise MalformedLineError(path, lineno, "expected itemId<sep>[title<sep>]tags")
            item = parts[0].strip()
            if item in parsed:
                raise MalformedLineError(path, lineno, f"item {item} described twice")
            parsed[item] = tokenize(parts[-1])
    if items is None:
        return list(parsed.values()), tuple(parsed)
    unknown = len(set(parsed) - set(items))
    if unknown:
        logger.debug("%s: ignoring %d descriptions of unknown items", path, unknown)
    return [parsed.get(v, []) for v in items], tuple(items)


def read_corpus(path) -> list[list[str]]:
    """One tokenized sentence per non-empty line."""
    with open(path, encoding="utf-8") as fh:
        return [toks for toks in (tokenize(line) for line in fh) if toks]


# --------------------------------------------------------------------------
# model files

_BLOCKS = ("U", "V", "B_R", "B_L", "W_C")


def save_model(model: HybridModel, path) -> None:
    """Versioned text dump; floats use 17 significant digits so loading is exact."""
    N, M = model.shape
    out = [f"{MODEL_MAGIC} {MODEL_VERSION} {N} {M} {model.d} {model.e}"]
    for name in _BLOCKS:
        X = getattr(model, name)
        out.append(f"[{name}] {X.shape[0]} {X.shape[1]}")
        out.extend(" ".join(_fmt(x) for x in row) for row in X)
    if model.scale is not None:
        out.append(f"[scale] {_fmt(model.scale[0])} {_fmt(model.scale[1])}")
    for name in ("user_ids", "item_ids"):
        ids = getattr(model, name)
        if ids is not None:
            out.append(f"[{name}] {len(ids)}")
            out.extend(ids)
    atomic_write(path, "\n".join(out) + "\n")


def load_model(path) -> HybridModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    header = lines[0].split()
    if len(header) != 6 or header[0] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    if header[1] != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {header[1]}")
    N, M, d, e = (int(x) for x in header[2:])
    expected = {"U": (N, d), "V": (M, d), "B_R": (d, d), "B_L": (d, d), "W_C": (d, e)}
    found: dict = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line:
            i += 1
            continue
        if not (line.startswith("[") and "]" in line):
            raise DataError(f"{path}:{i + 1}: expected a section header")
        name, *args = line[1:].replace("]", " ", 1).split()
        i += 1
        if name in expected:
            rows, cols = int(args[0]), int(args[1])
            if (rows, cols) != expected[name]:
                raise DataError(f"{path}: block {name} is {rows}x{cols}, expected {expected[name]}")
            block = np.empty((rows, cols))
            for r in range(rows):
                vals = lines[i + r].split()
                if len(vals) != cols:
                    raise DataError(f"{path}:{i + r + 1}: expected {cols} values")
                block[r] = [float(x) for x in vals]
            found[name] = block
            i += rows
        elif name == "scale":
            found["scale"] = (float(args[0]), float(args[1]))
        elif name in ("user_ids", "item_ids"):
            n = int(args[0])
            found[name] = tuple(lines[i:i + n])
            i += n
        else:
            raise DataError(f"{path}: unknown section [{name}]")
    missing = [b for b in _BLOCKS if b not in found]
    if missing:
        raise DataError(f"{path}: missing blocks {missing}")
    return HybridModel(**found)


# --------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything a command needs, loadable from a flat ``key = value`` file.

    Fit hyperparameters use the :class:`FitConfig` names; skip-gram settings
    are ``embed_dim``, ``window``, ``epochs``, ``initial_step`` and
    ``min_count``. List values are comma separated.
    """

    ratings: str | None = None
    labels: str | None = None
    descriptions: str | None = None
    corpus: str | None = None
    embeddings: str | None = None
    ratings_format: str = "double-colon"
    scale_min: float = 1.0
    scale_max: float = 5.0
    output_dir: str = "."
    n_values: tuple[int, ...] = (3, 5, 10, 15, 20)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    variants: tuple[str, ...] = tuple(VARIANTS)
    timing: bool = False
    embed_dim: int = 10
    window: int = 5
    epochs: int = 20
    initial_step: float = 0.025
    min_count: int = 1
    fit: FitConfig = field(default_factory=FitConfig)

    _PATHS = ("ratings", "labels", "descriptions", "corpus", "embeddings")

    @property
    def scale(self) -> tuple[float, float]:
        return (self.scale_min, self.scale_max)

    @property
    def skipgram(self) -> SkipgramConfig:
        return SkipgramConfig(self.embed_dim, self.window, self.epochs, self.initial_step, self.fit.seed)

    def validate(self) -> "RunConfig":
        if self.ratings_format not in FORMATS:
            raise ConfigError(f"ratings_format must be one of {list(FORMATS)}")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}")
        if any(n < 3 for n in self.n_values):
            raise ConfigError("every n must be >= 3")
        if self.scale_min > self.scale_max:
            raise ConfigError("scale_min > scale_max")
        try:
            self.skipgram
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        kind = type(default[0]) if default else str
        return tuple(kind(x.strip()) for x in raw.split(",") if x.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment).

    Relative paths in the file are resolved against its directory. Every
    referenced input except the description file must exist. ``overrides``
    (already typed, e.g. from command-line flags) win over file values.
    """
    values: dict[str, str] = {}
    base = "."
    if path is not None:
        base = os.path.dirname(os.path.abspath(path))
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = (x.strip() for x in line.split("=", 1))
                values[key] = value
    return config_from_dict(values, base, overrides)


def config_from_dict(values: dict[str, str], base: str = ".", overrides: dict | None = None) -> RunConfig:
    run_defaults = {f.name: f.default for f in dataclasses.fields(RunConfig) if f.name != "fit"}
    fit_defaults = {f.name: f.default for f in dataclasses.fields(FitConfig)}
    run_kw, fit_kw = {}, {}
    for key, raw in values.items():
        try:
            if key in run_defaults:
                run_kw[key] = _convert(raw, run_defaults[key])
            elif key in fit_defaults:
                fit_kw[key] = _convert(raw, fit_defaults[key])
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    for key in RunConfig._PATHS + ("output_dir",):
        if key in run_kw:
            run_kw[key] = os.path.normpath(os.path.join(base, run_kw[key]))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        (run_kw if key in run_defaults else fit_kw)[key] = value
    for key in RunConfig._PATHS:
        p = run_kw.get(key)
        # a missing description file is tolerated: training then runs without descriptions
        if p is not None and key != "descriptions" and not os.path.exists(p):
            raise ConfigError(f"{key} file not found: {p}")
    try:
        cfg = RunConfig(**run_kw, fit=FitConfig(**fit_kw))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()
