"""Synthetic instance features and labelled-sequence datasets.

Two data processes are supported:

* ``uniform``: pick a concept uniformly, then a candidate uniformly from it.
* ``generative``: draw labels i.i.d. from a class prior and keep the sequence
  if some concept accepts it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

from .kb import KnowledgeBase, ground
from .probmatrix import ClassPrior

SCHEMA = "abl-rank/v1"
MIN_COVERAGE = 1e-6


class DataError(ValueError):
    pass


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent Philox stream per (seed, *keys)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


@dataclass(frozen=True)
class FeatureModel:
    """Isotropic Gaussian per class, means at ``sep * e_j``."""

    num_classes: int
    dim: int | None = None
    sep: float = 3.0
    noise_sigma: float = 1.0

    def __post_init__(self):
        d = self.dim if self.dim is not None else self.num_classes
        object.__setattr__(self, "dim", d)
        if d < max(2, self.num_classes):
            raise DataError(f"dim must be >= max(2, classes), got {d}")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be non-negative")

    @property
    def class_means(self) -> np.ndarray:
        means = np.zeros((self.num_classes, self.dim))
        means[np.arange(self.num_classes), np.arange(self.num_classes)] = self.sep
        return means

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels)
        noise = rng.standard_normal(labels.shape + (self.dim,))
        return self.class_means[labels] + self.noise_sigma * noise


def sample_instance(model: FeatureModel, y: int, rng: np.random.Generator) -> np.ndarray:
    return model.sample(np.array(y), rng)


@dataclass(frozen=True)
class SequenceRecord:
    concept_id: str
    x: np.ndarray
    y_true: tuple[int, ...]

    def __eq__(self, other):
        if not isinstance(other, SequenceRecord):
            return NotImplemented
        return (
            self.concept_id == other.concept_id
            and self.y_true == other.y_true
            and np.array_equal(self.x, other.x)
        )

    __hash__ = None


def sample_uniform(kb: KnowledgeBase, concept: str, model: FeatureModel, rng: np.random.Generator) -> SequenceRecord:
    cs = ground(kb).candidates(concept)
    y = cs.sequences[int(rng.integers(len(cs)))]
    return SequenceRecord(concept, model.sample(np.array(y), rng), y)


class _Oracle:
    """Labelling oracle: maps a label sequence to the unique accepting concept."""

    def __init__(self, kb: KnowledgeBase):
        kb = ground(kb)
        self.kb = kb
        self.c = kb.num_classes
        self.lengths = sorted(set(kb.arities))
        self.codes: dict[int, np.ndarray] = {}
        self.owner: dict[int, np.ndarray] = {}
        for L in self.lengths:
            codes, owner = [], []
            for t, cs in enumerate(kb.grounded):
                if cs.arity == L:
                    codes.append(self.encode(cs.as_array()))
                    owner.append(np.full(len(cs), t))
            cat = np.concatenate(codes)
            order = np.argsort(cat)
            self.codes[L] = cat[order]
            self.owner[L] = np.concatenate(owner)[order]

    def encode(self, seqs: np.ndarray) -> np.ndarray:
        powers = self.c ** np.arange(seqs.shape[1] - 1, -1, -1, dtype=np.int64)
        return seqs.astype(np.int64) @ powers

    def label(self, seqs: np.ndarray) -> np.ndarray:
        """Concept index per row, -1 when no concept accepts it."""
        L = seqs.shape[1]
        codes = self.encode(seqs)
        table = self.codes[L]
        pos = np.searchsorted(table, codes)
        pos = np.minimum(pos, len(table) - 1)
        hit = table[pos] == codes
        return np.where(hit, self.owner[L][pos], -1)


def coverage(kb: KnowledgeBase, prior: ClassPrior) -> dict[int, float]:
    """Probability that an i.i.d. label sequence of each length is accepted."""
    kb = ground(kb)
    p = prior.as_float()
    out: dict[int, float] = {}
    for cs in kb.grounded:
        seqs = cs.as_array()
        out[cs.arity] = out.get(cs.arity, 0.0) + float(np.prod(p[seqs], axis=1).sum())
    return out


def _check_coverage(kb: KnowledgeBase, prior: ClassPrior):
    for L, rate in sorted(coverage(kb, prior).items()):
        if rate < MIN_COVERAGE:
            raise DataError(f"KB coverage too sparse for generative mode (length {L}: {rate:.2e})")


@lru_cache(maxsize=32)
def _oracle(kb: KnowledgeBase) -> _Oracle:
    return _Oracle(kb)


def sample_generative(
    kb: KnowledgeBase,
    prior: ClassPrior,
    model: FeatureModel,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> SequenceRecord:
    """One record from the labelling-oracle process by literal rejection.

    ``stats`` (optional) accumulates ``draws`` and ``accepted`` counts.
    """
    kb = ground(kb)
    _check_coverage(kb, prior)
    oracle = _oracle(kb)
    p = prior.as_float()
    L = oracle.lengths[int(rng.integers(len(oracle.lengths)))] if len(oracle.lengths) > 1 else oracle.lengths[0]
    while True:
        y = rng.choice(oracle.c, size=(1, L), p=p)
        t = int(oracle.label(y)[0])
        if stats is not None:
            stats["draws"] = stats.get("draws", 0) + 1
        if t >= 0:
            if stats is not None:
                stats["accepted"] = stats.get("accepted", 0) + 1
            seq = tuple(int(v) for v in y[0])
            return SequenceRecord(oracle.kb.concepts[t].id, model.sample(np.array(seq), rng), seq)


def _generative_labels(kb: KnowledgeBase, prior: ClassPrior, n: int, rng: np.random.Generator):
    """Draws from the same law as repeated :func:`sample_generative` calls:
    the accepted sequence is distributed as the prior restricted to the
    covered sequences of the drawn length, so it is sampled from that
    restriction directly instead of by rejection."""
    p = prior.as_float()
    lengths = sorted(set(kb.arities))
    wanted = rng.integers(len(lengths), size=n) if len(lengths) > 1 else np.zeros(n, dtype=np.int64)
    out: list = [None] * n
    for li, L in enumerate(lengths):
        idx = np.flatnonzero(wanted == li)
        seqs, owner = [], []
        for t, cs in enumerate(kb.grounded):
            if cs.arity == L:
                seqs.extend(cs.sequences)
                owner.extend([t] * len(cs))
        w = np.prod(p[np.array(seqs)], axis=1)
        pick = rng.choice(len(seqs), size=len(idx), p=w / w.sum())
        for i, j in zip(idx, pick):
            out[i] = (owner[j], seqs[j])
    return out


@dataclass(frozen=True)
class TrainingView:
    """Dataset as seen by learners: features and concepts, no true labels."""

    kb: KnowledgeBase
    concept_ids: tuple[str, ...]
    features: tuple[np.ndarray, ...]

    def __len__(self):
        return len(self.concept_ids)

    @cached_property
    def _groups(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        out = {}
        ids = np.array(self.concept_ids)
        for cid in self.kb.concept_ids:
            idx = np.flatnonzero(ids == cid)
            if len(idx):
                out[cid] = (idx, np.stack([self.features[i] for i in idx]))
        return out

    def groups(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """concept -> (record indices, stacked features (n_t, m_t, d))."""
        return self._groups


@dataclass(frozen=True)
class SequenceDataset:
    kb: KnowledgeBase
    records: tuple[SequenceRecord, ...]
    mode: str
    prior: ClassPrior
    seed: int
    dim: int
    stats: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.records)

    @cached_property
    def _view(self) -> TrainingView:
        return TrainingView(
            self.kb,
            tuple(r.concept_id for r in self.records),
            tuple(r.x for r in self.records),
        )

    def training_view(self) -> TrainingView:
        return self._view

    def instances(self) -> tuple[np.ndarray, np.ndarray]:
        """All (x, y) instances flattened; evaluation only."""
        x = np.concatenate([r.x for r in self.records])
        y = np.concatenate([np.array(r.y_true) for r in self.records])
        return x, y


def make_dataset(
    kb: KnowledgeBase,
    mode: str,
    prior: ClassPrior | None,
    model: FeatureModel,
    n: int,
    seed: int,
) -> SequenceDataset:
    if n < 1:
        raise DataError("n must be at least 1")
    kb = ground(kb)
    prior = prior or ClassPrior.uniform(kb.num_classes)
    if model.num_classes != kb.num_classes:
        raise DataError("feature model and KB disagree on the number of classes")
    label_rng = make_rng(seed, 0)
    feat_rng = make_rng(seed, 1)
    stats: dict = {}
    if mode == "uniform":
        t_idx = label_rng.integers(len(kb.concepts), size=n)
        labels = []
        for t in t_idx:
            cs = kb.grounded[t]
            labels.append((int(t), cs.sequences[int(label_rng.integers(len(cs)))]))
    elif mode == "generative":
        _check_coverage(kb, prior)
        labels = _generative_labels(kb, prior, n, label_rng)
        stats["coverage"] = coverage(kb, prior)
    else:
        raise DataError(f"unknown mode {mode!r}")
    records = tuple(
        SequenceRecord(kb.concepts[t].id, model.sample(np.array(seq), feat_rng), seq) for t, seq in labels
    )
    return SequenceDataset(kb, records, mode, prior, seed, model.dim, stats)


def make_test_instances(model: FeatureModel, prior: ClassPrior, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Held-out labelled instances drawn i.i.d. from the instance distribution."""
    rng = make_rng(seed, 3)
    y = rng.choice(model.num_classes, size=n, p=prior.as_float())
    return model.sample(y, rng), y


# ---------------------------------------------------------------------------
# file format: line-delimited JSON with a header line


def write_dataset(ds: SequenceDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in dataset_lines(ds):
            fh.write(line + "\n")


def dataset_lines(ds: SequenceDataset) -> Iterable[str]:
    header = {
        "schema": SCHEMA,
        "classes": ds.kb.num_classes,
        "dim": ds.dim,
        "mode": ds.mode,
        "seed": ds.seed,
        "prior": [[p.numerator, p.denominator] for p in ds.prior.probs],
    }
    yield json.dumps(header)
    for r in ds.records:
        yield json.dumps({"concept": r.concept_id, "x": r.x.tolist(), "y_true": list(r.y_true)})


def read_dataset(path: str | Path, kb: KnowledgeBase) -> SequenceDataset:
    kb = ground(kb)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataError(f"bad header: {e}") from None
    if header.get("schema") != SCHEMA:
        raise DataError(f"unsupported schema {header.get('schema')!r}")
    for key in ("classes", "dim", "mode", "seed"):
        if key not in header:
            raise DataError(f"header missing {key!r}")
    if header["classes"] != kb.num_classes:
        raise DataError("dataset and KB disagree on the number of classes")
    from fractions import Fraction

    prior = (
        ClassPrior(tuple(Fraction(a, b) for a, b in header["prior"]))
        if "prior" in header
        else ClassPrior.uniform(kb.num_classes)
    )
    d = header["dim"]
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
            cid, x, y = obj["concept"], np.array(obj["x"], dtype=float), tuple(int(v) for v in obj["y_true"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"line {lineno}: malformed record ({e})") from None
        cs = kb.candidates(cid) if cid in kb.concept_ids else None
        if cs is None:
            raise DataError(f"line {lineno}: unknown concept {cid!r}")
        if x.ndim != 2 or x.shape != (cs.arity, d) or len(y) != cs.arity:
            raise DataError(f"line {lineno}: shape mismatch for concept {cid!r}")
        if y not in cs:
            raise DataError(f"line {lineno}: y_true not in candidate set of {cid!r}")
        records.append(SequenceRecord(cid, x, y))
    return SequenceDataset(kb, tuple(records), header["mode"], prior, header["seed"], d)
