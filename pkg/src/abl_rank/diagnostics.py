"""Experiments: Monte-Carlo checks of the risk upper bounds, recovery runs that
pair the rank verdict with achieved accuracy, and KB sweeps."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from .datagen import FeatureModel, SequenceDataset, make_dataset, make_rng, make_test_instances
from .kb import Concept, Facts, KnowledgeBase, LabelAlphabet, builtin_kb, ground, random_kb
from .learner import (
    FLOOR,
    Classifier,
    TrainConfig,
    TrainReport,
    candidate_marginals,
    timed_train,
)
from .probmatrix import (
    ClassPrior,
    DiagnosisReport,
    ProbMatrix,
    bound_constants,
    diagnose,
    joint_matrix,
    location_matrix_uniform,
)

BOUND_TOLERANCE = 0.02


# ---------------------------------------------------------------------------
# empirical risks


def _probs_by_concept(h: Classifier, ds: SequenceDataset):
    view = ds.training_view()
    for cid, (_, X) in view.groups().items():
        n, m, d = X.shape
        yield cid, h.probs(X.reshape(n * m, d)).reshape(n, m, -1)


def nesy_avg_risk(h: Classifier, ds: SequenceDataset) -> float:
    """Empirical inconsistency risk with abduced labels averaged exactly over
    the candidate set (the expectation of random abduction)."""
    total, n = 0.0, 0
    for cid, g in _probs_by_concept(h, ds):
        marg = candidate_marginals(ds.kb.candidates(cid), ds.kb.num_classes)
        per_pos = -np.sum(marg[None] * np.log(np.maximum(g, FLOOR)), axis=2)
        total += float(per_pos.mean(axis=1).sum())
        n += g.shape[0]
    return total / n


def location_risk(h: Classifier, ds: SequenceDataset, Q: ProbMatrix) -> float:
    """Empirical L-/TL-risk: mean over all (instance, column) pairs of
    -log (Q^T g(x))[column]."""
    Qf = Q.as_float()
    total, n = 0.0, 0
    for cid, g in _probs_by_concept(h, ds):
        cols = [Q.column_index(cid, k) for k in range(g.shape[1])]
        q = np.einsum("nmc,cm->nm", g, Qf[:, cols])
        total += float(-np.log(np.maximum(q, FLOOR)).sum())
        n += q.size
    return total / n


# ---------------------------------------------------------------------------
# bound verification


@dataclass
class BoundCheckResult:
    kb_id: str
    bound: str
    n: int
    constant: float
    records: list[dict]
    violations: int
    tolerance: float
    tightness: dict | None = None

    def to_json(self) -> dict:
        return asdict(self)


def tightness_instance() -> dict:
    """S = {[0,1],[1,0]} with the uniform classifier: the bound holds with equality."""
    kb = ground(KnowledgeBase(LabelAlphabet(2), (Concept("swap", 2, Facts(((0, 1), (1, 0)))),), name="swap"))
    model = FeatureModel(2)
    ds = make_dataset(kb, "uniform", None, model, 1000, 0)
    h = Classifier(2, 2, init_scale=0.0)
    Q = location_matrix_uniform(kb)
    consts = bound_constants(kb)
    r_l = location_risk(h, ds, Q)
    r_nesy = nesy_avg_risk(h, ds)
    slack = r_nesy + consts["C_thm1"] - r_l
    return {"R_L": r_l, "R_NeSy_avg": r_nesy, "C": consts["C_thm1"], "slack": slack}


def verify_bound(
    kb: KnowledgeBase,
    prior: ClassPrior | None = None,
    n: int = 20000,
    num_classifiers: int = 100,
    seed: int = 0,
    tolerance: float = BOUND_TOLERANCE,
) -> BoundCheckResult:
    """Check R_loc(h) <= R_NeSy(h) + C on random linear classifiers.

    Single-concept KBs with a uniform prior use the location matrix Q and
    C = log a; otherwise the target-location matrix and C = log m - log b.
    """
    kb = ground(kb)
    c = kb.num_classes
    prior = prior or ClassPrior.uniform(c)
    consts = bound_constants(kb, prior)
    model = FeatureModel(c)
    if len(kb.concepts) == 1 and prior == ClassPrior.uniform(c):
        bound, Q, C = "location", location_matrix_uniform(kb), consts["C_thm1"]
        ds = make_dataset(kb, "uniform", prior, model, n, seed)
    else:
        bound, Q, C = "target-location", joint_matrix(kb, prior), consts["C_thm2"]
        ds = make_dataset(kb, "generative", prior, model, n, seed)
    rng = make_rng(seed, 21)
    records = []
    violations = 0
    for i in range(num_classifiers):
        h = Classifier.random(model.dim, c, rng, scale=1.0)
        r_nesy = nesy_avg_risk(h, ds)
        r_loc = location_risk(h, ds, Q)
        rhs = r_nesy + C
        slack = rhs - r_loc
        if slack < -tolerance:
            violations += 1
        records.append({"classifier": i, "R_NeSy_avg": r_nesy, "R_loc": r_loc, "bound_rhs": rhs, "slack": slack})
    return BoundCheckResult(kb.name, bound, n, C, records, violations, tolerance, tightness_instance())


# ---------------------------------------------------------------------------
# recovery


@dataclass
class RecoveryResult:
    train: TrainReport
    diagnosis: DiagnosisReport
    bayes_accuracy: float

    def to_json(self, timing: bool = True) -> dict:
        return {
            "diagnosis": self.diagnosis.to_json(),
            "train": self.train.to_json(timing),
            "bayes_accuracy": self.bayes_accuracy,
        }


def nearest_mean_accuracy(model: FeatureModel, x: np.ndarray, y: np.ndarray) -> float:
    """Accuracy of the Bayes rule for equal priors (nearest class mean)."""
    d2 = ((x[:, None, :] - model.class_means[None]) ** 2).sum(axis=2)
    return float(np.mean(d2.argmin(axis=1) == y))


def recovery_experiment(
    kb: KnowledgeBase,
    prior: ClassPrior | None,
    cfg: TrainConfig,
    n_train: int = 10000,
    n_test: int = 10000,
    seed: int = 0,
    mode: str = "generative",
    model: FeatureModel | None = None,
) -> RecoveryResult:
    """Diagnose ``kb`` then train with ``cfg.method`` and test on held-out
    instances drawn from the instance distribution."""
    kb = ground(kb)
    prior = prior or ClassPrior.uniform(kb.num_classes)
    model = model or FeatureModel(kb.num_classes)
    report = diagnose(kb, prior)
    ds = make_dataset(kb, mode, prior, model, n_train, seed)
    Q = joint_matrix(kb, prior, mode) if cfg.method == "tl" else None
    x_test, y_test = make_test_instances(model, prior, n_test, seed)
    cfg = replace(cfg, seed=seed)
    _, train_report = timed_train(ds.training_view(), cfg, Q, x_test, y_test)
    return RecoveryResult(train_report, report, nearest_mean_accuracy(model, x_test, y_test))


# ---------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = (
    "kb_id",
    "form",
    "arity",
    "rank",
    "full_row_rank",
    "method",
    "seed",
    "accuracy",
    "perm_max_accuracy",
    "wall_ms",
)


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            r = dict(r)
            if not timing:
                r["wall_ms"] = 0
            w.writerow(r)
        return buf.getvalue()

    def group_means(self, method: str | None = None) -> dict[bool, float]:
        out: dict[bool, list[float]] = {True: [], False: []}
        for r in self.rows:
            if method is None or r["method"] == method:
                out[r["full_row_rank"]].append(r["accuracy"])
        return {k: float(np.mean(v)) if v else math.nan for k, v in out.items()}


def _cell(args) -> dict:
    kb, form, cfg, n_train, n_test, seed = args
    res = recovery_experiment(kb, None, cfg, n_train, n_test, seed)
    return {
        "kb_id": kb.name,
        "form": form,
        "arity": max(kb.arities),
        "rank": res.diagnosis.rank,
        "full_row_rank": res.diagnosis.full_row_rank,
        "method": cfg.method,
        "seed": seed,
        "accuracy": res.train.final_accuracy,
        "perm_max_accuracy": res.train.perm_max_accuracy,
        "wall_ms": res.train.wall_ms,
    }


def _run_cells(cells: list, workers: int) -> list[dict]:
    if workers <= 1:
        return [_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_cell, cells))


def hed_base_sweep(
    bases=range(2, 11),
    cfg: TrainConfig | None = None,
    seed: int = 0,
    n_train: int = 10000,
    n_test: int = 10000,
    workers: int = 1,
) -> SweepResult:
    cfg = cfg or TrainConfig(method="tl")
    cells = [(builtin_kb("hed", b), "hed", cfg, n_train, n_test, seed) for b in bases]
    return SweepResult(_run_cells(cells, workers))


def random_kb_seeds(seed: int, num_kbs: int) -> list[int]:
    ss = np.random.SeedSequence([seed, 31])
    return [int(s.generate_state(1, np.uint32)[0]) for s in ss.spawn(num_kbs)]


def random_kb_sweep(
    form: str = "dnf",
    arity: int = 3,
    num_kbs: int = 40,
    cfg: TrainConfig | None = None,
    seed: int = 0,
    methods=("tl",),
    n_train: int = 10000,
    n_test: int = 10000,
    workers: int = 1,
) -> SweepResult:
    if arity not in (3, 4, 5):
        raise ValueError("random KB sweeps use arity 3, 4 or 5")
    cfg = cfg or TrainConfig(method="tl")
    cells = []
    for kb_seed in random_kb_seeds(seed, num_kbs):
        kb = random_kb(form, arity, kb_seed)
        for method in methods:
            cells.append((kb, form, replace(cfg, method=method), n_train, n_test, seed))
    return SweepResult(_run_cells(cells, workers))


__all__ = [
    "BoundCheckResult",
    "RecoveryResult",
    "SweepResult",
    "hed_base_sweep",
    "location_risk",
    "nearest_mean_accuracy",
    "nesy_avg_risk",
    "random_kb_sweep",
    "recovery_experiment",
    "tightness_instance",
    "verify_bound",
]
