"""Location matrix Q, target-location matrix Q~, priors, bound constants and
the full-row-rank test, all in exact rational arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .kb import KBError, KnowledgeBase, ground

Rational = Fraction


class ProbMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class ClassPrior:
    probs: tuple[Fraction, ...]

    def __post_init__(self):
        if any(p < 0 for p in self.probs):
            raise ProbMatrixError("prior entries must be non-negative")
        if sum(self.probs) != 1:
            raise ProbMatrixError(f"prior must sum to 1, sums to {sum(self.probs)}")

    @classmethod
    def uniform(cls, c: int) -> "ClassPrior":
        return cls(tuple(Fraction(1, c) for _ in range(c)))

    @classmethod
    def from_values(cls, values: Sequence) -> "ClassPrior":
        """Accepts ints, strings ("1/3") or floats; floats are taken as their
        shortest decimal and the vector is renormalised exactly."""
        fr = [Fraction(str(v)) if isinstance(v, float) else Fraction(v) for v in values]
        total = sum(fr)
        if total <= 0:
            raise ProbMatrixError("prior must have positive mass")
        return cls(tuple(f / total for f in fr))

    def __len__(self):
        return len(self.probs)

    def as_float(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs])


LOCATION_Q = "LocationQ"
TARGET_LOCATION = "TargetLocationQtilde"


@dataclass(frozen=True)
class ProbMatrix:
    kind: str
    data: tuple[tuple[Fraction, ...], ...]
    columns: tuple[tuple[str, int], ...]
    prior: ClassPrior | None = None
    concept_priors: dict[str, Fraction] = field(default_factory=dict)
    constants: dict[str, Fraction | None] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.data), len(self.columns)

    def as_float(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.data])

    def column_index(self, concept_id: str, position: int) -> int:
        return self.columns.index((concept_id, position))


def sequence_prior(prior: ClassPrior, seq: Sequence[int]) -> Fraction:
    out = Fraction(1)
    for y in seq:
        out *= prior.probs[y]
    return out


def concept_prior(kb: KnowledgeBase, prior: ClassPrior, concept: str) -> Fraction:
    return sum((sequence_prior(prior, s) for s in ground(kb).candidates(concept)), Fraction(0))


def _check_prior(kb: KnowledgeBase, prior: ClassPrior):
    if len(prior) != kb.num_classes:
        raise ProbMatrixError(f"prior has {len(prior)} entries, KB has {kb.num_classes} classes")


def _row_normalise(mass: list[list[Fraction]], what: str) -> tuple[tuple[Fraction, ...], ...]:
    bad = [j for j, row in enumerate(mass) if sum(row) == 0]
    if bad:
        raise ProbMatrixError(f"class{'es' if len(bad) > 1 else ''} {', '.join(map(str, bad))} unreachable under KB ({what})")
    return tuple(tuple(v / sum(row) for v in row) for row in mass)


def location_matrix_uniform(kb: KnowledgeBase) -> ProbMatrix:
    """Q[j, k] = share of class j's occurrences in the candidate set that sit
    at position k (candidates equiprobable)."""
    kb = ground(kb)
    if len(kb.concepts) != 1:
        raise ProbMatrixError("location matrix needs a single-concept KB")
    cs = kb.grounded[0]
    c, m = kb.num_classes, cs.arity
    counts = [[Fraction(0)] * m for _ in range(c)]
    for s in cs:
        for k, y in enumerate(s):
            counts[y][k] += 1
    data = _row_normalise(counts, "location matrix")
    a = bound_constant_a(kb)
    return ProbMatrix(
        LOCATION_Q,
        data,
        tuple((cs.concept_id, k) for k in range(m)),
        prior=None,
        concept_priors={cs.concept_id: Fraction(1)},
        constants={"a": a, "b": None},
    )


def _concept_weights(kb: KnowledgeBase, prior: ClassPrior) -> dict[str, Fraction]:
    # Data-process weight applied on top of p(S(t)): 1 for single-arity KBs.
    # Mixed arity: lengths are drawn uniformly, then rejection sampling runs
    # within that length, so concept mass is conditioned on its length's coverage.
    arities = sorted(set(kb.arities))
    if len(arities) == 1:
        return {cid: Fraction(1) for cid in kb.concept_ids}
    cov = {L: Fraction(0) for L in arities}
    for cp in kb.concepts:
        cov[cp.arity] += concept_prior(kb, prior, cp.id)
    return {cp.id: Fraction(1, len(arities)) / cov[cp.arity] for cp in kb.concepts}


def joint_mass(kb: KnowledgeBase, prior: ClassPrior, mode: str = "generative") -> list[list[Fraction]]:
    """Unnormalised mass of (class j, concept t, position k) under the data process."""
    kb = ground(kb)
    _check_prior(kb, prior)
    c = kb.num_classes
    mass = [[] for _ in range(c)]
    weights = _concept_weights(kb, prior) if mode == "generative" else None
    n_concepts = len(kb.concepts)
    for cs in kb.grounded:
        m = cs.arity
        block = [[Fraction(0)] * m for _ in range(c)]
        if mode == "generative":
            for s in cs:
                p = sequence_prior(prior, s)
                for k, y in enumerate(s):
                    block[y][k] += p
            scale = weights[cs.concept_id] / m
        elif mode == "uniform":
            for s in cs:
                for k, y in enumerate(s):
                    block[y][k] += 1
            scale = Fraction(1, n_concepts * m * len(cs))
        else:
            raise ProbMatrixError(f"unknown data mode {mode!r}")
        for j in range(c):
            mass[j].extend(v * scale for v in block[j])
    return mass


def joint_matrix(kb: KnowledgeBase, prior: ClassPrior | None = None, mode: str = "generative") -> ProbMatrix:
    """Q~[j, (t, k)] = p(concept t, position k | class j).

    ``mode="generative"`` follows the labelling-oracle process (instances
    i.i.d. from ``prior``, sequences kept when some concept accepts them);
    ``mode="uniform"`` draws a concept uniformly and then a candidate
    uniformly from it.
    """
    kb = ground(kb)
    prior = prior or ClassPrior.uniform(kb.num_classes)
    if mode == "generative":
        zero = [j for j, p in enumerate(prior.probs) if p == 0]
        used = {y for cs in kb.grounded for s in cs for y in s}
        if set(zero) & used:
            raise ProbMatrixError(f"prior is zero on classes {sorted(set(zero) & used)} used by the KB")
    mass = joint_mass(kb, prior, mode)
    data = _row_normalise(mass, "target-location matrix")
    columns = tuple((cs.concept_id, k) for cs in kb.grounded for k in range(cs.arity))
    cps = {cid: concept_prior(kb, prior, cid) for cid in kb.concept_ids}
    a = bound_constant_a(kb) if len(kb.concepts) == 1 else None
    return ProbMatrix(
        TARGET_LOCATION,
        data,
        columns,
        prior=prior,
        concept_priors=cps,
        constants={"a": a, "b": min(cps.values())},
    )


# ---------------------------------------------------------------------------
# rank


def rank_exact(mat: ProbMatrix | Sequence[Sequence]) -> int:
    """Row rank by fraction-free (Bareiss) elimination over the integers.

    Each row is first scaled by the lcm of its denominators, which leaves the
    rank unchanged.
    """
    rows = mat.data if isinstance(mat, ProbMatrix) else mat
    a = []
    for row in rows:
        fr = [Fraction(v) for v in row]
        lcm = 1
        for v in fr:
            lcm = lcm * v.denominator // math.gcd(lcm, v.denominator)
        a.append([int(v * lcm) for v in fr])
    if not a:
        return 0
    n_rows, n_cols = len(a), len(a[0])
    rank, prev = 0, 1
    for col in range(n_cols):
        if rank == n_rows:
            break
        piv = next((r for r in range(rank, n_rows) if a[r][col] != 0), None)
        if piv is None:
            continue
        a[rank], a[piv] = a[piv], a[rank]
        p = a[rank][col]
        for r in range(rank + 1, n_rows):
            for cc in range(col + 1, n_cols):
                # exact division is guaranteed by Sylvester's identity
                a[r][cc] = (p * a[r][cc] - a[r][col] * a[rank][cc]) // prev
            a[r][col] = 0
        prev = p
        rank += 1
    return rank


def rank_numeric(mat: ProbMatrix | np.ndarray, tol: float = 1e-9) -> int:
    """Row rank via float elimination with partial pivoting; pivots below
    ``tol`` times the largest absolute pivot seen count as zero."""
    a = mat.as_float() if isinstance(mat, ProbMatrix) else np.array(mat, dtype=float)
    a = a.copy()
    n_rows, n_cols = a.shape
    scale = np.abs(a).max() if a.size else 0.0
    if scale == 0:
        return 0
    rank = 0
    max_pivot = 0.0
    for col in range(n_cols):
        if rank == n_rows:
            break
        piv = rank + int(np.argmax(np.abs(a[rank:, col])))
        val = abs(a[piv, col])
        if val <= tol * max(max_pivot, scale):
            continue
        max_pivot = max(max_pivot, val)
        a[[rank, piv]] = a[[piv, rank]]
        a[rank + 1 :] -= np.outer(a[rank + 1 :, col] / a[rank, col], a[rank])
        rank += 1
    return rank


# ---------------------------------------------------------------------------
# constants and diagnosis


def bound_constant_a(kb: KnowledgeBase) -> Fraction:
    """max over classes of the mean number of occurrences per candidate."""
    kb = ground(kb)
    if len(kb.concepts) != 1:
        raise ProbMatrixError("constant a is defined for single-concept KBs only")
    cs = kb.grounded[0]
    counts = [0] * kb.num_classes
    for s in cs:
        for y in s:
            counts[y] += 1
    a = Fraction(max(counts), len(cs))
    assert a <= cs.arity, "a <= m violated"
    return a


def bound_constants(kb: KnowledgeBase, prior: ClassPrior | None = None) -> dict:
    kb = ground(kb)
    prior = prior or ClassPrior.uniform(kb.num_classes)
    _check_prior(kb, prior)
    out: dict = {}
    if len(kb.concepts) == 1:
        a = bound_constant_a(kb)
        out["a"] = a
        out["C_thm1"] = math.log(a)
    else:
        out["a"] = None
        out["C_thm1"] = None
    b = min(concept_prior(kb, prior, cid) for cid in kb.concept_ids)
    m = max(kb.arities)
    out["b"] = b
    out["C_thm2"] = math.log(m) - math.log(b)
    return out


LEARNABLE = "Learnable"
INSUFFICIENT = "Insufficient"


@dataclass(frozen=True)
class DiagnosisReport:
    kb_id: str
    classes: int
    matrix: ProbMatrix
    rank: int
    full_row_rank: bool
    verdict: str
    a: Fraction | None
    b: Fraction
    C_thm1: float | None
    C_thm2: float

    def to_json(self) -> dict:
        def pair(f):
            return None if f is None else [f.numerator, f.denominator]

        return {
            "kb_id": self.kb_id,
            "classes": self.classes,
            "kind": self.matrix.kind,
            "columns": [[cid, k] for cid, k in self.matrix.columns],
            "matrix": [[pair(v) for v in row] for row in self.matrix.data],
            "rank": self.rank,
            "full_row_rank": self.full_row_rank,
            "verdict": self.verdict,
            "a": pair(self.a),
            "b": pair(self.b),
            "C_thm2": self.C_thm2,
        }

    def to_text(self) -> str:
        lines = [
            f"kb: {self.kb_id} ({self.classes} classes)",
            f"matrix: {self.matrix.kind} {self.matrix.shape[0]}x{self.matrix.shape[1]}",
        ]
        for row in self.matrix.data:
            lines.append("  " + " ".join(f"{str(v):>8}" for v in row))
        lines.append(f"rank: {self.rank} / {self.classes}")
        lines.append(f"verdict: {self.verdict}")
        if self.a is not None:
            lines.append(f"a = {self.a}   C_thm1 = {self.C_thm1:.6f}")
        lines.append(f"b = {self.b}   C_thm2 = {self.C_thm2:.6f}")
        return "\n".join(lines) + "\n"


def diagnose(kb: KnowledgeBase, prior: ClassPrior | None = None) -> DiagnosisReport:
    """Rank criterion: Learnable iff the probability matrix has rank c.

    Single-concept KBs under the uniform prior use Q; everything else uses Q~.
    """
    kb = ground(kb)
    c = kb.num_classes
    uniform = ClassPrior.uniform(c)
    prior = prior or uniform
    if len(kb.concepts) == 1 and prior == uniform:
        mat = location_matrix_uniform(kb)
    else:
        mat = joint_matrix(kb, prior)
    rank = rank_exact(mat)
    consts = bound_constants(kb, prior)
    return DiagnosisReport(
        kb_id=kb.name,
        classes=c,
        matrix=mat,
        rank=rank,
        full_row_rank=rank == c,
        verdict=LEARNABLE if rank == c else INSUFFICIENT,
        a=consts["a"],
        b=consts["b"],
        C_thm1=consts["C_thm1"],
        C_thm2=consts["C_thm2"],
    )


__all__ = [
    "ClassPrior",
    "DiagnosisReport",
    "KBError",
    "ProbMatrix",
    "ProbMatrixError",
    "bound_constant_a",
    "bound_constants",
    "concept_prior",
    "diagnose",
    "joint_mass",
    "joint_matrix",
    "location_matrix_uniform",
    "rank_exact",
    "rank_numeric",
    "sequence_prior",
]
