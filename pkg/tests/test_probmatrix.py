import itertools
from fractions import Fraction as F

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from abl_rank.kb import Concept, Facts, KnowledgeBase, LabelAlphabet, builtin_kb, ground, random_kb
from abl_rank.probmatrix import (
    INSUFFICIENT,
    LEARNABLE,
    ClassPrior,
    ProbMatrixError,
    bound_constants,
    concept_prior,
    diagnose,
    joint_matrix,
    location_matrix_uniform,
    rank_exact,
    rank_numeric,
    sequence_prior,
)


def brute_joint(kb, prior):
    """p(t, k | y) from the data process, by enumerating every sequence of
    every length: draw a length uniformly, draw Y from the prior, keep it if
    some concept accepts it, then pick a position uniformly."""
    c = kb.num_classes
    owner = {s: cs.concept_id for cs in kb.grounded for s in cs}
    lengths = sorted(set(kb.arities))
    cols = [(cs.concept_id, k) for cs in kb.grounded for k in range(cs.arity)]
    joint = {(j, col): F(0) for j in range(c) for col in cols}
    for L in lengths:
        seqs = list(itertools.product(range(c), repeat=L))
        p = {s: sequence_prior(prior, s) for s in seqs}
        cov = sum(p[s] for s in seqs if s in owner)
        for s in seqs:
            if s not in owner:
                continue
            w = F(1, len(lengths)) * p[s] / cov
            for k, y in enumerate(s):
                joint[(y, (owner[s], k))] += w / L
    out = []
    for j in range(c):
        total = sum(joint[(j, col)] for col in cols)
        out.append(tuple(joint[(j, col)] / total for col in cols))
    return tuple(out)


def sympy_rank(rows):
    return sympy.Matrix([[sympy.Rational(v.numerator, v.denominator) for v in r] for r in rows]).rank()


def single(seqs, c=2, cid="t"):
    m = len(seqs[0])
    return ground(KnowledgeBase(LabelAlphabet(c), (Concept(cid, m, Facts(tuple(seqs))),)))


class TestPriors:
    def test_sequence_prior(self):
        assert sequence_prior(ClassPrior.uniform(2), [0, 1, 0]) == F(1, 8)
        assert sequence_prior(ClassPrior((F(1, 4), F(3, 4))), [1, 1]) == F(9, 16)
        assert sequence_prior(ClassPrior.uniform(10), [3, 7]) == F(1, 100)

    def test_concept_prior(self):
        kb = builtin_kb("conjunction")
        u = ClassPrior.uniform(2)
        assert concept_prior(kb, u, "conj0") == F(3, 4)
        assert concept_prior(kb, u, "conj1") == F(1, 4)
        assert concept_prior(builtin_kb("addition"), ClassPrior.uniform(10), "zero") == F(1, 100)

    def test_complement_pair_sums_to_one(self):
        kb = random_kb("dnf", 3, 5)
        u = ClassPrior.uniform(2)
        assert concept_prior(kb, u, "positive") + concept_prior(kb, u, "negative") == 1

    def test_prior_validation(self):
        with pytest.raises(ProbMatrixError):
            ClassPrior((F(1, 2), F(1, 3)))
        with pytest.raises(ProbMatrixError):
            ClassPrior((F(-1, 2), F(3, 2)))
        assert ClassPrior.from_values([1, 3]).probs == (F(1, 4), F(3, 4))
        assert ClassPrior.from_values(["1/3", "2/3"]).probs == (F(1, 3), F(2, 3))


class TestLocationMatrix:
    def test_conj_eq(self):
        Q = location_matrix_uniform(builtin_kb("conj_eq"))
        assert Q.data == ((F(2, 7), F(2, 7), F(3, 7)), (F(2, 5), F(2, 5), F(1, 5)))

    def test_conj0(self):
        Q = location_matrix_uniform(builtin_kb("conjunction").select(["conj0"]))
        assert Q.data == ((F(1, 2), F(1, 2)), (F(1, 2), F(1, 2)))

    def test_complete_set(self):
        Q = location_matrix_uniform(single(list(itertools.product(range(3), repeat=3)), c=3))
        assert all(v == F(1, 3) for row in Q.data for v in row)

    def test_unreachable_class(self):
        with pytest.raises(ProbMatrixError, match="unreachable"):
            location_matrix_uniform(single([(0, 0)], c=2))

    def test_multi_concept_rejected(self):
        with pytest.raises(ProbMatrixError):
            location_matrix_uniform(builtin_kb("conjunction"))


class TestJointMatrix:
    def test_conjunction(self):
        Qt = joint_matrix(builtin_kb("conjunction"))
        assert Qt.data == ((F(1, 2), F(1, 2), F(0), F(0)), (F(1, 4), F(1, 4), F(1, 4), F(1, 4)))
        assert Qt.columns == (("conj0", 0), ("conj0", 1), ("conj1", 0), ("conj1", 1))

    def test_addition_entry(self):
        Qt = joint_matrix(builtin_kb("addition"))
        assert Qt.data[0][Qt.column_index("zero", 0)] == F(1, 20)

    def test_single_concept_equals_Q(self):
        kb = builtin_kb("conj_eq")
        assert joint_matrix(kb).data == location_matrix_uniform(kb).data

    @pytest.mark.parametrize(
        "kb",
        [builtin_kb("conjunction"), builtin_kb("addition", 3), builtin_kb("hed", 2), builtin_kb("hed", 3)]
        + [random_kb("cnf", 3, s) for s in range(4)],
        ids=lambda kb: kb.name,
    )
    def test_matches_enumeration_oracle(self, kb):
        prior = ClassPrior.uniform(kb.num_classes)
        assert joint_matrix(kb, prior).data == brute_joint(kb, prior)

    def test_nonuniform_prior_oracle(self):
        kb = builtin_kb("conjunction")
        prior = ClassPrior((F(1, 5), F(4, 5)))
        assert joint_matrix(kb, prior).data == brute_joint(kb, prior)

    def test_row_stochastic(self):
        for kb in (builtin_kb("hed", 4), builtin_kb("addition", 5), random_kb("dnf", 5, 1)):
            for row in joint_matrix(kb).data:
                assert sum(row) == 1
                assert all(v >= 0 for v in row)

    def test_uniform_mode(self):
        # concept drawn uniformly, then a candidate, then a position: class 1
        # gets 1/2 * 1/3 * 1/2 at each conj0 slot and 1/2 * 1 * 1/2 at each
        # conj1 slot; (1/12, 1/12, 1/4, 1/4) normalises to eighths
        Qt = joint_matrix(builtin_kb("conjunction"), mode="uniform")
        assert Qt.data[1] == (F(1, 8), F(1, 8), F(3, 8), F(3, 8))

    def test_zero_prior_on_used_class(self):
        with pytest.raises(ProbMatrixError):
            joint_matrix(builtin_kb("conjunction"), ClassPrior((F(1), F(0))))


class TestRank:
    @pytest.mark.parametrize(
        "kb,expected",
        [
            (builtin_kb("conj_eq"), 2),
            (builtin_kb("conjunction"), 2),
            (builtin_kb("conjunction").select(["conj0"]), 1),
            (builtin_kb("hed", 2), 4),
            (builtin_kb("hed", 10), 7),
        ],
        ids=["conj_eq", "conjunction", "conj0", "hed2", "hed10"],
    )
    def test_reference_ranks(self, kb, expected):
        mat = diagnose(kb).matrix
        assert rank_exact(mat) == expected
        assert rank_numeric(mat, 1e-9) == expected

    def test_hed_bases_against_sympy(self):
        for base in range(2, 8):
            mat = joint_matrix(builtin_kb("hed", base))
            assert rank_exact(mat) == sympy_rank(mat.data)

    def test_addition_full_rank(self):
        assert rank_exact(joint_matrix(builtin_kb("addition"))) == 10

    def test_identity_and_duplicate(self):
        eye = [[F(int(i == j)) for j in range(4)] for i in range(4)]
        assert rank_exact(eye) == 4 == rank_numeric(np.eye(4))
        dup = eye[:3] + [eye[0]]
        assert rank_exact(dup) == 3 == rank_numeric(np.array(dup, dtype=float))

    def test_zero_matrix(self):
        assert rank_exact([[F(0)] * 3] * 2) == 0
        assert rank_numeric(np.zeros((2, 3))) == 0

    def test_numeric_agrees_on_random_kbs(self):
        for seed in range(1000):
            kb = random_kb("dnf" if seed % 2 else "cnf", 3 + seed % 3, seed)
            mat = diagnose(kb).matrix
            assert rank_numeric(mat) == rank_exact(mat)

    @given(st.lists(st.lists(st.integers(-3, 3), min_size=4, max_size=4), min_size=1, max_size=5), st.integers(1, 7))
    @settings(max_examples=300, deadline=None)
    def test_exact_matches_sympy(self, rows, den):
        fr = [[F(v, den) for v in r] for r in rows]
        assert rank_exact(fr) == sympy_rank(fr)


class TestConstants:
    def test_conj_eq(self):
        k = bound_constants(builtin_kb("conj_eq"))
        assert k["a"] == F(7, 4)
        assert k["C_thm1"] == pytest.approx(np.log(7 / 4))

    def test_conjunction(self):
        k = bound_constants(builtin_kb("conjunction"))
        assert k["a"] is None
        assert k["b"] == F(1, 4)
        assert k["C_thm2"] == pytest.approx(np.log(8))

    def test_swap(self):
        k = bound_constants(single([(0, 1), (1, 0)]))
        assert k["a"] == 1
        assert k["C_thm1"] == 0.0


class TestDiagnose:
    def test_verdicts(self):
        assert diagnose(builtin_kb("conjunction")).verdict == LEARNABLE
        assert diagnose(builtin_kb("conj_eq")).verdict == LEARNABLE
        assert diagnose(builtin_kb("conjunction").select(["conj0"])).verdict == INSUFFICIENT
        r = diagnose(builtin_kb("hed", 10))
        assert (r.verdict, r.rank, r.classes) == (INSUFFICIENT, 7, 12)

    def test_hed_base_ranks(self):
        ranks = [diagnose(builtin_kb("hed", b)).rank for b in range(2, 11)]
        assert ranks == [4, 5, 6, 7, 7, 7, 7, 7, 7]

    def test_json_exact(self):
        d = diagnose(builtin_kb("conj_eq")).to_json()
        assert d["matrix"][0] == [[2, 7], [2, 7], [3, 7]]
        assert d["a"] == [7, 4]
        assert d["kind"] == "LocationQ"

    def test_nonuniform_prior_uses_joint(self):
        r = diagnose(builtin_kb("conj_eq"), ClassPrior((F(1, 3), F(2, 3))))
        assert r.matrix.kind == "TargetLocationQtilde"

    def test_support_invariance(self):
        # rank depends on the support pattern only through the mass, but any
        # strictly positive prior must keep the binary conjunction learnable
        kb = builtin_kb("conjunction")
        for p in (F(1, 10), F(1, 3), F(9, 10)):
            assert diagnose(kb, ClassPrior((p, 1 - p))).full_row_rank
