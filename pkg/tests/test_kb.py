import itertools

import pytest
from hypothesis import given, settings, strategies as st

from abl_rank.kb import (
    And,
    Complement,
    Concept,
    Facts,
    KBError,
    KBSyntaxError,
    KnowledgeBase,
    LabelAlphabet,
    Lit,
    Or,
    all_sequences,
    builtin_kb,
    ground,
    hed_equations,
    kb_to_json,
    parse_kb,
    random_kb,
    render_kb,
)

CONJ_EQ_TEXT = "classes 2\nconcept conj arity 3 { facts: [0,0,0] [0,1,0] [1,0,0] [1,1,1] }"

HED2_FACTS = """\
equation5 0+0=0
equation5 0+1=1
equation5 1+0=1
equation6 1+1=10
equation7 0+10=10
equation7 0+11=11
equation7 10+0=10
equation7 10+1=11
equation7 11+0=11
equation7 1+10=11
"""


def _truth_table(formula, m):
    """Independent oracle: scalar evaluation over every assignment."""
    return sorted(seq for seq in itertools.product((0, 1), repeat=m) if formula.evaluate(seq))


class TestParse:
    def test_conj_eq(self):
        kb = ground(parse_kb(CONJ_EQ_TEXT))
        assert kb.concept_ids == ["conj"]
        assert len(kb.candidates("conj")) == 4

    def test_complete_unary(self):
        kb = ground(parse_kb("classes 2\nconcept all arity 1 { facts: [0] [1] }"))
        assert kb.candidates("all").sequences == ((0,), (1,))

    def test_label_out_of_range(self):
        with pytest.raises(KBSyntaxError, match="label 2 out of range") as e:
            parse_kb("classes 2\nconcept c arity 3 { facts: [0,2,0] }")
        assert e.value.line == 2

    def test_fact_length(self):
        with pytest.raises(KBSyntaxError, match="length 2"):
            parse_kb("classes 2\nconcept c arity 3 { facts: [0,1] }")

    def test_named_labels(self):
        kb = parse_kb('classes 3 names "a" "b" "c"\nconcept t arity 2 { facts: ["a","c"] [1,1] }')
        assert ground(kb).candidates("t").sequences == ((0, 2), (1, 1))

    def test_unknown_name(self):
        with pytest.raises(KBSyntaxError, match="unknown class name"):
            parse_kb('classes 2 names "a" "b"\nconcept t arity 1 { facts: ["z"] }')

    def test_comments_and_whitespace(self):
        text = "# header\nclasses 2 # two\n\nconcept c arity 1 {\n  facts: [1] # only one\n}\n"
        assert ground(parse_kb(text)).candidates("c").sequences == ((1,),)

    def test_dangling_complement(self):
        with pytest.raises(KBError, match="unknown concept"):
            parse_kb("classes 2\nconcept n arity 2 { complement: p }")

    def test_variable_out_of_range(self):
        with pytest.raises(KBSyntaxError, match="y3 out of range"):
            parse_kb("classes 2\nconcept c arity 2 { dnf: y3 }")

    def test_no_concepts(self):
        with pytest.raises(KBSyntaxError):
            parse_kb("classes 2\n")

    def test_syntax_position(self):
        with pytest.raises(KBSyntaxError) as e:
            parse_kb("classes 2\nconcept c arity 2 {\n  facts [0,1] }")
        assert (e.value.line, e.value.col) == (3, 9)


class TestGround:
    def test_dnf_conj_eq(self):
        text = "classes 2\nconcept conj arity 3 { dnf: (y0&y1&y2)|(y0&!y1&!y2)|(!y0&y1&!y2)|(!y0&!y1&!y2) }"
        kb = ground(parse_kb(text))
        assert kb.candidates("conj").sequences == ((0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 1))

    def test_cnf_truth_table(self):
        text = "classes 2\nconcept c arity 3 { cnf: (!y0|!y1|!y2)&(!y0|y1|!y2) }"
        kb = parse_kb(text)
        got = list(ground(kb).candidates("c").sequences)
        oracle = _truth_table(kb.concepts[0].definition.formula, 3)
        assert got == oracle
        assert len(got) == 6

    def test_complement_of_complete_set(self):
        text = "classes 2\nconcept p arity 2 { facts: [0,0] [0,1] [1,0] [1,1] }\nconcept n arity 2 { complement: p }"
        with pytest.raises(KBError, match="empty candidate set"):
            ground(parse_kb(text))

    def test_complement_partition(self):
        text = "classes 2\nconcept p arity 2 { dnf: y0 }\nconcept n arity 2 { complement: p }"
        kb = ground(parse_kb(text))
        union = set(kb.candidates("p").sequences) | set(kb.candidates("n").sequences)
        assert union == set(itertools.product((0, 1), repeat=2))

    def test_overlap_rejected(self):
        kb = KnowledgeBase(
            LabelAlphabet(2),
            (Concept("a", 1, Facts(((0,),))), Concept("b", 1, Facts(((0,), (1,))))),
        )
        with pytest.raises(KBError, match="overlap"):
            ground(kb)

    def test_formula_needs_binary(self):
        with pytest.raises(KBError, match="2 classes"):
            ground(parse_kb("classes 3\nconcept c arity 1 { dnf: y0 }"))

    def test_budget(self):
        with pytest.raises(KBError, match="budget"):
            ground(parse_kb("classes 2\nconcept c arity 12 { dnf: y0 }"), budget=1000)

    def test_all_sequences_lexicographic(self):
        t = all_sequences(3, 2)
        assert [tuple(r) for r in t] == list(itertools.product(range(3), repeat=2))


class TestBuiltins:
    def test_conjunction(self):
        kb = builtin_kb("conjunction")
        assert kb.candidates("conj0").sequences == ((0, 0), (0, 1), (1, 0))
        assert kb.candidates("conj1").sequences == ((1, 1),)

    def test_hed2_golden(self):
        kb = builtin_kb("hed", 2)
        names = kb.alphabet.names
        expected = {}
        for line in HED2_FACTS.splitlines():
            cid, text = line.split()
            expected.setdefault(cid, []).append(tuple(names.index(ch) for ch in text))
        for cid, seqs in expected.items():
            assert set(kb.candidates(cid).sequences) == set(seqs)
        assert [len(kb.candidates(c)) for c in kb.concept_ids] == [3, 1, 6]

    def test_addition_golden(self):
        kb = builtin_kb("addition", 10)
        assert len(kb.concepts) == 19
        assert sum(len(cs) for cs in kb.grounded) == 100
        assert kb.candidates("zero").sequences == ((0, 0),)
        assert kb.candidates("one").sequences == ((0, 1), (1, 0))
        assert kb.candidates("seventeen").sequences == ((8, 9), (9, 8))
        assert kb.candidates("eighteen").sequences == ((9, 9),)

    def test_hed10_sizes(self):
        kb = builtin_kb("hed", 10)
        assert [len(kb.candidates(c)) for c in kb.concept_ids] == [55, 45, 1710]

    @pytest.mark.parametrize("base", [2, 3, 7, 10])
    def test_hed_equations_are_true_sums(self, base):
        digits = "0123456789abcdef"[:base]
        for n in (5, 6, 7):
            for seq in hed_equations(base, n):
                text = "".join((digits + "+=")[v] for v in seq)
                lhs, rhs = text.split("=")
                a, b = lhs.split("+")
                for num in (a, b, rhs):
                    assert num == "0" or not num.startswith("0")
                assert int(a, base) + int(b, base) == int(rhs, base)

    def test_bad_base(self):
        with pytest.raises(KBError):
            builtin_kb("hed", 17)

    def test_unknown(self):
        with pytest.raises(KBError, match="unknown builtin"):
            builtin_kb("parity")


class TestRandomKB:
    @pytest.mark.parametrize("form", ["dnf", "cnf"])
    @pytest.mark.parametrize("seed", range(10))
    def test_sizes(self, form, seed):
        kb = random_kb(form, 3, seed)
        n = len(kb.candidates("positive"))
        assert 1 <= n <= 7
        assert n + len(kb.candidates("negative")) == 8

    @pytest.mark.parametrize("seed", range(10))
    def test_dnf_size_is_distinct_clauses(self, seed):
        kb = random_kb("dnf", 4, seed)
        f = kb.concepts[0].definition.formula
        clauses = f.args if isinstance(f, Or) else (f,)
        assert all(isinstance(c, And) and len(c.args) == 4 for c in clauses)
        assert len(kb.candidates("positive")) == len(set(clauses))

    def test_three_clause_seed(self):
        # seed 5 draws three distinct full-width clauses at m = 3
        kb = random_kb("dnf", 3, 5)
        f = kb.concepts[0].definition.formula
        assert isinstance(f, Or) and len(f.args) == 3
        assert len(kb.candidates("positive")) == 3
        assert kb.candidates("positive").sequences == ((0, 1, 0), (0, 1, 1), (1, 0, 1))

    def test_deterministic(self):
        assert render_kb(random_kb("cnf", 5, 11)) == render_kb(random_kb("cnf", 5, 11))

    def test_truth_table_oracle(self):
        for seed in range(20):
            kb = random_kb("cnf", 4, seed)
            f = kb.concepts[0].definition.formula
            assert list(kb.candidates("positive").sequences) == _truth_table(f, 4)


class TestRender:
    def test_conjunction_text(self):
        assert "concept conj0 arity 2" in render_kb(builtin_kb("conjunction"))

    @pytest.mark.parametrize(
        "kb",
        [builtin_kb("conj_eq"), builtin_kb("conjunction"), random_kb("dnf", 4, 7), builtin_kb("hed", 3)],
        ids=["conj_eq", "conjunction", "dnf4-7", "hed3"],
    )
    def test_round_trip(self, kb):
        back = ground(parse_kb(render_kb(kb)))
        assert back.alphabet == kb.alphabet
        assert back.concepts == kb.concepts
        assert back.grounded == kb.grounded

    def test_json(self):
        d = kb_to_json(builtin_kb("conjunction"))
        assert d["concepts"][1] == {"id": "conj1", "arity": 2, "candidates": [[1, 1]]}


lits = st.builds(Lit, st.integers(0, 3), st.booleans())
formulas = st.recursive(
    lits,
    lambda sub: st.one_of(
        st.lists(sub, min_size=2, max_size=3).map(lambda a: And(tuple(a))),
        st.lists(sub, min_size=2, max_size=3).map(lambda a: Or(tuple(a))),
    ),
    max_leaves=8,
)


class TestFormulaProperties:
    @given(formulas)
    @settings(max_examples=200, deadline=None)
    def test_vectorised_matches_scalar(self, f):
        table = all_sequences(2, 4)
        fast = f.evaluate_all(table)
        slow = [f.evaluate(tuple(row)) for row in table]
        assert list(fast) == slow

    @given(formulas)
    @settings(max_examples=200, deadline=None)
    def test_render_parse_preserves_semantics(self, f):
        from abl_rank.kb import Dnf

        kb = KnowledgeBase(LabelAlphabet(2), (Concept("c", 4, Dnf(f)),))
        text = render_kb(kb)
        back = parse_kb(text).concepts[0].definition.formula
        assert _truth_table(back, 4) == _truth_table(f, 4)
