"""Propositional knowledge bases: DSL parsing, grounding into candidate sets,
builtin task KBs and random DNF/CNF generation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

Label = int
LabelSeq = tuple[int, ...]

DEFAULT_BUDGET = 10**7
MAX_RANDOM_RETRIES = 100


class KBError(ValueError):
    """Raised for invalid knowledge bases (parse, validation or grounding)."""


class KBSyntaxError(KBError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# formulas


@dataclass(frozen=True)
class Lit:
    index: int
    positive: bool = True

    def evaluate(self, assignment: Sequence[int]) -> bool:
        return bool(assignment[self.index]) == self.positive

    def evaluate_all(self, table: np.ndarray) -> np.ndarray:
        col = table[:, self.index].astype(bool)
        return col if self.positive else ~col

    def max_index(self) -> int:
        return self.index


@dataclass(frozen=True)
class And:
    args: tuple["Formula", ...]

    def evaluate(self, assignment: Sequence[int]) -> bool:
        return all(a.evaluate(assignment) for a in self.args)

    def evaluate_all(self, table: np.ndarray) -> np.ndarray:
        out = np.ones(len(table), dtype=bool)
        for a in self.args:
            out &= a.evaluate_all(table)
        return out

    def max_index(self) -> int:
        return max(a.max_index() for a in self.args)


@dataclass(frozen=True)
class Or:
    args: tuple["Formula", ...]

    def evaluate(self, assignment: Sequence[int]) -> bool:
        return any(a.evaluate(assignment) for a in self.args)

    def evaluate_all(self, table: np.ndarray) -> np.ndarray:
        out = np.zeros(len(table), dtype=bool)
        for a in self.args:
            out |= a.evaluate_all(table)
        return out

    def max_index(self) -> int:
        return max(a.max_index() for a in self.args)


Formula = Union[Lit, And, Or]


def render_formula(f: Formula) -> str:
    if isinstance(f, Lit):
        return f"{'' if f.positive else '!'}y{f.index}"
    op = "&" if isinstance(f, And) else "|"
    parts = []
    for a in f.args:
        s = render_formula(a)
        parts.append(s if isinstance(a, Lit) else f"({s})")
    return op.join(parts)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class LabelAlphabet:
    num_classes: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise KBError(f"need at least 2 classes, got {self.num_classes}")
        if self.names is not None:
            if len(self.names) != self.num_classes:
                raise KBError(f"expected {self.num_classes} class names, got {len(self.names)}")
            if len(set(self.names)) != len(self.names):
                raise KBError("class names must be distinct")

    def name(self, label: int) -> str:
        return self.names[label] if self.names else str(label)


@dataclass(frozen=True)
class Facts:
    sequences: tuple[LabelSeq, ...]


@dataclass(frozen=True)
class Dnf:
    formula: Formula


@dataclass(frozen=True)
class Cnf:
    formula: Formula


@dataclass(frozen=True)
class Complement:
    of: str


@dataclass(frozen=True)
class Builtin:
    kind: str
    params: tuple[tuple[str, int], ...] = ()

    def param(self, key: str) -> int:
        for k, v in self.params:
            if k == key:
                return v
        raise KBError(f"builtin {self.kind!r} requires parameter {key!r}")


Definition = Union[Facts, Dnf, Cnf, Complement, Builtin]


@dataclass(frozen=True)
class Concept:
    id: str
    arity: int
    definition: Definition


@dataclass(frozen=True)
class CandidateSet:
    concept_id: str
    arity: int
    sequences: tuple[LabelSeq, ...]

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[LabelSeq]:
        return iter(self.sequences)

    def __contains__(self, seq) -> bool:
        return tuple(seq) in self._members

    @property
    def _members(self) -> frozenset:
        # cached lazily; frozen dataclass so go through object.__setattr__
        try:
            return self.__dict__["_member_cache"]
        except KeyError:
            s = frozenset(self.sequences)
            object.__setattr__(self, "_member_cache", s)
            return s

    def as_array(self) -> np.ndarray:
        return np.array(self.sequences, dtype=np.int64).reshape(len(self.sequences), self.arity)


@dataclass(frozen=True)
class KnowledgeBase:
    alphabet: LabelAlphabet
    concepts: tuple[Concept, ...]
    grounded: tuple[CandidateSet, ...] | None = field(default=None, compare=False)
    name: str = field(default="kb", compare=False)

    def __post_init__(self):
        ids = [c.id for c in self.concepts]
        if len(set(ids)) != len(ids):
            raise KBError("concept ids must be unique")
        if not self.concepts:
            raise KBError("knowledge base has no concepts")

    @property
    def num_classes(self) -> int:
        return self.alphabet.num_classes

    @property
    def concept_ids(self) -> list[str]:
        return [c.id for c in self.concepts]

    @property
    def arities(self) -> list[int]:
        return [c.arity for c in self.concepts]

    @property
    def is_grounded(self) -> bool:
        return self.grounded is not None

    def concept(self, cid: str) -> Concept:
        for c in self.concepts:
            if c.id == cid:
                return c
        raise KBError(f"unknown concept {cid!r}")

    def index_of(self, cid: str) -> int:
        for i, c in enumerate(self.concepts):
            if c.id == cid:
                return i
        raise KBError(f"unknown concept {cid!r}")

    def candidates(self, cid: str) -> CandidateSet:
        if self.grounded is None:
            raise KBError("knowledge base is not grounded")
        return self.grounded[self.index_of(cid)]

    def select(self, ids: Sequence[str]) -> "KnowledgeBase":
        """Sub-KB restricted to ``ids`` (grounding kept if present)."""
        idx = [self.index_of(i) for i in ids]
        concepts = tuple(self.concepts[i] for i in idx)
        for c in concepts:
            if isinstance(c.definition, Complement) and c.definition.of not in ids:
                if self.grounded is None:
                    raise KBError(f"concept {c.id!r} depends on dropped concept {c.definition.of!r}")
                concepts = tuple(
                    Concept(x.id, x.arity, Facts(self.candidates(x.id).sequences)) if x is c else x
                    for x in concepts
                )
        grounded = None if self.grounded is None else tuple(self.grounded[i] for i in idx)
        return KnowledgeBase(self.alphabet, concepts, grounded, name=self.name + ":" + "+".join(ids))


# ---------------------------------------------------------------------------
# DSL tokenizer/parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<int>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[\[\]{}(),:=&|!])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    value: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise KBSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "newline":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.alphabet: LabelAlphabet | None = None

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise KBSyntaxError(msg, tok.line, tok.col)

    def advance(self) -> _Tok:
        t = self.tok
        self.i += 1
        return t

    def expect(self, kind: str, value: str | None = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (value is not None and t.value != value):
            want = repr(value) if value is not None else kind
            got = repr(t.value) if t.kind != "eof" else "end of input"
            self.error(f"expected {want}, got {got}")
        return self.advance()

    def at(self, kind: str, value: str | None = None) -> bool:
        return self.tok.kind == kind and (value is None or self.tok.value == value)

    def integer(self) -> int:
        return int(self.expect("int").value)

    def parse(self) -> KnowledgeBase:
        self.expect("ident", "classes")
        c_tok = self.tok
        c = self.integer()
        names = None
        if self.at("ident", "names"):
            self.advance()
            names = []
            while self.at("string"):
                names.append(json.loads(self.advance().value))
            if not names:
                self.error("expected at least one class name")
        try:
            self.alphabet = LabelAlphabet(c, tuple(names) if names else None)
        except KBError as e:
            self.error(str(e), c_tok)
        concepts = []
        while not self.at("eof"):
            concepts.append(self.concept())
        if not concepts:
            self.error("expected at least one concept")
        ids = {c.id for c in concepts}
        by_id = {c.id: c for c in concepts}
        for cpt in concepts:
            if isinstance(cpt.definition, Complement):
                ref = cpt.definition.of
                if ref not in ids:
                    raise KBError(f"concept {cpt.id!r}: complement of unknown concept {ref!r}")
                if by_id[ref].arity != cpt.arity:
                    raise KBError(f"concept {cpt.id!r}: complement of {ref!r} with different arity")
        try:
            return KnowledgeBase(self.alphabet, tuple(concepts))
        except KBError as e:
            raise KBSyntaxError(str(e), 1, 1) from None

    def concept(self) -> Concept:
        self.expect("ident", "concept")
        cid = self.expect("ident").value
        self.expect("ident", "arity")
        ar_tok = self.tok
        arity = self.integer()
        if arity < 1:
            self.error("arity must be positive", ar_tok)
        self.expect("punct", "{")
        head = self.expect("ident")
        self.expect("punct", ":")
        kind = head.value
        if kind == "facts":
            seqs = []
            while self.at("punct", "["):
                seqs.append(self.sequence(arity))
            if not seqs:
                self.error("expected at least one fact")
            definition: Definition = Facts(tuple(seqs))
        elif kind in ("dnf", "cnf"):
            f = self.formula()
            if f.max_index() >= arity:
                self.error(f"variable y{f.max_index()} out of range for arity {arity}", head)
            definition = Dnf(f) if kind == "dnf" else Cnf(f)
        elif kind == "complement":
            definition = Complement(self.expect("ident").value)
        elif kind == "builtin":
            bkind = self.expect("ident").value
            params = []
            while self.at("ident"):
                key = self.advance().value
                self.expect("punct", "=")
                params.append((key, self.integer()))
            definition = Builtin(bkind, tuple(params))
        else:
            self.error(f"unknown concept body {kind!r}", head)
        self.expect("punct", "}")
        return Concept(cid, arity, definition)

    def label(self) -> int:
        c = self.alphabet.num_classes
        t = self.tok
        if t.kind == "int":
            v = int(self.advance().value)
            if not 0 <= v < c:
                self.error(f"label {v} out of range", t)
            return v
        if t.kind == "string":
            name = json.loads(self.advance().value)
            names = self.alphabet.names or ()
            if name not in names:
                self.error(f"unknown class name {name!r}", t)
            return names.index(name)
        self.error("expected a label")

    def sequence(self, arity: int) -> LabelSeq:
        open_tok = self.expect("punct", "[")
        seq = [self.label()]
        while self.at("punct", ","):
            self.advance()
            seq.append(self.label())
        self.expect("punct", "]")
        if len(seq) != arity:
            self.error(f"fact has length {len(seq)}, expected arity {arity}", open_tok)
        return tuple(seq)

    # formula := conj ('|' conj)* ; conj := atom ('&' atom)* ; atom := lit | '(' formula ')'
    def formula(self) -> Formula:
        args = [self.conj()]
        while self.at("punct", "|"):
            self.advance()
            args.append(self.conj())
        return args[0] if len(args) == 1 else Or(tuple(_flatten(Or, args)))

    def conj(self) -> Formula:
        args = [self.atom()]
        while self.at("punct", "&"):
            self.advance()
            args.append(self.atom())
        return args[0] if len(args) == 1 else And(tuple(_flatten(And, args)))

    def atom(self) -> Formula:
        if self.at("punct", "("):
            self.advance()
            f = self.formula()
            self.expect("punct", ")")
            return f
        positive = True
        if self.at("punct", "!"):
            self.advance()
            positive = False
        t = self.expect("ident")
        m = re.fullmatch(r"y(\d+)", t.value)
        if m is None:
            self.error(f"expected variable y<k>, got {t.value!r}", t)
        return Lit(int(m.group(1)), positive)


def _flatten(op, args):
    for a in args:
        if isinstance(a, op):
            yield from a.args
        else:
            yield a


def parse_kb(text: str, name: str = "kb") -> KnowledgeBase:
    """Parse KB DSL text into an ungrounded :class:`KnowledgeBase`."""
    kb = _Parser(text).parse()
    return KnowledgeBase(kb.alphabet, kb.concepts, name=name)


def render_kb(kb: KnowledgeBase) -> str:
    a = kb.alphabet
    lines = [f"classes {a.num_classes}" + ("" if a.names is None else " names " + " ".join(json.dumps(n) for n in a.names))]
    for c in kb.concepts:
        d = c.definition
        if isinstance(d, Facts):
            body = "facts: " + " ".join("[" + ",".join(map(str, s)) + "]" for s in d.sequences)
        elif isinstance(d, Dnf):
            body = "dnf: " + render_formula(d.formula)
        elif isinstance(d, Cnf):
            body = "cnf: " + render_formula(d.formula)
        elif isinstance(d, Complement):
            body = "complement: " + d.of
        else:
            body = "builtin: " + " ".join([d.kind] + [f"{k}={v}" for k, v in d.params])
        lines.append(f"concept {c.id} arity {c.arity} {{ {body} }}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# grounding


def all_sequences(c: int, m: int) -> np.ndarray:
    """Every sequence in [c]^m as rows, in lexicographic order."""
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((c,) * m).reshape(m, -1).T
    return grids.astype(np.int64)


def _numerals(base: int, length: int) -> range:
    if length == 1:
        return range(base)
    return range(base ** (length - 1), base**length)


def _digits(value: int, base: int) -> list[int]:
    if value == 0:
        return [0]
    out = []
    while value:
        value, r = divmod(value, base)
        out.append(r)
    return out[::-1]


def hed_equations(base: int, length: int) -> list[LabelSeq]:
    """All true equations ``A + B = C`` spelled in exactly ``length`` tokens.

    Numerals are canonical: no leading zeros except the single digit 0.
    Class ``base`` is the plus sign and ``base + 1`` the equals sign.
    """
    plus, eq = base, base + 1
    out = []
    for la in range(1, length - 3):
        for lb in range(1, length - 2 - la):
            lc = length - 2 - la - lb
            if lc < 1:
                continue
            for a in _numerals(base, la):
                for b in _numerals(base, lb):
                    cd = _digits(a + b, base)
                    if len(cd) == lc:
                        out.append(tuple(_digits(a, base) + [plus] + _digits(b, base) + [eq] + cd))
    return sorted(out)


def _ground_builtin(d: Builtin, c: int, arity: int) -> list[LabelSeq]:
    if d.kind == "hed":
        base = d.param("base")
        if c != base + 2:
            raise KBError(f"builtin hed base={base} needs {base + 2} classes, KB has {c}")
        return hed_equations(base, arity)
    if d.kind == "sum":
        base, value = d.param("base"), d.param("value")
        if arity != 2 or c != base:
            raise KBError("builtin sum needs arity 2 and classes == base")
        return [(i, value - i) for i in range(base) if 0 <= value - i < base]
    raise KBError(f"unknown builtin {d.kind!r}")


def ground(kb: KnowledgeBase, budget: int = DEFAULT_BUDGET) -> KnowledgeBase:
    """Return ``kb`` with every concept's candidate set enumerated."""
    if kb.grounded is not None:
        return kb
    c = kb.num_classes
    result: dict[str, list[LabelSeq]] = {}
    spent = 0

    def visit(cpt: Concept, stack: tuple[str, ...]) -> list[LabelSeq]:
        nonlocal spent
        if cpt.id in result:
            return result[cpt.id]
        d = cpt.definition
        if isinstance(d, Facts):
            for s in d.sequences:
                if len(s) != cpt.arity or any(not 0 <= v < c for v in s):
                    raise KBError(f"concept {cpt.id!r}: invalid fact {list(s)}")
            seqs = sorted(set(d.sequences))
        elif isinstance(d, (Dnf, Cnf)):
            if c != 2:
                raise KBError(f"concept {cpt.id!r}: formula concepts need 2 classes, KB has {c}")
            spent += c**cpt.arity
            if spent > budget:
                raise KBError(f"enumeration budget {budget} exceeded at concept {cpt.id!r}")
            table = all_sequences(c, cpt.arity)
            mask = d.formula.evaluate_all(table)
            seqs = [tuple(int(v) for v in row) for row in table[mask]]
        elif isinstance(d, Complement):
            if d.of in stack:
                raise KBError(f"cyclic complement through {cpt.id!r}")
            base = kb.concept(d.of)
            if base.arity != cpt.arity:
                raise KBError(f"concept {cpt.id!r}: complement of {d.of!r} with different arity")
            inner = set(visit(base, stack + (cpt.id,)))
            spent += c**cpt.arity
            if spent > budget:
                raise KBError(f"enumeration budget {budget} exceeded at concept {cpt.id!r}")
            seqs = [tuple(int(v) for v in row) for row in all_sequences(c, cpt.arity) if tuple(row) not in inner]
        else:
            seqs = _ground_builtin(d, c, cpt.arity)
        if not seqs:
            raise KBError(f"concept {cpt.id!r} has an empty candidate set")
        result[cpt.id] = seqs
        return seqs

    for cpt in kb.concepts:
        visit(cpt, ())

    grounded = tuple(CandidateSet(cp.id, cp.arity, tuple(result[cp.id])) for cp in kb.concepts)
    seen: dict[LabelSeq, str] = {}
    for cs in grounded:
        for s in cs.sequences:
            if s in seen:
                raise KBError(f"concepts {seen[s]!r} and {cs.concept_id!r} overlap on {list(s)}")
            seen[s] = cs.concept_id
    return KnowledgeBase(kb.alphabet, kb.concepts, grounded, name=kb.name)


# ---------------------------------------------------------------------------
# builtin KBs

_SMALL = (
    "zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
    "fifteen sixteen seventeen eighteen nineteen twenty"
).split()


def number_word(n: int) -> str:
    if n < len(_SMALL):
        return _SMALL[n]
    tens, rest = divmod(n, 10)
    word = {2: "twenty", 3: "thirty"}[tens]
    return word if rest == 0 else f"{word}_{_SMALL[rest]}"


BUILTINS = ("conj_eq", "conjunction", "addition", "hed")


def builtin_kb(kind: str, base: int = 10) -> KnowledgeBase:
    """Ground one of the benchmark KBs: conj_eq, conjunction, addition or hed."""
    kind = kind.lower().replace("-", "_")
    if kind in ("conj_eq", "conjeq"):
        facts = Facts(((0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 1)))
        kb = KnowledgeBase(LabelAlphabet(2), (Concept("conj", 3, facts),), name="conj_eq")
    elif kind == "conjunction":
        kb = KnowledgeBase(
            LabelAlphabet(2),
            (
                Concept("conj0", 2, Facts(((0, 0), (0, 1), (1, 0)))),
                Concept("conj1", 2, Facts(((1, 1),))),
            ),
            name="conjunction",
        )
    elif kind in ("addition", "hed"):
        if not 2 <= base <= 16:
            raise KBError(f"base must be in [2, 16], got {base}")
        if kind == "addition":
            concepts = tuple(
                Concept(
                    number_word(s),
                    2,
                    Facts(tuple((i, s - i) for i in range(base) if 0 <= s - i < base)),
                )
                for s in range(2 * base - 1)
            )
            kb = KnowledgeBase(LabelAlphabet(base), concepts, name=f"addition{base}")
        else:
            names = tuple("0123456789abcdef"[:base]) + ("+", "=")
            concepts = tuple(
                Concept(f"equation{n}", n, Builtin("hed", (("base", base),))) for n in (5, 6, 7)
            )
            kb = KnowledgeBase(LabelAlphabet(base + 2, names), concepts, name=f"hed{base}")
    else:
        raise KBError(f"unknown builtin {kind!r}; choose from {', '.join(BUILTINS)}")
    return ground(kb)


def random_kb(form: str, arity: int, seed: int) -> KnowledgeBase:
    """Random binary KB: concept ``positive`` is a random full-width DNF (or
    CNF) formula, ``negative`` its complement."""
    form = form.lower()
    if form not in ("dnf", "cnf"):
        raise KBError(f"form must be dnf or cnf, got {form!r}")
    if not 2 <= arity <= 20:
        raise KBError(f"arity must be in [2, 20], got {arity}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RANDOM_RETRIES):
        k = int(rng.integers(1, 2 ** (arity - 1) + 1))
        pol = rng.integers(0, 2, size=(k, arity))
        clauses = list(dict.fromkeys(tuple(int(v) for v in row) for row in pol))
        if form == "dnf":
            f = Or(tuple(And(tuple(Lit(i, bool(p)) for i, p in enumerate(cl))) for cl in clauses))
            definition: Definition = Dnf(_simplify(f))
        else:
            f = And(tuple(Or(tuple(Lit(i, bool(p)) for i, p in enumerate(cl))) for cl in clauses))
            definition = Cnf(_simplify(f))
        kb = KnowledgeBase(
            LabelAlphabet(2),
            (Concept("positive", arity, definition), Concept("negative", arity, Complement("positive"))),
            name=f"{form}{arity}-{seed}",
        )
        try:
            return ground(kb)
        except KBError as e:
            if "empty candidate set" not in str(e):
                raise
    raise KBError(f"no satisfiable, non-tautological {form} formula after {MAX_RANDOM_RETRIES} retries")


def _simplify(f: Formula) -> Formula:
    # single-clause / single-literal forms must match what the parser produces
    if isinstance(f, Lit):
        return f
    args = tuple(_simplify(a) for a in f.args)
    args = tuple(_flatten(type(f), args))
    return args[0] if len(args) == 1 else type(f)(args)


# ---------------------------------------------------------------------------
# export


def kb_to_json(kb: KnowledgeBase) -> dict:
    kb = ground(kb)
    names = list(kb.alphabet.names) if kb.alphabet.names else [str(i) for i in range(kb.num_classes)]
    return {
        "classes": kb.num_classes,
        "names": names,
        "concepts": [
            {"id": cs.concept_id, "arity": cs.arity, "candidates": [list(s) for s in cs.sequences]}
            for cs in kb.grounded
        ],
    }
