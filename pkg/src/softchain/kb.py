"""Knowledge bases: ground facts, rule templates, textual mentions.

A KB owns the symbol vocabularies (predicates, entities, tokens, rule
slots, mention patterns), the parsed clauses, and the structural
partitioning used by the prover. Parsing is pure; a parsed KB is never
mutated by the prover or trainer, so it can be shared freely.

File formats:
  * triples: UTF-8 TSV ``subject \\t predicate \\t object``, ``#`` comment
    lines ignored. A predicate field containing both ``[arg1]`` and
    ``[arg2]`` is treated as a textual mention pattern; its tokens are
    whitespace-split and lowercased, placeholders kept.
  * rule templates: one per line, ``#1(X,Y) :- #2(X,Z), #3(Z,Y)``,
    optionally prefixed with an integer multiplicity. ``#i`` denotes a
    trainable predicate slot; arguments must be variables (capitalised).
  * mention templates: TSV ``predicate \\t surface form`` where the
    surface form contains ``[arg1]`` and ``[arg2]``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

# Symbol kinds. Each kind has its own dense, zero-based id space and is
# resolved against its own embedding table.
PRED = "predicate"
ENT = "entity"
TOK = "token"
SLOT = "slot"
PATTERN = "pattern"

KINDS = (PRED, ENT, TOK, SLOT, PATTERN)

ARG1 = "[arg1]"
ARG2 = "[arg2]"


class Sym(NamedTuple):
    """A grounded symbol: an index into the embedding table of its kind."""

    kind: str
    id: int


class Var:
    """A logic variable. Identity-based: two Var objects are distinct
    variables even if they share a display name."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return f"Var({self.name})"


Term = object  # Sym | Var


@dataclass(frozen=True, slots=True)
class Atom:
    """Binary atom: predicate reference plus exactly two arguments."""

    pred: Sym
    args: tuple

    def __post_init__(self) -> None:
        if len(self.args) != 2:
            raise ValueError(f"atoms are binary, got {len(self.args)} arguments")

    def is_ground(self) -> bool:
        return not isinstance(self.args[0], Var) and not isinstance(self.args[1], Var)


@dataclass(slots=True)
class Clause:
    """Head plus body. Facts are clauses with an empty body."""

    head: Atom
    body: tuple = ()
    origin: str = "kb-fact"  # kb-fact | mention | template-instance
    cid: int = -1

    @property
    def is_fact(self) -> bool:
        return len(self.body) == 0


@dataclass(frozen=True, slots=True)
class MentionPattern:
    """Token sequence of a textual surface pattern, placeholders included."""

    pid: int
    tokens: tuple  # token Syms, in surface order


class ParseError(ValueError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class Vocab:
    """Per-kind interning of symbol names to dense ids."""

    def __init__(self) -> None:
        self._names = {kind: [] for kind in KINDS}
        self._ids = {kind: {} for kind in KINDS}

    def intern(self, kind: str, name: str) -> Sym:
        ids = self._ids[kind]
        got = ids.get(name)
        if got is None:
            got = len(self._names[kind])
            ids[name] = got
            self._names[kind].append(name)
        return Sym(kind, got)

    def lookup(self, kind: str, name: str) -> Optional[Sym]:
        got = self._ids[kind].get(name)
        return None if got is None else Sym(kind, got)

    def name(self, sym: Sym) -> str:
        return self._names[sym.kind][sym.id]

    def size(self, kind: str) -> int:
        return len(self._names[kind])

    def names(self, kind: str) -> list:
        return list(self._names[kind])

    def signature(self) -> tuple:
        return tuple((kind, tuple(self._names[kind])) for kind in KINDS)


def _is_mention_field(pred_field: str) -> bool:
    return ARG1 in pred_field and ARG2 in pred_field


@dataclass
class Partitioning:
    """Clauses grouped by structural signature.

    All ground facts form one group; rules share a group iff they have
    the same body length, the same variable wiring (canonical renaming in
    first-occurrence order), and trainable slots in the same positions.
    """

    groups: dict = field(default_factory=dict)

    @property
    def fact_group(self) -> list:
        return self.groups.get(("facts",), [])

    def rule_groups(self) -> list:
        return [(sig, cls) for sig, cls in self.groups.items() if sig != ("facts",)]

    def total(self) -> int:
        return sum(len(cls) for cls in self.groups.values())


def clause_signature(clause: Clause) -> tuple:
    """Structural signature of a clause, invariant under variable renaming."""
    if clause.is_fact:
        return ("facts",)
    order: dict = {}

    def vmark(term) -> tuple:
        if isinstance(term, Var):
            if term not in order:
                order[term] = len(order)
            return ("v", order[term])
        return ("c",)

    sig = []
    for atom in (clause.head, *clause.body):
        pred_mark = "slot" if atom.pred.kind == SLOT else "const"
        sig.append((pred_mark, vmark(atom.args[0]), vmark(atom.args[1])))
    return tuple(sig)


def partition_kb(clauses: Sequence[Clause]) -> Partitioning:
    groups: dict = {}
    for clause in clauses:
        groups.setdefault(clause_signature(clause), []).append(clause)
    return Partitioning(groups)


class KB:
    """Parsed knowledge base: facts, rules, vocabularies, patterns."""

    def __init__(self, vocab: Optional[Vocab] = None):
        self.vocab = vocab if vocab is not None else Vocab()
        self.facts: list = []
        self.rules: list = []
        self.patterns: list = []  # MentionPattern by pid
        self._pattern_ids: dict = {}  # token names tuple -> pid
        self._fact_keys: set = set()
        self._partitioning: Optional[Partitioning] = None

    # ------------------------------------------------------------------
    # construction

    def _next_cid(self) -> int:
        return len(self.facts) + len(self.rules)

    def add_fact(self, pred: Sym, subj: Sym, obj: Sym, origin: str = "kb-fact") -> Clause:
        clause = Clause(Atom(pred, (subj, obj)), (), origin, cid=self._next_cid())
        self.facts.append(clause)
        self._fact_keys.add((pred, subj, obj))
        self._partitioning = None
        return clause

    def add_rule(self, head: Atom, body: tuple, origin: str = "template-instance") -> Clause:
        clause = Clause(head, body, origin, cid=self._next_cid())
        self.rules.append(clause)
        self._partitioning = None
        return clause

    def intern_pattern(self, token_names: Sequence[str]) -> Sym:
        """Return the pattern symbol for a token sequence, creating it
        (and interning its tokens) on first sight."""
        key = tuple(token_names)
        if key.count(ARG1) != 1 or key.count(ARG2) != 1:
            raise ParseError(
                f"mention pattern must contain exactly one {ARG1} and one {ARG2}: "
                f"{' '.join(token_names)}"
            )
        pid = self._pattern_ids.get(key)
        if pid is None:
            toks = tuple(self.vocab.intern(TOK, t) for t in token_names)
            pid = len(self.patterns)
            self._pattern_ids[key] = pid
            self.patterns.append(MentionPattern(pid, toks))
        return Sym(PATTERN, pid)

    def pattern_tokens(self, pid: int) -> tuple:
        return self.patterns[pid].tokens

    def pattern_surface(self, pid: int) -> str:
        return " ".join(self.vocab.name(t) for t in self.patterns[pid].tokens)

    # ------------------------------------------------------------------
    # queries

    def has_fact(self, pred: Sym, subj: Sym, obj: Sym) -> bool:
        return (pred, subj, obj) in self._fact_keys

    def clauses(self) -> list:
        return self.facts + self.rules

    def clause_by_id(self, cid: int) -> Clause:
        if cid < len(self.facts):
            return self.facts[cid]
        return self.rules[cid - len(self.facts)]

    def partitioning(self) -> Partitioning:
        if self._partitioning is None:
            self._partitioning = partition_kb(self.clauses())
        return self._partitioning

    def copy_structure(self) -> "KB":
        """Empty KB sharing nothing but carrying an identical vocabulary."""
        other = KB()
        for kind in KINDS:
            for name in self.vocab.names(kind):
                other.vocab.intern(kind, name)
        for pat in self.patterns:
            other.intern_pattern([self.vocab.name(t) for t in pat.tokens])
        return other

    # ------------------------------------------------------------------
    # rendering

    def term_str(self, term) -> str:
        if isinstance(term, Var):
            return term.name
        return self.vocab.name(term)

    def pred_str(self, pred: Sym) -> str:
        if pred.kind == PATTERN:
            return self.pattern_surface(pred.id)
        return self.vocab.name(pred)

    def atom_str(self, atom: Atom) -> str:
        a, b = (self.term_str(t) for t in atom.args)
        if atom.pred.kind == PATTERN:
            surface = self.pattern_surface(atom.pred.id)
            return f'"{surface.replace(ARG1, a).replace(ARG2, b)}"({a}, {b})'
        return f"{self.pred_str(atom.pred)}({a}, {b})"

    def clause_str(self, clause: Clause) -> str:
        if clause.is_fact:
            return self.atom_str(clause.head)
        body = ", ".join(self.atom_str(a) for a in clause.body)
        return f"{self.atom_str(clause.head)} :- {body}"

    def to_triples_text(self) -> str:
        lines = []
        for fact in self.facts:
            subj = self.vocab.name(fact.head.args[0])
            obj = self.vocab.name(fact.head.args[1])
            lines.append(f"{subj}\t{self.pred_str(fact.head.pred)}\t{obj}")
        return "\n".join(lines) + ("\n" if lines else "")


def parse_triples(text: str | Iterable[str], kb: Optional[KB] = None) -> list:
    """Parse TSV triples into ground facts, extending the KB's vocabularies.

    Returns the newly added clauses in line order. Raises
    :class:`ParseError` with the offending line number for malformed
    rows (field count != 3, or an empty field).
    """
    if kb is None:
        kb = KB()
    lines = text.splitlines() if isinstance(text, str) else text
    added = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", line_no)
        subj_s, pred_s, obj_s = (p.strip() for p in parts)
        if not subj_s or not pred_s or not obj_s:
            raise ParseError("empty field in triple", line_no)
        subj = kb.vocab.intern(ENT, subj_s)
        obj = kb.vocab.intern(ENT, obj_s)
        if _is_mention_field(pred_s):
            pred = kb.intern_pattern(pred_s.lower().split())
            added.append(kb.add_fact(pred, subj, obj, origin="mention"))
        else:
            pred = kb.vocab.intern(PRED, pred_s)
            added.append(kb.add_fact(pred, subj, obj, origin="kb-fact"))
    return added


_TEMPLATE_ATOM = re.compile(r"#(\d+)\s*\(\s*([^,()\s]+)\s*,\s*([^,()\s]+)\s*\)")
_VARIABLE = re.compile(r"^[A-Z][A-Za-z0-9_]*$")


def parse_rule_templates(text: str | Iterable[str], kb: Optional[KB] = None) -> list:
    """Parse rule-template lines into clauses with fresh trainable slots.

    A leading integer multiplicity ``m`` expands the line into ``m``
    independent copies with distinct slot ids. Within one copy, repeated
    ``#i`` markers share a slot.
    """
    if kb is None:
        kb = KB()
    lines = text.splitlines() if isinstance(text, str) else text
    added = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        mult = 1
        m = re.match(r"^(\d+)\s+(.*)$", line)
        if m:
            mult = int(m.group(1))
            line = m.group(2)
        if mult < 1:
            raise ParseError(f"multiplicity must be >= 1, got {mult}", line_no)
        if ":-" not in line:
            raise ParseError("template must contain ':-'", line_no)
        head_s, body_s = line.split(":-", 1)
        head_parts = _parse_template_atoms(head_s, line_no)
        body_parts = _parse_template_atoms(body_s, line_no)
        if len(head_parts) != 1:
            raise ParseError("template head must be a single atom", line_no)
        if not body_parts:
            raise ParseError("template body must contain at least one atom", line_no)
        for _ in range(mult):
            variables: dict = {}
            slots: dict = {}

            def build(marker: str, a1: str, a2: str) -> Atom:
                if marker not in slots:
                    slot_name = f"s{kb.vocab.size(SLOT)}"
                    slots[marker] = kb.vocab.intern(SLOT, slot_name)
                args = []
                for name in (a1, a2):
                    if name not in variables:
                        variables[name] = Var(name)
                    args.append(variables[name])
                return Atom(slots[marker], tuple(args))

            head = build(*head_parts[0])
            body = tuple(build(*p) for p in body_parts)
            added.append(kb.add_rule(head, body))
    return added


def _parse_template_atoms(text: str, line_no: int) -> list:
    atoms = []
    rest = text.strip()
    pos = 0
    for m in _TEMPLATE_ATOM.finditer(rest):
        between = rest[pos : m.start()].strip().strip(",").strip()
        if between:
            raise ParseError(f"unknown token {between!r} in template", line_no)
        marker, a1, a2 = m.group(1), m.group(2), m.group(3)
        for name in (a1, a2):
            if not _VARIABLE.match(name):
                raise ParseError(
                    f"template arguments must be variables, got {name!r}", line_no
                )
        atoms.append((marker, a1, a2))
        pos = m.end()
    trailing = rest[pos:].strip().strip(",").strip()
    if trailing:
        raise ParseError(f"unknown token {trailing!r} in template", line_no)
    return atoms


def parse_mention_templates(text: str | Iterable[str]) -> dict:
    """Parse ``predicate \\t surface form`` lines into a mapping from
    predicate name to the list of surface forms available for it."""
    lines = text.splitlines() if isinstance(text, str) else text
    out: dict = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 2 tab-separated fields, got {len(parts)}", line_no)
        pred, surface = parts[0].strip(), parts[1].strip()
        if not _is_mention_field(surface):
            raise ParseError(f"surface form must contain {ARG1} and {ARG2}", line_no)
        out.setdefault(pred, []).append(surface)
    return out


# ----------------------------------------------------------------------
# Countries task construction


class CountriesError(ValueError):
    pass


def _countries_roles(kb: KB, located_in: Sym) -> tuple:
    """Infer (countries, subregions, regions) entity sets from the
    locatedIn edge structure: regions are location objects that are never
    location subjects, subregions are both, countries are only subjects."""
    subjects = set()
    objects = set()
    for fact in kb.facts:
        if fact.head.pred == located_in:
            subjects.add(fact.head.args[0])
            objects.add(fact.head.args[1])
    regions = objects - subjects
    subregions = objects & subjects
    countries = subjects - objects
    return countries, subregions, regions


def build_countries_task(
    kb: KB,
    level: str,
    test_countries: Sequence[str],
    val_countries: Sequence[str],
    located_in: str = "locatedIn",
    neighbor_of: str = "neighborOf",
) -> tuple:
    """Create the train KB and evaluation sets for one Countries task.

    ``S1`` removes country->region locations of held-out (test and
    validation) countries. ``S2`` additionally removes their
    country->subregion locations. ``S3`` additionally removes the
    region locations of training countries that neighbor a held-out
    country, so held-out regions are only reachable through two-hop
    neighbourhoods.

    The evaluation sets pair every held-out country with all regions,
    labelled by the original KB.
    """
    if level not in ("S1", "S2", "S3"):
        raise CountriesError(f"unknown level {level!r}")
    test_set = set(test_countries)
    val_set = set(val_countries)
    if test_set & val_set:
        raise CountriesError("test and validation country sets overlap")

    loc = kb.vocab.lookup(PRED, located_in)
    nbr = kb.vocab.lookup(PRED, neighbor_of)
    if loc is None:
        raise CountriesError(f"predicate {located_in!r} not in KB")
    countries, subregions, regions = _countries_roles(kb, loc)
    name = kb.vocab.name
    country_names = {name(c) for c in countries}
    for c in sorted(test_set | val_set):
        if c not in country_names:
            raise CountriesError(f"held-out country {c!r} is not a country in the KB")

    held_out = test_set | val_set
    train_countries = country_names - held_out

    # every held-out country needs at least one training neighbor
    neighbor_map: dict = {}
    if nbr is not None:
        for fact in kb.facts:
            if fact.head.pred == nbr:
                a, b = (name(t) for t in fact.head.args)
                neighbor_map.setdefault(a, set()).add(b)
                neighbor_map.setdefault(b, set()).add(a)
    for c in sorted(held_out):
        if not (neighbor_map.get(c, set()) & train_countries):
            raise CountriesError(f"held-out country {c!r} has no training neighbor")

    # training countries adjacent to any held-out country (for S3)
    frontier = {
        c for c in train_countries if neighbor_map.get(c, set()) & held_out
    }

    def keep(fact: Clause) -> bool:
        pred = fact.head.pred
        if pred != loc:
            return True
        subj, obj = (name(t) for t in fact.head.args)
        obj_is_region = fact.head.args[1] in regions
        obj_is_subregion = fact.head.args[1] in subregions
        if subj in held_out and obj_is_region:
            return False
        if level in ("S2", "S3") and subj in held_out and obj_is_subregion:
            return False
        if level == "S3" and subj in frontier and obj_is_region:
            return False
        return True

    train_kb = kb.copy_structure()
    for fact in kb.facts:
        if keep(fact):
            train_kb.add_fact(fact.head.pred, *fact.head.args, origin=fact.origin)
    for rule in kb.rules:
        train_kb.add_rule(rule.head, rule.body, origin=rule.origin)

    region_list = sorted(regions, key=lambda s: s.id)

    def eval_set(country_set: set) -> list:
        pairs = []
        for c in sorted(country_set):
            c_sym = kb.vocab.lookup(ENT, c)
            for r in region_list:
                atom = Atom(loc, (c_sym, r))
                label = kb.has_fact(loc, c_sym, r)
                pairs.append((atom, label))
        return pairs

    eval_sets = {"valid": eval_set(val_set), "test": eval_set(test_set)}
    return train_kb, eval_sets


def mentionize(
    kb: KB,
    fraction: float,
    mention_templates: dict,
    rng_seed: int,
) -> KB:
    """Replace a uniformly sampled fraction of facts with mention facts.

    Each selected fact ``p(a, b)`` becomes a mention fact whose pattern
    is a uniformly sampled surface form registered for ``p``. The total
    fact count is preserved. Deterministic under a fixed seed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    rng = np.random.default_rng(rng_seed)
    n = len(kb.facts)
    n_replace = int(round(fraction * n))
    chosen = set()
    if n_replace:
        chosen = set(rng.choice(n, size=n_replace, replace=False).tolist())

    out = kb.copy_structure()
    for i, fact in enumerate(kb.facts):
        if i in chosen:
            pred_name = kb.pred_str(fact.head.pred)
            forms = mention_templates.get(pred_name)
            if not forms:
                raise ValueError(f"no mention templates for predicate {pred_name!r}")
            surface = forms[int(rng.integers(len(forms)))]
            pattern = out.intern_pattern(surface.lower().split())
            subj = out.vocab.intern(ENT, kb.vocab.name(fact.head.args[0]))
            obj = out.vocab.intern(ENT, kb.vocab.name(fact.head.args[1]))
            out.add_fact(pattern, subj, obj, origin="mention")
        else:
            out.add_fact(fact.head.pred, *fact.head.args, origin=fact.origin)
    for rule in kb.rules:
        out.add_rule(rule.head, rule.body, origin=rule.origin)
    return out
