"""Differentiable backward chaining.

Proof semantics: a goal unifies against facts and rule heads by
comparing symbol embeddings with the Gaussian kernel; a proof state
carries a substitution set and a score that is the minimum over all
kernel comparisons along its path; the final proof score of a goal is
the maximum over all candidate paths. Candidate enumeration is pruned to
the ``k_f`` nearest facts and, per rule group, the ``k_r`` rules with
the nearest head representations.

Three implementations of the same semantics live here:

  * :func:`or_step` / :func:`and_step`: the directly recursive pruned
    search, returning every non-failure proof state. Clear, but it
    re-derives shared subproofs, so it is only used on small inputs and
    as a cross-check.
  * :class:`Prover`: the production engine. It memoizes subgoal
    solutions, collapses states that agree on every binding that is
    still observable (keeping the max-scoring representative, which
    preserves the final max exactly), caches kernel evaluations and
    per-symbol retrieval distances, and is what training and evaluation
    drive.
  * :func:`prove_exhaustive`: the unpruned oracle. No indexes, no
    memoization, no dedup; it enumerates every bounded-depth path under
    a state budget and exists so the pruned engines can be checked
    against ground truth.

Every kernel comparison flows through :func:`softchain.kernel.kernel`
on the same representation vectors, so all three agree bitwise on
scores whenever they enumerate the same candidate sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .kb import KB, Atom, Clause, Sym, Var
from .kernel import DEFAULT_KERNEL, KernelConfig, kernel
from .nns import BindingPattern, NeighborIndex, _top_k_rows
from .params import ParamStore


@dataclass(frozen=True)
class ProofConfig:
    max_depth: int = 2
    k_facts: int = 3
    k_rules: int = 3

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.k_facts < 1 or self.k_rules < 1:
            raise ValueError("k_facts and k_rules must be >= 1")


class TraceNode(NamedTuple):
    """One clause selection in a proof: its kernel comparisons plus the
    subproofs of its body atoms."""

    kind: str  # "fact" | "rule"
    clause_id: int
    comps: tuple  # ((left Sym, right Sym, value), ...)
    children: tuple  # TraceNode per body atom


class ProofResult(NamedTuple):
    score: float
    trace: Optional[TraceNode]


def trace_comparisons(node: TraceNode) -> list:
    """All kernel comparisons of a proof tree in deterministic
    (enumeration) order: a node's own comparisons, then its children's,
    left to right."""
    out = list(node.comps)
    for child in node.children:
        out.extend(trace_comparisons(child))
    return out


def trace_min(node: TraceNode) -> float:
    return min(v for _l, _r, v in trace_comparisons(node))


def trace_argmin(node: TraceNode) -> tuple:
    """The first comparison attaining the minimum value."""
    comps = trace_comparisons(node)
    best = min(v for _l, _r, v in comps)
    for comp in comps:
        if comp[2] == best:
            return comp
    raise AssertionError("unreachable")


def trace_fact_ids(node: TraceNode) -> list:
    out = [node.clause_id] if node.kind == "fact" else []
    for child in node.children:
        out.extend(trace_fact_ids(child))
    return out


@dataclass(slots=True)
class ProofState:
    """Substitutions plus the running min-aggregated score.

    ``nodes`` holds the completed trace subtrees at the current chaining
    level; ``new_comps`` carries the comparisons of the most recent
    unification until the caller wraps them into a node.
    """

    subs: dict
    score: float
    nodes: tuple = ()
    new_comps: tuple = ()


def resolve_term(term, subs: dict):
    """Chase a variable through the substitution chain to its final
    binding (path compression semantics); symbols pass through."""
    while isinstance(term, Var):
        nxt = subs.get(term)
        if nxt is None:
            return term
        term = nxt
    return term


def substitute(atom: Atom, subs: dict) -> Atom:
    """Replace every bound variable in the atom's arguments."""
    if not subs:
        return atom
    a1 = resolve_term(atom.args[0], subs)
    a2 = resolve_term(atom.args[1], subs)
    if a1 is atom.args[0] and a2 is atom.args[1]:
        return atom
    return Atom(atom.pred, (a1, a2))


def unify(
    h: Atom,
    g: Atom,
    state: ProofState,
    store: ParamStore,
    kcfg: KernelConfig = DEFAULT_KERNEL,
    pairk=None,
) -> Optional[ProofState]:
    """Soft unification of a clause head ``h`` against a goal ``g``.

    Symbol-symbol positions compare embeddings through the kernel and
    lower the score via min; a variable on either side extends the
    substitution set without touching the score. Re-binding an
    already-bound variable to a different symbol fails discretely
    (returns None), as does binding two variables resolved to different
    symbols.
    """
    if len(h.args) != len(g.args):
        return None
    if pairk is None:
        def pairk(a, b):  # noqa: E306 - local default
            return kernel(store.rep_of(a), store.rep_of(b), kcfg)

    subs = state.subs
    extended = False
    score = state.score
    comps = []
    for left, right in ((h.pred, g.pred), (h.args[0], g.args[0]), (h.args[1], g.args[1])):
        lv = isinstance(left, Var)
        rv = isinstance(right, Var)
        if not lv and not rv:
            v = pairk(left, right)
            comps.append((left, right, v))
            if v < score:
                score = v
            continue
        lres = resolve_term(left, subs) if lv else left
        rres = resolve_term(right, subs) if rv else right
        lres_var = isinstance(lres, Var)
        rres_var = isinstance(rres, Var)
        if not lres_var and not rres_var:
            # both chains ended in symbols: a rebinding, which must agree
            if lres != rres:
                return None
            continue
        if not extended:
            subs = dict(subs)
            extended = True
        if lres_var and rres_var:
            if lres is not rres:
                subs[rres] = lres  # bind right variable to left variable
        elif lres_var:
            subs[lres] = rres
        else:
            subs[rres] = lres
    return ProofState(subs, score, state.nodes, tuple(comps))


# ----------------------------------------------------------------------
# reference pruned search


@dataclass
class ProverContext:
    """Everything one proof episode needs, bundled for the recursive ops."""

    kb: KB
    store: ParamStore
    index: NeighborIndex
    cfg: ProofConfig
    kcfg: KernelConfig = DEFAULT_KERNEL
    mask: Optional[int] = None
    _fresh: int = 0

    def fresh_var(self, name: str) -> Var:
        self._fresh += 1
        return Var(f"{name}~{self._fresh}")


def standardize_apart(clause: Clause, ctx: ProverContext) -> tuple:
    """Rename the clause's variables to fresh ones so concurrent uses of
    the same clause (including self-recursion) cannot collide."""
    mapping: dict = {}

    def rename(term):
        if isinstance(term, Var):
            if term not in mapping:
                mapping[term] = ctx.fresh_var(term.name)
            return mapping[term]
        return term

    head = Atom(clause.head.pred, (rename(clause.head.args[0]), rename(clause.head.args[1])))
    body = tuple(
        Atom(a.pred, (rename(a.args[0]), rename(a.args[1]))) for a in clause.body
    )
    return head, body


def _goal_reps(goal: Atom, ctx: ProverContext) -> tuple:
    pattern = BindingPattern(
        True,
        not isinstance(goal.args[0], Var),
        not isinstance(goal.args[1], Var),
    )
    reps = {"pred": ctx.store.rep_of(goal.pred)}
    if pattern.arg1:
        reps["arg1"] = ctx.store.rep_of(goal.args[0])
    if pattern.arg2:
        reps["arg2"] = ctx.store.rep_of(goal.args[1])
    return pattern, reps


def or_step(goal: Atom, d: int, state: ProofState, ctx: ProverContext) -> list:
    """Unify the goal against the k_f nearest facts and, per rule group,
    the k_r nearest rule heads; expand rule bodies recursively. Returns
    every resulting non-failure proof state."""
    results = []
    pattern, reps = _goal_reps(goal, ctx)
    for fid, _dist in ctx.index.query_facts(pattern, reps, ctx.cfg.k_facts, exclude=ctx.mask):
        fact = ctx.kb.clause_by_id(fid)
        s = unify(fact.head, goal, state, ctx.store, ctx.kcfg)
        if s is None:
            continue
        node = TraceNode("fact", fid, s.new_comps, ())
        results.append(ProofState(s.subs, s.score, state.nodes + (node,)))
    goal_pred_rep = ctx.store.rep_of(goal.pred)
    for clauses in ctx.index.query_rules(goal_pred_rep, ctx.cfg.k_rules):
        for clause in clauses:
            head, body = standardize_apart(clause, ctx)
            s = unify(head, goal, state, ctx.store, ctx.kcfg)
            if s is None:
                continue
            head_comps = s.new_comps
            inner = ProofState(s.subs, s.score, ())
            for done in and_step(body, d, inner, ctx):
                node = TraceNode("rule", clause.cid, head_comps, done.nodes)
                results.append(ProofState(done.subs, done.score, state.nodes + (node,)))
    return results


def and_step(body: tuple, d: int, state: ProofState, ctx: ProverContext) -> list:
    """Prove a body left to right: substitute, prove the first atom one
    level deeper, then continue with the rest from each resulting state.
    An empty body succeeds as-is; a nonempty body needs depth."""
    if not body:
        return [state]
    if d <= 0:
        return []
    first = substitute(body[0], state.subs)
    out = []
    for s in or_step(first, d - 1, state, ctx):
        out.extend(and_step(body[1:], d, s, ctx))
    return out


def prove_states(goal: Atom, ctx: ProverContext) -> list:
    """All proof states of a goal from the empty substitution set."""
    return or_step(goal, ctx.cfg.max_depth, ProofState({}, 1.0), ctx)


# ----------------------------------------------------------------------
# exhaustive oracle


class StateBudgetExceeded(RuntimeError):
    pass


def exhaustive_states(
    goal: Atom,
    d: int,
    kb: KB,
    store: ParamStore,
    kcfg: KernelConfig = DEFAULT_KERNEL,
    budget: int = 10_000,
    mask: Optional[int] = None,
) -> list:
    """Every bounded-depth proof state, unifying against all facts and
    all rules in KB order. Raises :class:`StateBudgetExceeded` when more
    than ``budget`` states are enumerated."""
    counter = {"n": 0}
    fresh = {"n": 0}

    def freshen(clause: Clause) -> tuple:
        mapping: dict = {}

        def rename(term):
            if isinstance(term, Var):
                if term not in mapping:
                    fresh["n"] += 1
                    mapping[term] = Var(f"{term.name}^{fresh['n']}")
                return mapping[term]
            return term

        head = Atom(clause.head.pred, tuple(rename(t) for t in clause.head.args))
        body = tuple(Atom(a.pred, tuple(rename(t) for t in a.args)) for a in clause.body)
        return head, body

    def tick() -> None:
        counter["n"] += 1
        if counter["n"] > budget:
            raise StateBudgetExceeded(f"exhaustive search exceeded {budget} states")

    def do_or(g: Atom, depth: int, state: ProofState) -> list:
        results = []
        for fact in kb.facts:
            if mask is not None and fact.cid == mask:
                continue
            tick()
            s = unify(fact.head, g, state, store, kcfg)
            if s is None:
                continue
            node = TraceNode("fact", fact.cid, s.new_comps, ())
            results.append(ProofState(s.subs, s.score, state.nodes + (node,)))
        for clause in kb.rules:
            tick()
            head, body = freshen(clause)
            s = unify(head, g, state, store, kcfg)
            if s is None:
                continue
            head_comps = s.new_comps
            inner = ProofState(s.subs, s.score, ())
            for done in do_and(body, depth, inner):
                node = TraceNode("rule", clause.cid, head_comps, done.nodes)
                results.append(ProofState(done.subs, done.score, state.nodes + (node,)))
        return results

    def do_and(body: tuple, depth: int, state: ProofState) -> list:
        if not body:
            return [state]
        if depth <= 0:
            return []
        first = substitute(body[0], state.subs)
        out = []
        for s in do_or(first, depth - 1, state):
            out.extend(do_and(body[1:], depth, s))
        return out

    return do_or(goal, d, ProofState({}, 1.0))


def prove_exhaustive(
    goal: Atom,
    d: int,
    kb: KB,
    store: ParamStore,
    kcfg: KernelConfig = DEFAULT_KERNEL,
    budget: int = 10_000,
    mask: Optional[int] = None,
) -> ProofResult:
    """Unpruned ground truth: max over every bounded-depth proof path."""
    states = exhaustive_states(goal, d, kb, store, kcfg, budget, mask)
    if not states:
        return ProofResult(0.0, None)
    best = max(states, key=lambda s: s.score)
    first = next(s for s in states if s.score == best.score)
    return ProofResult(first.score, first.nodes[0] if first.nodes else None)


# ----------------------------------------------------------------------
# production engine


class Solution(NamedTuple):
    """A deduplicated way of proving one subgoal: bindings for its free
    argument positions (None when the position was ground or stays
    unbound), the min-aggregated score of the subtree, and its trace."""

    b1: Optional[Sym]
    b2: Optional[Sym]
    score: float
    node: TraceNode


_VAR1 = ("*", 1)
_VAR2 = ("*", 2)
_SAME = ("*", "=")


class _CompiledRule(NamedTuple):
    clause: Clause
    fast: bool
    head_pred: Sym
    # fast path only:
    locals_: tuple  # local variable display names
    body: tuple  # per atom: (pred Sym, spec1, spec2); spec: ("c",Sym)|("g",0|1)|("l",j)
    needed: tuple  # per step: local indexes still needed after that step


def _compile_rule(clause: Clause) -> _CompiledRule:
    h1, h2 = clause.head.args
    fast = isinstance(h1, Var) and isinstance(h2, Var) and h1 is not h2
    if not fast:
        return _CompiledRule(clause, False, clause.head.pred, (), (), ())
    local_ids: dict = {}
    body = []
    for atom in clause.body:
        spec = []
        for term in atom.args:
            if not isinstance(term, Var):
                spec.append(("c", term))
            elif term is h1:
                spec.append(("g", 0))
            elif term is h2:
                spec.append(("g", 1))
            else:
                if term not in local_ids:
                    local_ids[term] = len(local_ids)
                spec.append(("l", local_ids[term]))
        body.append((atom.pred, spec[0], spec[1]))
    needed = []
    for i in range(len(body)):
        after = set()
        for _p, s1, s2 in body[i + 1 :]:
            for s in (s1, s2):
                if s[0] == "l":
                    after.add(s[1])
        needed.append(tuple(sorted(after)))
    names = tuple(v.name for v in local_ids)
    return _CompiledRule(clause, True, clause.head.pred, names, tuple(body), tuple(needed))


class _Entry(NamedTuple):
    """Shared-memo entry: solutions plus every fact id any retrieval in
    the subtree returned (the masks the entry is NOT valid for)."""

    sols: list
    retrieved: frozenset


class Prover:
    """Memoizing pruned prover over an immutable (store, index) snapshot.

    Subgoal solutions are memoized once per snapshot in a shared table;
    states that agree on every still-observable binding are collapsed to
    the max-scoring representative, and for ground subgoals candidate
    rules whose head kernel cannot beat the best known score are skipped
    (both exact under the min/max proof algebra). A training-time mask
    reuses every shared entry whose recorded retrievals the masked fact
    does not appear in, and recomputes only the rest into a per-mask
    overlay. Caches reset automatically when the store version or index
    epoch moves.
    """

    def __init__(
        self,
        kb: KB,
        store: ParamStore,
        index: NeighborIndex,
        cfg: ProofConfig = ProofConfig(),
        kcfg: KernelConfig = DEFAULT_KERNEL,
    ):
        self.kb = kb
        self.store = store
        self.index = index
        self.cfg = cfg
        self.kcfg = kcfg
        self._facts_by_id = {f.cid: f for f in kb.facts}
        self._compiled = {c.cid: _compile_rule(c) for c in kb.rules}
        self._snapshot = None
        self._reset_caches()

    # -- cache plumbing ------------------------------------------------

    def _reset_caches(self) -> None:
        self._rep_cache: dict = {}
        self._pair_cache: dict = {}
        self._dist_cache: dict = {}
        self._rule_cand_cache: dict = {}
        self._fact_cand_cache: dict = {}
        # shared mask-independent memo: key -> _Entry
        self._memo: dict = {}
        # overlay for (mask, key) pairs the mask actually touches
        self._memo_masked: dict = {}
        self._snapshot = (self.store.version, self.index.epoch)

    def _ensure_fresh(self) -> None:
        if self._snapshot != (self.store.version, self.index.epoch):
            self._reset_caches()

    def reset_transient(self) -> None:
        """Drop the per-episode memo tables (keeps rep/kernel caches).

        Call between independent evaluation episodes to bound memory."""
        self._memo = {}
        self._memo_masked = {}
        self._fact_cand_cache = {}

    def rep(self, sym: Sym) -> np.ndarray:
        r = self._rep_cache.get(sym)
        if r is None:
            r = self.store.rep_of(sym)
            self._rep_cache[sym] = r
        return r

    def pairk(self, a: Sym, b: Sym) -> float:
        key = (a, b) if a <= b else (b, a)
        v = self._pair_cache.get(key)
        if v is None:
            v = kernel(self.rep(key[0]), self.rep(key[1]), self.kcfg)
            self._pair_cache[key] = v
        return v

    def _pos_dist(self, pos: str, sym: Sym) -> np.ndarray:
        key = (pos, sym)
        d = self._dist_cache.get(key)
        if d is None:
            d = self.index.position_distance(pos, self.rep(sym))
            self._dist_cache[key] = d
        return d

    def _fact_candidates(self, pred: Sym, s1, s2, mask) -> tuple:
        key = (pred, s1, s2, mask)
        cache = self._fact_cand_cache
        hit = cache.get(key)
        if hit is not None:
            return hit
        if self.index.n_facts() == 0:
            cache[key] = ()
            return ()
        if mask is not None:
            # the mask only matters when the masked fact is actually
            # among the unmasked candidates
            base = self._fact_candidates(pred, s1, s2, None)
            if mask not in base:
                cache[key] = base
                return base
        d = self._pos_dist("pred", pred).copy()
        if s1 is not None:
            d += self._pos_dist("arg1", s1)
        if s2 is not None:
            d += self._pos_dist("arg2", s2)
        row = self.index._fact_rows.get(mask) if mask is not None else None
        if row is not None:
            d[row] = np.inf
        rows = _top_k_rows(d, self.cfg.k_facts)
        ids = tuple(self.index.fact_ids[r] for r in rows)
        if row is not None and mask in ids:
            ids = tuple(i for i in ids if i != mask)
        cache[key] = ids
        return ids

    def _rule_candidates(self, pred: Sym) -> tuple:
        hit = self._rule_cand_cache.get(pred)
        if hit is not None:
            return hit
        out = []
        for clauses in self.index.query_rules(self.rep(pred), self.cfg.k_rules):
            for clause in clauses:
                out.append(self._compiled[clause.cid])
        out = tuple(out)
        self._rule_cand_cache[pred] = out
        return out

    # -- solving -------------------------------------------------------

    def prove(self, goal: Atom, mask: Optional[int] = None) -> ProofResult:
        """Max-aggregated proof score and the best trace for a goal.

        ``mask`` excludes one fact id from retrieval everywhere in the
        proof tree (training-time leave-one-out)."""
        self._ensure_fresh()
        if len(self._memo) + len(self._memo_masked) > 2_000_000:
            self.reset_transient()
        sols = self._solve(goal.pred, goal.args[0], goal.args[1], self.cfg.max_depth, mask)
        if not sols:
            return ProofResult(0.0, None)
        best = None
        for s in sols:
            if best is None or s.score > best.score:
                best = s
        return ProofResult(best.score, best.node)

    def prove_all(self, goal: Atom, mask: Optional[int] = None) -> list:
        """The deduplicated solution list for a goal; used for
        diagnostics and margin analysis."""
        self._ensure_fresh()
        return list(self._solve(goal.pred, goal.args[0], goal.args[1], self.cfg.max_depth, mask))

    def _solve(self, pred: Sym, t1, t2, depth: int, mask) -> list:
        v1 = isinstance(t1, Var)
        v2 = isinstance(t2, Var)
        k1 = _VAR1 if v1 else t1
        k2 = (_SAME if t2 is t1 else _VAR2) if v2 else t2
        key = (pred, k1, k2, depth)
        if mask is None:
            return self._solve_shared(key, pred, t1, t2, v1, v2, depth).sols
        mkey = (mask, pred, k1, k2, depth)
        hit = self._memo_masked.get(mkey)
        if hit is not None:
            return hit
        shared = self._solve_shared(key, pred, t1, t2, v1, v2, depth)
        if mask not in shared.retrieved:
            return shared.sols
        sols, _retr = self._compute(pred, t1, t2, v1, v2, depth, mask)
        self._memo_masked[mkey] = sols
        return sols

    def _solve_shared(self, key, pred, t1, t2, v1, v2, depth) -> _Entry:
        entry = self._memo.get(key)
        if entry is None:
            sols, retrieved = self._compute(pred, t1, t2, v1, v2, depth, None)
            entry = _Entry(sols, frozenset(retrieved))
            self._memo[key] = entry
        return entry

    def _compute(self, pred: Sym, t1, t2, v1, v2, depth: int, mask) -> tuple:
        """Candidate facts, then candidate rules per group; deduplicated
        solutions in enumeration order plus the union of retrieved ids."""
        sols: list = []
        index_of: dict = {}
        ground = not v1 and not v2
        track = mask is None
        retrieved: set = set() if track else ()

        def add(b1, b2, score, node) -> None:
            bkey = (b1, b2)
            i = index_of.get(bkey)
            if i is None:
                index_of[bkey] = len(sols)
                sols.append(Solution(b1, b2, score, node))
            elif score > sols[i].score:
                sols[i] = Solution(b1, b2, score, node)

        same = v2 and t2 is t1
        pairk = self.pairk
        cand = self._fact_candidates(pred, None if v1 else t1, None if v2 else t2, mask)
        if track:
            retrieved.update(cand)
        for fid in cand:
            fact = self._facts_by_id[fid]
            fa, fb = fact.head.args
            if same and fa != fb:
                continue
            fp = fact.head.pred
            vmin = pairk(pred, fp)
            comps = [(pred, fp, vmin)]
            if not v1:
                c = pairk(t1, fa)
                comps.append((t1, fa, c))
                if c < vmin:
                    vmin = c
            if not v2:
                c = pairk(t2, fb)
                comps.append((t2, fb, c))
                if c < vmin:
                    vmin = c
            node = TraceNode("fact", fid, tuple(comps), ())
            add(fa if v1 else None, fb if v2 else None, vmin, node)

        if depth > 0:
            for comp in self._rule_candidates(pred):
                # for a ground goal, a rule whose head kernel cannot beat
                # the best known score cannot improve the max
                if ground and sols and comp.fast:
                    if self.pairk(pred, comp.head_pred) <= sols[0].score:
                        continue
                if comp.fast:
                    self._apply_fast(comp, pred, t1, t2, v1, v2, depth, mask, add,
                                     retrieved if track else None,
                                     sols if ground else None)
                else:
                    self._apply_generic(comp.clause, pred, t1, t2, v1, v2, depth, mask, add,
                                        retrieved if track else None)

        return sols, retrieved

    def _apply_fast(self, comp, pred, t1, t2, v1, v2, depth, mask, add, retrieved, bound) -> None:
        """Template-shaped rules: head is slot(X, Y) with distinct vars."""
        head_k = self.pairk(pred, comp.head_pred)
        head_comps = ((pred, comp.head_pred, head_k),)
        locals_ = tuple(Var(n) for n in comp.locals_)
        goal_terms = (t1, t2)
        states = [({}, head_k, ())]
        for step, (bpred, s1, s2) in enumerate(comp.body):
            new_states: list = []
            new_index: dict = {}
            needed = comp.needed[step]
            best_known = bound[0].score if bound else None
            for benv, score, children in states:
                r1 = _resolve_spec(s1, goal_terms, locals_, benv)
                r2 = _resolve_spec(s2, goal_terms, locals_, benv)
                subsols = self._solve(bpred, r1, r2, depth - 1, mask)
                if retrieved is not None:
                    child_key = (
                        bpred,
                        _VAR1 if isinstance(r1, Var) else r1,
                        (_SAME if r2 is r1 else _VAR2) if isinstance(r2, Var) else r2,
                        depth - 1,
                    )
                    entry = self._memo.get(child_key)
                    if entry is not None:
                        retrieved.update(entry.retrieved)
                for sol in subsols:
                    nscore = sol.score if sol.score < score else score
                    if best_known is not None and nscore <= best_known:
                        continue
                    nenv = benv
                    if isinstance(r1, Var) and sol.b1 is not None:
                        nenv = dict(nenv)
                        nenv[r1] = sol.b1
                    if isinstance(r2, Var) and sol.b2 is not None:
                        if nenv is benv:
                            nenv = dict(nenv)
                        nenv[r2] = sol.b2
                    dkey = _dedup_key(goal_terms, locals_, needed, nenv, v1, v2)
                    j = new_index.get(dkey)
                    if j is None:
                        new_index[dkey] = len(new_states)
                        new_states.append((nenv, nscore, children + (sol.node,)))
                    elif nscore > new_states[j][1]:
                        new_states[j] = (nenv, nscore, children + (sol.node,))
            states = new_states
            if not states:
                return
        cid = comp.clause.cid
        for benv, score, children in states:
            b1 = _final_binding(t1, v1, benv)
            b2 = _final_binding(t2, v2, benv)
            node = TraceNode("rule", cid, head_comps, children)
            add(b1, b2, score, node)

    def _apply_generic(self, clause, pred, t1, t2, v1, v2, depth, mask, add, retrieved) -> None:
        """Fallback for exotic clause shapes (repeated or constant head
        arguments): full unification, then chained solving."""
        ctx = ProverContext(self.kb, self.store, self.index, self.cfg, self.kcfg, mask)
        head, body = standardize_apart(clause, ctx)
        goal = Atom(pred, (t1, t2))
        s = unify(head, goal, ProofState({}, 1.0), self.store, self.kcfg, pairk=self.pairk)
        if s is None:
            return
        head_comps = s.new_comps
        states = [(s.subs, s.score, ())]
        for atom in body:
            new_states = []
            for subs, score, children in states:
                ground = substitute(atom, subs)
                g1, g2 = ground.args
                subsols = self._solve(ground.pred, g1, g2, depth - 1, mask)
                if retrieved is not None:
                    child_key = (
                        ground.pred,
                        _VAR1 if isinstance(g1, Var) else g1,
                        (_SAME if g2 is g1 else _VAR2) if isinstance(g2, Var) else g2,
                        depth - 1,
                    )
                    entry = self._memo.get(child_key)
                    if entry is not None:
                        retrieved.update(entry.retrieved)
                for sol in subsols:
                    nsubs = subs
                    if isinstance(g1, Var) and sol.b1 is not None:
                        nsubs = dict(nsubs)
                        nsubs[g1] = sol.b1
                    if isinstance(g2, Var) and sol.b2 is not None:
                        if nsubs is subs:
                            nsubs = dict(nsubs)
                        nsubs[g2] = sol.b2
                    nscore = sol.score if sol.score < score else score
                    new_states.append((nsubs, nscore, children + (sol.node,)))
            states = new_states
            if not states:
                return
        for subs, score, children in states:
            r1 = resolve_term(t1, subs) if v1 else None
            r2 = resolve_term(t2, subs) if v2 else None
            b1 = r1 if isinstance(r1, Sym) else None
            b2 = r2 if isinstance(r2, Sym) else None
            node = TraceNode("rule", clause.cid, head_comps, children)
            add(b1, b2, score, node)


def _resolve_spec(spec, goal_terms, locals_, benv):
    kind, val = spec
    if kind == "c":
        return val
    term = goal_terms[val] if kind == "g" else locals_[val]
    while isinstance(term, Var):
        nxt = benv.get(term)
        if nxt is None:
            return term
        term = nxt
    return term


def _final_binding(t, is_var, benv):
    if not is_var:
        return None
    while isinstance(t, Var):
        nxt = benv.get(t)
        if nxt is None:
            return None
        t = nxt
    return t


def _dedup_key(goal_terms, locals_, needed, benv, v1, v2) -> tuple:
    parts = []
    if v1:
        parts.append(_final_binding(goal_terms[0], True, benv))
    if v2:
        parts.append(_final_binding(goal_terms[1], True, benv))
    for j in needed:
        parts.append(_final_binding(locals_[j], True, benv))
    return tuple(parts)


def prove(
    goal: Atom,
    cfg: ProofConfig,
    kb: KB,
    store: ParamStore,
    index: NeighborIndex,
    mask: Optional[int] = None,
    kcfg: KernelConfig = DEFAULT_KERNEL,
) -> ProofResult:
    """One-shot convenience wrapper around :class:`Prover`."""
    return Prover(kb, store, index, cfg, kcfg).prove(goal, mask)
