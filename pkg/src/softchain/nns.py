"""Exact L2 nearest-neighbour retrieval of candidate facts and rules.

Facts are indexed per binding pattern: a goal like ``p(a, Z)`` binds the
predicate and first-argument positions, so candidates are ranked by the
summed squared distance over exactly those positions. Free positions
unify with score 1 and contribute nothing to the ranking. Rule groups
are indexed by head-predicate representation only, since template head
arguments are variables.

Rows are snapshots: they go stale as training updates the store and are
recomputed every ``refresh_interval`` batches (tick counter). Retrieval
between refreshes is therefore approximate by design, but unification
scores are always recomputed exactly from the live store by the prover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kb import KB, Clause, Sym
from .params import ParamStore

POSITIONS = ("pred", "arg1", "arg2")


@dataclass(frozen=True)
class BindingPattern:
    """Bound/free flags for (predicate, arg1, arg2).

    The predicate position must be bound: sub-goals always carry a
    resolvable predicate reference.
    """

    pred: bool = True
    arg1: bool = True
    arg2: bool = True

    def __post_init__(self) -> None:
        if not self.pred:
            raise ValueError("goals with a free predicate position are not retrievable")

    def bound_positions(self) -> tuple:
        return tuple(
            i for i, b in enumerate((self.pred, self.arg1, self.arg2)) if b
        )


@dataclass
class IndexEntry:
    """Concatenated bound-position rows for one (group, pattern) pair."""

    pattern: BindingPattern
    rows: np.ndarray  # (n_clauses, n_bound_positions * k)
    ids: list  # row -> clause id


class NeighborIndex:
    """Per-KB retrieval structure with a staleness counter.

    ``position_rows`` holds one (n_facts, k) matrix per atom position;
    their per-position distances sum to the concatenated-row distance,
    so one set of matrices serves every binding pattern.
    """

    def __init__(self, kb: KB, store: ParamStore, refresh_interval: int = 10):
        if refresh_interval < 1:
            raise ValueError("refresh interval must be >= 1")
        self.kb = kb
        self.refresh_interval = refresh_interval
        self.counter = 0
        self.epoch = 0  # bumped on every refresh; caches key off it
        self.position_rows: dict = {}
        self.fact_ids: list = []
        self.rule_groups: list = []  # (signature, [clauses], head_rows)
        self.refresh(store)

    # ------------------------------------------------------------------

    def refresh(self, store: ParamStore) -> None:
        """Recompute all rows from the current store."""
        facts = self.kb.partitioning().fact_group
        self.fact_ids = [f.cid for f in facts]
        self._fact_rows = {cid: i for i, cid in enumerate(self.fact_ids)}
        k = store.k
        n = len(facts)
        rows = {pos: np.empty((n, k)) for pos in POSITIONS}
        for i, fact in enumerate(facts):
            rows["pred"][i] = store.rep_of(fact.head.pred)
            rows["arg1"][i] = store.rep_of(fact.head.args[0])
            rows["arg2"][i] = store.rep_of(fact.head.args[1])
        self.position_rows = rows
        self.rule_groups = []
        for sig, clauses in self.kb.partitioning().rule_groups():
            head_rows = np.empty((len(clauses), k))
            for i, clause in enumerate(clauses):
                head_rows[i] = store.rep_of(clause.head.pred)
            self.rule_groups.append((sig, clauses, head_rows))
        self.epoch += 1

    def tick_and_maybe_refresh(self, store: ParamStore) -> None:
        """Advance the per-batch counter; refresh on every interval-th tick."""
        self.counter += 1
        if self.counter % self.refresh_interval == 0:
            self.refresh(store)

    # ------------------------------------------------------------------

    def n_facts(self) -> int:
        return len(self.fact_ids)

    def fact_row_of(self, cid: int) -> int:
        return self._fact_rows[cid]

    def position_distance(self, pos: str, q: np.ndarray) -> np.ndarray:
        """Squared distances from ``q`` to every fact row at one position."""
        rows = self.position_rows[pos]
        diff = rows - q
        return np.einsum("ij,ij->i", diff, diff)

    def build(self, pattern: BindingPattern) -> IndexEntry:
        """Concatenated-row view of the fact index for one pattern."""
        bound = pattern.bound_positions()
        mats = [self.position_rows[POSITIONS[i]] for i in bound]
        rows = np.concatenate(mats, axis=1) if mats else np.empty((self.n_facts(), 0))
        return IndexEntry(pattern, rows, list(self.fact_ids))

    def fact_distances(self, pattern: BindingPattern, reps: dict) -> np.ndarray:
        """Summed squared L2 distance over the bound positions.

        ``reps`` maps position name to the goal-side representation
        (current store). Free positions must be absent.
        """
        bound = {POSITIONS[i] for i in pattern.bound_positions()}
        if set(reps) != bound:
            raise ValueError(f"goal positions {sorted(reps)} do not match pattern {sorted(bound)}")
        total = None
        for pos, q in reps.items():
            rows = self.position_rows[pos]
            diff = rows - q
            d = np.einsum("ij,ij->i", diff, diff)
            total = d if total is None else total + d
        return total

    def query_facts(
        self,
        pattern: BindingPattern,
        reps: dict,
        k_f: int,
        exclude: int | None = None,
    ) -> list:
        """Top-``k_f`` (fact id, squared distance), ascending, ties by
        lower fact id. ``exclude`` drops one fact id from consideration."""
        if k_f < 1:
            raise ValueError("k_f must be >= 1")
        n = self.n_facts()
        if n == 0:
            return []
        d = self.fact_distances(pattern, reps)
        row = self._fact_rows.get(exclude) if exclude is not None else None
        if row is not None:
            d = d.copy()
            d[row] = np.inf
        rows = _top_k_rows(d, k_f)
        return [(self.fact_ids[r], float(d[r])) for r in rows if r != row]

    def query_rules(self, goal_pred_rep: np.ndarray, k_r: int) -> list:
        """Per rule group, the ``k_r`` clauses whose head reps are nearest
        to the goal predicate rep. Returns a list of clause lists, one per
        group, in group order."""
        if k_r < 1:
            raise ValueError("k_r must be >= 1")
        out = []
        for _sig, clauses, head_rows in self.rule_groups:
            if not clauses:
                out.append([])
                continue
            diff = head_rows - goal_pred_rep
            d = np.einsum("ij,ij->i", diff, diff)
            rows = _top_k_rows(d, k_r)
            out.append([clauses[r] for r in rows])
        return out


def _top_k_rows(d: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries, ascending, ties by lower index.

    Exact under ties: every entry tied with the k-th smallest value is
    considered, then the lowest indices win.
    """
    n = d.shape[0]
    if k >= n:
        return np.lexsort((np.arange(n), d))
    kth = np.partition(d, k - 1)[k - 1]
    cand = np.flatnonzero(d <= kth)
    order = np.lexsort((cand, d[cand]))
    return cand[order][:k]
