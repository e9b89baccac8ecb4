"""Link-prediction evaluation: filtered ranking and precision-recall.

Ranking corrupts one argument slot at a time against the full entity
vocabulary, filters out corruptions that are true facts anywhere in the
original dataset (train, validation and test), and ranks the test fact
tie-neutrally: rank = 1 + #strictly-better + #ties / 2. Mid-ranks can
therefore be half-integral.

The precision-recall curve interpolates between achievable points in
true-positive space (false positives grow linearly with true positives
along a segment) and integrates the interpolated point list with the
trapezoid rule, anchored at recall zero with the precision of the first
score block. Tied scores are processed as one block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kb import ENT, KB, Atom, Sym


@dataclass
class RankingResult:
    ranks: list = field(default_factory=list)  # (subject_rank, object_rank) per fact
    mrr: float = 0.0
    hits: dict = field(default_factory=dict)  # m -> fraction

    def flat_ranks(self) -> list:
        return [r for pair in self.ranks for r in pair]


@dataclass
class PRResult:
    points: list  # (recall, precision) of the interpolated curve
    auc_pr: float


def rank_against(test_score: float, corruption_scores) -> float:
    """Tie-neutral rank of a score among its corruptions."""
    greater = sum(1 for s in corruption_scores if s > test_score)
    ties = sum(1 for s in corruption_scores if s == test_score)
    return 1.0 + greater + 0.5 * ties


def corruption_atoms(fact: Atom, slot: str, kb: KB, filter_kb: KB) -> list:
    """All single-slot corruptions of a fact that are not facts anywhere
    in the filtering KB and differ from the original."""
    subj, obj = fact.args
    n = kb.vocab.size(ENT)
    out = []
    for i in range(n):
        cand = Sym(ENT, i)
        if slot == "subject":
            if cand == subj:
                continue
            atom = Atom(fact.pred, (cand, obj))
        else:
            if cand == obj:
                continue
            atom = Atom(fact.pred, (subj, cand))
        if filter_kb.has_fact(atom.pred, *atom.args):
            continue
        out.append(atom)
    return out


def rank_fact(fact: Atom, prover, filter_kb: KB) -> tuple:
    """(subject rank, object rank) of one test fact under the prover."""
    test_score = prover.prove(fact).score
    ranks = []
    for slot in ("subject", "object"):
        scores = [
            prover.prove(atom).score
            for atom in corruption_atoms(fact, slot, prover.kb, filter_kb)
        ]
        ranks.append(rank_against(test_score, scores))
    return tuple(ranks)


def ranking_metrics(ranks: list) -> RankingResult:
    """MRR and HITS@{1,3,5,10} over per-fact (subject, object) ranks."""
    if not ranks:
        raise ValueError("cannot compute ranking metrics over an empty rank list")
    flat = [r for pair in ranks for r in pair]
    mrr = float(np.mean([1.0 / r for r in flat]))
    hits = {m: float(np.mean([1.0 if r <= m else 0.0 for r in flat])) for m in (1, 3, 5, 10)}
    return RankingResult(list(ranks), mrr, hits)


def evaluate_ranking(test_facts: list, prover, filter_kb: KB, reset_every: int = 1) -> RankingResult:
    """Filtered ranking of a list of test fact atoms."""
    ranks = []
    for i, fact in enumerate(test_facts):
        ranks.append(rank_fact(fact, prover, filter_kb))
        if reset_every and (i + 1) % reset_every == 0:
            prover.reset_transient()
    return ranking_metrics(ranks)


# ----------------------------------------------------------------------
# precision-recall


def pr_points(scores, labels) -> list:
    """Interpolated PR curve points for scored binary candidates.

    Candidates are sorted by descending score; tied scores form one
    block. Between consecutive achievable (TP, FP) counts the curve adds
    one point per intermediate true positive, with false positives
    interpolated linearly, then reports (recall, precision) pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    total_pos = int(np.sum(labels))
    if total_pos == 0:
        raise ValueError("precision-recall needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    labels = labels[order]

    # block-accumulated (TP, FP) counts at every distinct threshold
    counts = []
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and scores[j] == scores[i]:
            if labels[j]:
                tp += 1
            else:
                fp += 1
            j += 1
        counts.append((tp, fp))
        i = j

    points = []
    prev_tp, prev_fp = 0, 0
    anchored = False
    for tp, fp in counts:
        if tp == prev_tp:
            # a false-positive-only block: the curve dips vertically at
            # the current recall (or stays unplotted before any TP)
            if anchored:
                points.append((tp / total_pos, tp / (tp + fp)))
            prev_tp, prev_fp = tp, fp
            continue
        slope = (fp - prev_fp) / (tp - prev_tp)
        if not anchored:
            # anchor the curve at recall 0 with the limiting precision of
            # the first achievable segment (0 when false positives lead)
            anchor = 0.0 if prev_fp > 0 else tp / (tp + fp)
            points.append((0.0, anchor))
            anchored = True
        for x in range(1, tp - prev_tp + 1):
            itp = prev_tp + x
            ifp = prev_fp + slope * x
            points.append((itp / total_pos, itp / (itp + ifp)))
        prev_tp, prev_fp = tp, fp
    return points


def auc_pr(scores, labels) -> PRResult:
    """Area under the interpolated precision-recall curve (trapezoid)."""
    points = pr_points(scores, labels)
    area = 0.0
    for (r0, p0), (r1, p1) in zip(points, points[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return PRResult(points, float(area))


def evaluate_auc_pr(pairs: list, prover) -> PRResult:
    """Countries protocol: score (atom, label) pairs and compute AUC-PR."""
    scores = [prover.prove(atom).score for atom, _label in pairs]
    labels = [1 if label else 0 for _atom, label in pairs]
    return auc_pr(scores, labels)
