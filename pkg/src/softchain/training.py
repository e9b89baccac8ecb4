"""Training: corruption-based negatives, cross-entropy on proof scores,
exact gradients through the single best proof path, Adam updates.

Per positive fact the loss is -log s+ with the fact itself masked from
retrieval (it must be proven from the rest of the KB), and per corrupted
negative it is -log(1 - s-). Because the proof score is a max over paths
of a min over kernel comparisons, its gradient lives entirely in the
argmin comparison of the argmax path, which the trace pins down; that
comparison's kernel gradient is then routed into the two compared
representations (table rows directly, token rows through the mean-pool
scaling, attention weights through the softmax Jacobian).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .kb import KB, PATTERN, SLOT, Atom, Clause, ENT, Sym
from .kernel import DEFAULT_KERNEL, KernelConfig, kernel_grad
from .nns import NeighborIndex
from .params import AdamState, Gradients, ParamStore, apply_gradients, softmax
from .prover import ProofConfig, Prover, TraceNode, trace_comparisons

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    l2: float = 0.0001
    batch_size: int = 50
    epochs: int = 100
    negatives_per_slot: int = 1
    seed: int = 0
    clip: float = 1e-10
    schedule: str = "joint"  # "joint" | "rules-then-joint:R,J"
    index_refresh: int = 10
    eval_every: int = 1
    early_stop_patience: int = 0  # 0 disables early stopping

    def __post_init__(self) -> None:
        if not 0 < self.clip < 0.5:
            raise ValueError(f"clip must be in (0, 0.5), got {self.clip}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid batch size or epoch count")

    def phases(self) -> list:
        """(epochs, frozen tables) pairs. The rules-then-joint schedule
        freezes entity/predicate/token/pattern rows while slots train."""
        if self.schedule == "joint":
            return [(self.epochs, frozenset())]
        if self.schedule.startswith("rules-then-joint"):
            spec = self.schedule.split(":", 1)
            if len(spec) != 2:
                raise ValueError("rules-then-joint schedule needs ':R,J' epoch counts")
            r, j = (int(x) for x in spec[1].split(","))
            return [(r, frozenset({"R", "E", "V", "P"})), (j, frozenset())]
        raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class Batch:
    positives: list  # fact ids
    negatives: list  # (Atom, source fact id, slot)


class TrainingDiverged(RuntimeError):
    pass


def corrupt(fact: Clause, kb: KB, rng: np.random.Generator, n_per_slot: int = 1) -> list:
    """Corrupted atoms for one fact: ``n_per_slot`` subject replacements
    and ``n_per_slot`` object replacements, rejection-sampled so that no
    corruption is a known training fact. A slot that cannot produce a
    fresh corruption within 100 attempts is skipped with a warning."""
    n_entities = kb.vocab.size(ENT)
    if n_entities < 2:
        raise ValueError("corruption needs at least two entities")
    pred = fact.head.pred
    subj, obj = fact.head.args
    out = []
    for slot, fixed in (("subject", obj), ("object", subj)):
        produced = 0
        for _attempt in range(100 * n_per_slot):
            if produced == n_per_slot:
                break
            cand = Sym(ENT, int(rng.integers(n_entities)))
            if slot == "subject":
                atom = Atom(pred, (cand, obj))
            else:
                atom = Atom(pred, (subj, cand))
            if kb.has_fact(atom.pred, *atom.args):
                continue
            out.append((atom, fact.cid, slot))
            produced += 1
        if produced < n_per_slot:
            log.warning(
                "could not corrupt %s slot of %s after 100 attempts; skipping",
                slot,
                kb.clause_str(fact),
            )
    return out


@dataclass
class ExampleTerm:
    """One loss term: what was proven, how it scored, and the local loss
    derivative with respect to the raw score."""

    atom: Atom
    positive: bool
    score: float
    dl_ds: float
    trace: TraceNode | None


def loss_terms(batch: Batch, prover: Prover, clip: float) -> tuple:
    """Total cross-entropy loss and per-example terms for backward.

    Scores are clipped to [clip, 1 - clip] before the logs; the ceiling
    additionally stays one float64 ulp-ish below 1 so log(1 - s) stays
    finite for arbitrarily small clip values."""
    kb = prover.kb
    ceil = 1.0 - max(clip, 1e-12)
    total = 0.0
    terms = []
    for fid in batch.positives:
        fact = kb.clause_by_id(fid)
        res = prover.prove(fact.head, mask=fid)
        s = min(max(res.score, clip), ceil)
        total -= float(np.log(s))
        dl = -1.0 / s if clip < res.score < ceil else 0.0
        terms.append(ExampleTerm(fact.head, True, res.score, dl, res.trace))
    for atom, _src, _slot in batch.negatives:
        res = prover.prove(atom, mask=None)
        s = min(max(res.score, clip), ceil)
        total -= float(np.log(1.0 - s))
        dl = 1.0 / (1.0 - s) if clip < res.score < ceil else 0.0
        terms.append(ExampleTerm(atom, False, res.score, dl, res.trace))
    if not np.isfinite(total):
        raise TrainingDiverged(f"non-finite loss {total}")
    return total, terms


def backward(terms: list, store: ParamStore, kcfg: KernelConfig = DEFAULT_KERNEL) -> Gradients:
    """Accumulate d(loss)/d(params) from the traced best proofs.

    Per example the gradient flows only through the argmin comparison of
    the best path; ties route to the first comparison in enumeration
    order. Rows not touched by any selected path get exactly zero."""
    grads = Gradients()
    for term in terms:
        if term.trace is None or term.dl_ds == 0.0:
            continue
        comps = trace_comparisons(term.trace)
        values = [v for _l, _r, v in comps]
        path_min = min(values)
        if term.score != path_min:
            raise ValueError(
                f"trace/score mismatch: score {term.score} vs trace min {path_min}"
            )
        left, right, _v = comps[values.index(path_min)]
        gu, gv = kernel_grad(store.rep_of(left), store.rep_of(right), kcfg)
        _route(grads, store, left, term.dl_ds * gu)
        _route(grads, store, right, term.dl_ds * gv)
    return grads


def _route(grads: Gradients, store: ParamStore, sym: Sym, g: np.ndarray) -> None:
    kind = sym.kind
    if kind == PATTERN and store.encode_mentions:
        tokens = store.kb.pattern_tokens(sym.id)
        share = g / len(tokens)
        for tok in tokens:
            grads.add("V", tok.id, share)
    elif kind == PATTERN:
        grads.add("P", sym.id, g)
    elif kind == SLOT and store.attention_enabled:
        weights = softmax(store.A[sym.id])
        proj = store.R @ g
        grads.add("A", sym.id, weights * (proj - float(weights @ proj)))
        for i in range(store.R.shape[0]):
            grads.add("R", i, weights[i] * g)
    elif kind == SLOT:
        grads.add("S", sym.id, g)
    elif kind == ENT:
        grads.add("E", sym.id, g)
    else:
        grads.add("R", sym.id, g)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_metric: float
    seconds: float


@dataclass
class TrainResult:
    store: ParamStore
    opt: AdamState
    history: list = field(default_factory=list)
    best_val: float = float("nan")
    best_epoch: int = -1


def train(
    kb: KB,
    store: ParamStore,
    cfg: TrainConfig,
    proof_cfg: ProofConfig = ProofConfig(),
    kcfg: KernelConfig = DEFAULT_KERNEL,
    val_fn=None,
    on_epoch=None,
) -> TrainResult:
    """Run the full training loop; returns the best-validation store
    when a validation function is supplied, else the final store.

    ``val_fn(prover) -> float`` computes the validation metric (higher
    is better). Divergence (non-finite loss) aborts with the current
    parameters preserved on the result via :class:`TrainingDiverged`.
    """
    index = NeighborIndex(kb, store, refresh_interval=cfg.index_refresh)
    prover = Prover(kb, store, index, proof_cfg, kcfg)
    opt = AdamState()
    opt.ensure(store)
    result = TrainResult(store=store, opt=opt)
    best_store = None
    best_val = -np.inf
    stale = 0
    epoch_base = 0
    positives = [f.cid for f in kb.facts]

    phases = cfg.phases()
    for phase_i, (phase_epochs, frozen) in enumerate(phases):
        last_phase = phase_i == len(phases) - 1
        for e in range(phase_epochs):
            epoch = epoch_base + e
            t0 = time.perf_counter()
            rng = np.random.default_rng((cfg.seed, epoch))
            order = rng.permutation(len(positives))
            epoch_loss = 0.0
            for start in range(0, len(order), cfg.batch_size):
                ids = [positives[i] for i in order[start : start + cfg.batch_size]]
                negatives = []
                for fid in ids:
                    negatives.extend(
                        corrupt(kb.clause_by_id(fid), kb, rng, cfg.negatives_per_slot)
                    )
                batch = Batch(ids, negatives)
                try:
                    batch_loss, terms = loss_terms(batch, prover, cfg.clip)
                except TrainingDiverged:
                    result.history.append(EpochLog(epoch, float("nan"), best_val, 0.0))
                    raise
                epoch_loss += batch_loss
                grads = backward(terms, store, kcfg)
                apply_gradients(store, grads, opt, cfg.lr, cfg.l2, freeze=frozen)
                index.tick_and_maybe_refresh(store)

            val_metric = float("nan")
            if val_fn is not None and (epoch + 1) % cfg.eval_every == 0:
                val_metric = float(val_fn(prover))
                if val_metric > best_val:
                    best_val = val_metric
                    best_store = store.copy()
                    result.best_epoch = epoch
                    stale = 0
                else:
                    stale += 1
            seconds = time.perf_counter() - t0
            entry = EpochLog(epoch, epoch_loss, val_metric, seconds)
            result.history.append(entry)
            if on_epoch is not None:
                on_epoch(entry)
            if last_phase and cfg.early_stop_patience and stale >= cfg.early_stop_patience:
                log.info("early stop at epoch %d (best val %.4f)", epoch, best_val)
                epoch_base = epoch + 1
                break
        else:
            epoch_base += phase_epochs
            continue
        break

    if best_store is not None:
        result.store = best_store
        result.best_val = best_val
    return result
