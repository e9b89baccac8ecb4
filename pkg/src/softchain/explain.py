"""Human-readable views of trained models: decoded rules and proof
explanations.

A trained rule slot is decoded to the known predicate (or mention
pattern) whose representation is kernel-nearest; the decoded rule's
confidence is the minimum slot confidence. A proof explanation renders
the best trace as the decoded clause per level plus the supporting
facts, with the kernel comparisons that produced the score.
"""

from __future__ import annotations

from dataclasses import dataclass

from .kb import KB, PATTERN, PRED, SLOT, Atom, Clause, Sym, Var
from .kernel import DEFAULT_KERNEL, KernelConfig, kernel
from .params import ParamStore
from .prover import ProofResult, TraceNode, trace_comparisons


@dataclass
class DecodedRule:
    clause: Clause
    slot_map: dict  # slot Sym -> (decoded Sym, kernel confidence)
    confidence: float
    text: str


def _candidate_syms(kb: KB) -> list:
    cands = [Sym(PRED, i) for i in range(kb.vocab.size(PRED))]
    cands.extend(Sym(PATTERN, p.pid) for p in kb.patterns)
    return cands


def nearest_predicate(slot_rep, kb: KB, store: ParamStore, kcfg: KernelConfig) -> tuple:
    """(symbol, kernel score) of the closest known predicate or pattern."""
    best_sym = None
    best_v = -1.0
    for sym in _candidate_syms(kb):
        v = kernel(slot_rep, store.rep_of(sym), kcfg)
        if v > best_v:
            best_v = v
            best_sym = sym
    return best_sym, best_v


def _decoded_atom_str(kb: KB, atom: Atom, slot_map: dict) -> str:
    pred = atom.pred
    if pred.kind == SLOT and pred in slot_map:
        pred = slot_map[pred][0]
    shown = Atom(pred, atom.args)
    return kb.atom_str(shown)


def decode_rules(
    store: ParamStore,
    kb: KB,
    kcfg: KernelConfig = DEFAULT_KERNEL,
    min_confidence: float = 0.0,
) -> list:
    """Decode every rule template to its nearest known predicates,
    sorted by descending confidence."""
    out = []
    for clause in kb.rules:
        slot_map = {}
        for atom in (clause.head, *clause.body):
            if atom.pred.kind == SLOT and atom.pred not in slot_map:
                sym, v = nearest_predicate(store.rep_of(atom.pred), kb, store, kcfg)
                slot_map[atom.pred] = (sym, v)
        confidence = min(v for _s, v in slot_map.values()) if slot_map else 1.0
        if confidence < min_confidence:
            continue
        head_s = _decoded_atom_str(kb, clause.head, slot_map)
        body_s = ", ".join(_decoded_atom_str(kb, a, slot_map) for a in clause.body)
        out.append(DecodedRule(clause, slot_map, confidence, f"{head_s} :- {body_s}"))
    out.sort(key=lambda r: -r.confidence)
    return out


# ----------------------------------------------------------------------
# proof explanations


def _node_dict(kb: KB, store: ParamStore, node: TraceNode, kcfg: KernelConfig) -> dict:
    clause = kb.clause_by_id(node.clause_id)
    entry: dict = {
        "kind": node.kind,
        "clause_id": node.clause_id,
        "comparisons": [
            {"left": kb.pred_str(l) if l.kind != "entity" else kb.vocab.name(l),
             "right": kb.pred_str(r) if r.kind != "entity" else kb.vocab.name(r),
             "kernel": v}
            for l, r, v in node.comps
        ],
    }
    if node.kind == "fact":
        entry["fact"] = kb.atom_str(clause.head)
    else:
        slot_map = {}
        for atom in (clause.head, *clause.body):
            if atom.pred.kind == SLOT and atom.pred not in slot_map:
                sym, v = nearest_predicate(store.rep_of(atom.pred), kb, store, kcfg)
                slot_map[atom.pred] = (sym, v)
        head_s = _decoded_atom_str(kb, clause.head, slot_map)
        body_s = ", ".join(_decoded_atom_str(kb, a, slot_map) for a in clause.body)
        entry["rule"] = f"{head_s} :- {body_s}"
        entry["children"] = [_node_dict(kb, store, c, kcfg) for c in node.children]
    return entry


def explanation_dict(
    goal: Atom, result: ProofResult, kb: KB, store: ParamStore,
    kcfg: KernelConfig = DEFAULT_KERNEL,
) -> dict:
    out = {"goal": kb.atom_str(goal), "score": result.score}
    if result.trace is None:
        out["proof"] = None
    else:
        out["proof"] = _node_dict(kb, store, result.trace, kcfg)
    return out


def render_explanation(
    goal: Atom, result: ProofResult, kb: KB, store: ParamStore,
    kcfg: KernelConfig = DEFAULT_KERNEL,
) -> str:
    """Plain-text rendering of the best proof of a goal."""
    lines = [f"goal: {kb.atom_str(goal)}"]
    if result.trace is None:
        lines.append("no proof found (score 0)")
        return "\n".join(lines)
    lines.append(f"score: {result.score:.6g}")

    def walk(node: TraceNode, depth: int) -> None:
        pad = "  " * depth
        clause = kb.clause_by_id(node.clause_id)
        if node.kind == "fact":
            lines.append(f"{pad}fact: {kb.atom_str(clause.head)}")
        else:
            slot_map = {}
            for atom in (clause.head, *clause.body):
                if atom.pred.kind == SLOT and atom.pred not in slot_map:
                    sym, v = nearest_predicate(store.rep_of(atom.pred), kb, store, kcfg)
                    slot_map[atom.pred] = (sym, v)
            head_s = _decoded_atom_str(kb, clause.head, slot_map)
            body_s = ", ".join(_decoded_atom_str(kb, a, slot_map) for a in clause.body)
            lines.append(f"{pad}rule: {head_s} :- {body_s}")
            for child in node.children:
                walk(child, depth + 1)

    walk(result.trace, 1)
    return "\n".join(lines)
