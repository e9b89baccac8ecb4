"""Trainable parameters and embedding lookups.

One store owns every table the model can touch:

  * ``R``: KB predicate embeddings,
  * ``E``: entity embeddings,
  * ``V``: token embeddings (mention encoder),
  * ``P``: per-pattern rows used when the mention encoder is disabled and
    each surface pattern is treated as an opaque predicate,
  * ``S``: free rule-slot rows (standard rule learning),
  * ``A``: per-slot attention weights over the rows of ``R`` (attention
    rule learning; replaces ``S`` when enabled).

All tables share the embedding dimension ``k``; token dimension equals
``k`` so mean-pooled patterns land directly in predicate space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kb import ENT, KB, PATTERN, PRED, SLOT, TOK, Sym

TABLES = ("R", "E", "V", "P", "S", "A")
_KIND_TABLE = {PRED: "R", ENT: "E", TOK: "V"}


class ParamStore:
    def __init__(
        self,
        kb: KB,
        k: int,
        tables: dict,
        attention_enabled: bool = False,
        encode_mentions: bool = True,
    ):
        self.kb = kb
        self.k = k
        self.R = tables["R"]
        self.E = tables["E"]
        self.V = tables["V"]
        self.P = tables["P"]
        self.S = tables["S"]
        self.A = tables["A"]
        self.attention_enabled = attention_enabled
        self.encode_mentions = encode_mentions
        # bumped whenever a table is mutated; caches key off it
        self.version = 0

    def table(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def rep_of(self, sym: Sym) -> np.ndarray:
        """The k-dimensional representation of any symbol.

        Predicates and entities are table rows; mention patterns go
        through the token encoder (or their opaque row); rule slots go
        through attention when enabled, else their own free row.
        """
        kind = sym.kind
        if kind == PATTERN:
            if self.encode_mentions:
                return self.encode_pattern(self.kb.pattern_tokens(sym.id))
            return self._row("P", sym.id)
        if kind == SLOT:
            if self.attention_enabled:
                return self.attention_rep(self._row("A", sym.id))
            return self._row("S", sym.id)
        table = _KIND_TABLE.get(kind)
        if table is None:
            raise KeyError(f"cannot resolve symbol kind {kind!r}")
        return self._row(table, sym.id)

    def _row(self, table: str, idx: int) -> np.ndarray:
        arr = self.table(table)
        if not 0 <= idx < arr.shape[0]:
            raise KeyError(f"unresolved id {idx} for table {table} of size {arr.shape[0]}")
        return arr[idx]

    def attention_rep(self, weights: np.ndarray) -> np.ndarray:
        """Convex combination of predicate rows under softmax weights."""
        if weights.shape[0] != self.R.shape[0]:
            raise ValueError(
                f"attention length {weights.shape[0]} != predicate count {self.R.shape[0]}"
            )
        return softmax(weights) @ self.R

    def encode_pattern(self, tokens) -> np.ndarray:
        """Mean of the token rows of a surface pattern."""
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty token sequence")
        ids = []
        for tok in tokens:
            if not 0 <= tok.id < self.V.shape[0]:
                raise KeyError(f"token id {tok.id} outside closed vocabulary")
            ids.append(tok.id)
        return self.V[ids].mean(axis=0)

    def bump_version(self) -> None:
        self.version += 1

    def rule_parameter_count(self, clause) -> int:
        """Trainable parameters introduced by one template instance."""
        slots = {a.pred for a in (clause.head, *clause.body) if a.pred.kind == SLOT}
        per_slot = self.R.shape[0] if self.attention_enabled else self.k
        return len(slots) * per_slot

    def copy(self) -> "ParamStore":
        tables = {name: self.table(name).copy() for name in TABLES}
        out = ParamStore(self.kb, self.k, tables, self.attention_enabled, self.encode_mentions)
        out.version = self.version
        return out


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x)
    e = np.exp(z)
    return e / e.sum()


def init_params(
    kb: KB,
    k: int = 100,
    seed: int = 0,
    attention_enabled: bool = False,
    encode_mentions: bool = True,
) -> ParamStore:
    """Fresh store with N(0, 1) rows and zero attention weights.

    Zero attention weights make every fresh slot start as the uniform
    mixture of predicate rows. Deterministic under a fixed seed.
    """
    if k < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {k}")
    sizes = {
        "R": kb.vocab.size(PRED),
        "E": kb.vocab.size(ENT),
        "V": kb.vocab.size(TOK),
        "P": len(kb.patterns),
        "S": kb.vocab.size(SLOT),
    }
    if sizes["E"] == 0 and kb.facts:
        raise ValueError("entity vocabulary is empty but facts reference entities")
    if attention_enabled and sizes["S"] > 0 and sizes["R"] == 0:
        raise ValueError("attention needs a nonempty predicate vocabulary")
    rng = np.random.default_rng(seed)
    tables = {
        name: rng.standard_normal((sizes[name], k)) for name in ("R", "E", "V", "P", "S")
    }
    tables["A"] = np.zeros((sizes["S"], sizes["R"]))
    return ParamStore(kb, k, tables, attention_enabled, encode_mentions)


class Gradients:
    """Sparse per-row gradient accumulators mirroring the store tables."""

    def __init__(self) -> None:
        self.rows: dict = {name: {} for name in TABLES}

    def add(self, table: str, idx: int, grad: np.ndarray) -> None:
        acc = self.rows[table].get(idx)
        if acc is None:
            self.rows[table][idx] = grad.copy()
        else:
            acc += grad

    def merge(self, other: "Gradients") -> None:
        for table, rows in other.rows.items():
            for idx, grad in rows.items():
                self.add(table, idx, grad)

    def is_empty(self) -> bool:
        return all(not rows for rows in self.rows.values())

    def items(self):
        for table, rows in self.rows.items():
            for idx, grad in rows.items():
                yield table, idx, grad


@dataclass
class AdamState:
    """Per-table first/second moment accumulators plus the global step."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, store: ParamStore) -> None:
        for name in TABLES:
            arr = store.table(name)
            if name not in self.m or self.m[name].shape != arr.shape:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)


def apply_gradients(
    store: ParamStore,
    grads: Gradients,
    opt: AdamState,
    lr: float,
    l2: float = 0.0,
    freeze: frozenset = frozenset(),
) -> None:
    """One Adam step over the touched rows, in place.

    Bias correction uses the global step count and is applied only to
    rows with accumulated gradient. L2 regularisation is decoupled
    weight decay on the same touched rows. Frozen tables are skipped.
    """
    opt.ensure(store)
    opt.t += 1
    bc1 = 1.0 - opt.beta1**opt.t
    bc2 = 1.0 - opt.beta2**opt.t
    for table, idx, grad in grads.items():
        if table in freeze:
            continue
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient for {table}[{idx}]")
        m = opt.m[table][idx]
        v = opt.v[table][idx]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (grad * grad)
        m_hat = m / bc1
        v_hat = v / bc2
        row = store.table(table)[idx]
        row -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        if l2:
            row -= lr * l2 * row
    store.bump_version()


# ----------------------------------------------------------------------
# checkpointing

CHECKPOINT_VERSION = 1


def save_checkpoint(path, store: ParamStore, opt: AdamState | None = None, config: dict | None = None) -> None:
    kb = store.kb
    meta = {
        "version": CHECKPOINT_VERSION,
        "k": store.k,
        "attention_enabled": store.attention_enabled,
        "encode_mentions": store.encode_mentions,
        "vocab": {kind: kb.vocab.names(kind) for kind in ("predicate", "entity", "token", "slot")},
        "patterns": [[t.id for t in pat.tokens] for pat in kb.patterns],
        "config": config or {},
        "adam": None,
    }
    arrays = {name: store.table(name) for name in TABLES}
    if opt is not None:
        meta["adam"] = {"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t}
        for name in TABLES:
            if name in opt.m:
                arrays[f"adam_m_{name}"] = opt.m[name]
                arrays[f"adam_v_{name}"] = opt.v[name]
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, kb: KB):
    """Load a checkpoint against a KB parsed from the same dataset.

    The checkpoint's vocabularies must match the KB's exactly; a
    mismatch means the model and the data disagree about symbol ids.
    Returns ``(store, opt, config)``.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        for kind, names in meta["vocab"].items():
            if names != kb.vocab.names(kind):
                raise VocabMismatch(f"vocabulary mismatch for kind {kind!r}")
        patterns = [[t.id for t in pat.tokens] for pat in kb.patterns]
        if meta["patterns"] != patterns:
            raise VocabMismatch("mention pattern inventory mismatch")
        tables = {name: data[name].copy() for name in TABLES}
        store = ParamStore(
            kb, meta["k"], tables, meta["attention_enabled"], meta["encode_mentions"]
        )
        opt = None
        if meta["adam"] is not None:
            opt = AdamState(
                beta1=meta["adam"]["beta1"],
                beta2=meta["adam"]["beta2"],
                eps=meta["adam"]["eps"],
                t=meta["adam"]["t"],
            )
            for name in TABLES:
                key = f"adam_m_{name}"
                if key in data:
                    opt.m[name] = data[key].copy()
                    opt.v[name] = data[f"adam_v_{name}"].copy()
        return store, opt, meta["config"]


class VocabMismatch(ValueError):
    pass
