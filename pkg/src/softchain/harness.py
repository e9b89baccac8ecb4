"""Run-level orchestration shared by the CLI and the test harness:
configured training runs, evaluation reports, and the scalability
benchmark."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np
import psutil

from .datasets import LoadedDataset, PRESETS, load_dataset
from .evaluation import (
    auc_pr,
    corruption_atoms,
    evaluate_auc_pr,
    evaluate_ranking,
    rank_against,
)
from .kb import ENT, Atom, Sym
from .kernel import KernelConfig
from .nns import NeighborIndex
from .params import AdamState, ParamStore, init_params, save_checkpoint
from .prover import ProofConfig, Prover
from .training import TrainConfig, TrainResult, train


@dataclass
class RunConfig:
    """Everything one run needs; unknown keys are rejected at parse time."""

    dataset: str = ""
    data_root: str = ""
    seed: int = 0
    k: int = 100
    depth: int = 2
    k_facts: int = 3
    k_rules: int = 3
    kernel_bandwidth: float = 2.0
    lr: float = 0.01
    l2: float = 0.0001
    batch_size: int = 50
    epochs: int = 100
    negatives_per_slot: int = 1
    clip: float = 1e-10
    schedule: str = "joint"
    index_refresh: int = 10
    early_stop_patience: int = 10
    attention: bool = False
    mention_encoder: bool = True
    mention_fraction: float = 0.0
    mention_seed: int = 0
    threads: int = 1

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def from_preset(name: str, **overrides) -> RunConfig:
    preset = PRESETS[name]
    cfg = RunConfig(
        dataset=name,
        k=preset.k,
        depth=preset.depth,
        k_facts=preset.k_facts,
        k_rules=preset.k_rules,
        kernel_bandwidth=preset.bandwidth,
        lr=preset.lr,
        l2=preset.l2,
        batch_size=preset.batch_size,
        epochs=preset.epochs,
        clip=preset.clip,
        early_stop_patience=preset.early_stop_patience,
        schedule=preset.schedule,
        attention=preset.attention,
    )
    return replace(cfg, **overrides)


def parse_config_file(text: str) -> dict:
    """key=value lines -> RunConfig field overrides. Unknown keys and
    untypeable values are rejected."""
    fields = {f: t for f, t in RunConfig.__annotations__.items()}
    out: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {line_no}: unknown config key {key!r}")
        ftype = fields[key]
        if ftype is bool or ftype == "bool":
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif ftype is int or ftype == "int":
            out[key] = int(value)
        elif ftype is float or ftype == "float":
            out[key] = float(value)
        else:
            out[key] = value
    return out


def train_cfg_of(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr,
        l2=cfg.l2,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        negatives_per_slot=cfg.negatives_per_slot,
        seed=cfg.seed,
        clip=cfg.clip,
        schedule=cfg.schedule,
        index_refresh=cfg.index_refresh,
        early_stop_patience=cfg.early_stop_patience,
    )


def proof_cfg_of(cfg: RunConfig) -> ProofConfig:
    return ProofConfig(max_depth=cfg.depth, k_facts=cfg.k_facts, k_rules=cfg.k_rules)


def make_val_fn(data: LoadedDataset, cfg: RunConfig):
    """Validation probe driving model selection and early stopping.

    Countries: AUC-PR over the validation (country, region) pairs.
    Ranking: mean reciprocal rank over a seeded subsample of validation
    facts against a seeded subsample of filtered corruptions (the full
    protocol is reserved for final evaluation)."""
    if data.preset.protocol == "countries":
        def val_auc(prover: Prover) -> float:
            result = evaluate_auc_pr(data.valid, prover)
            prover.reset_transient()
            return result.auc_pr

        return val_auc

    rng = np.random.default_rng((cfg.seed, 60001))
    atoms = list(data.valid)
    sample = data.preset.val_sample
    if sample and len(atoms) > sample:
        atoms = [atoms[i] for i in rng.choice(len(atoms), size=sample, replace=False)]
    n_corr = data.preset.val_corruptions

    def val_mrr(prover: Prover) -> float:
        rr = []
        for atom in atoms:
            test_score = prover.prove(atom).score
            for slot in ("subject", "object"):
                cands = corruption_atoms(atom, slot, prover.kb, data.filter_kb)
                if n_corr and len(cands) > n_corr:
                    pick_rng = np.random.default_rng(
                        (cfg.seed, atom.pred.id, atom.args[0].id, atom.args[1].id)
                    )
                    cands = [cands[i] for i in pick_rng.choice(len(cands), size=n_corr, replace=False)]
                scores = [prover.prove(c).score for c in cands]
                rr.append(1.0 / rank_against(test_score, scores))
            prover.reset_transient()
        return float(np.mean(rr))

    return val_mrr


@dataclass
class RunOutput:
    cfg: RunConfig
    data: LoadedDataset
    result: TrainResult
    store: ParamStore
    wall_seconds: float


def run_training(cfg: RunConfig, data: LoadedDataset | None = None, on_epoch=None) -> RunOutput:
    t0 = time.perf_counter()
    if data is None:
        data = load_dataset(
            cfg.dataset,
            cfg.data_root or None,
            mention_fraction=cfg.mention_fraction,
            mention_seed=cfg.mention_seed,
        )
    store = init_params(
        data.kb,
        k=cfg.k,
        seed=cfg.seed,
        attention_enabled=cfg.attention,
        encode_mentions=cfg.mention_encoder,
    )
    kcfg = KernelConfig(cfg.kernel_bandwidth)
    result = train(
        data.kb,
        store,
        train_cfg_of(cfg),
        proof_cfg_of(cfg),
        kcfg,
        val_fn=make_val_fn(data, cfg),
        on_epoch=on_epoch,
    )
    return RunOutput(cfg, data, result, result.store, time.perf_counter() - t0)


def fresh_prover(data: LoadedDataset, store: ParamStore, cfg: RunConfig) -> Prover:
    index = NeighborIndex(data.kb, store, refresh_interval=cfg.index_refresh)
    return Prover(data.kb, store, index, proof_cfg_of(cfg), KernelConfig(cfg.kernel_bandwidth))


def evaluate_run(data: LoadedDataset, store: ParamStore, cfg: RunConfig, split: str = "test") -> dict:
    """Evaluation report for one split under the dataset's protocol."""
    t0 = time.perf_counter()
    prover = fresh_prover(data, store, cfg)
    items = data.test if split == "test" else data.valid
    report: dict = {
        "dataset": data.name,
        "split": split,
        "protocol": data.preset.protocol,
        "config_hash": cfg.config_hash(),
    }
    if data.preset.protocol == "countries":
        pr = evaluate_auc_pr(items, prover)
        report["auc_pr"] = pr.auc_pr
        report["n_candidates"] = len(items)
    else:
        ranking = evaluate_ranking(items, prover, data.filter_kb)
        report["mrr"] = ranking.mrr
        report["hits"] = {str(m): v for m, v in ranking.hits.items()}
        report["ranks"] = [list(pair) for pair in ranking.ranks]
    report["wall_seconds"] = time.perf_counter() - t0
    return report


# ----------------------------------------------------------------------
# benchmark


@dataclass
class BenchRecord:
    dataset: str
    k_facts: int
    k_rules: int
    mode: str  # pruned | exhaustive
    examples_per_second: float
    peak_memory_bytes: int
    seconds_per_epoch: float
    out_of_budget: bool = False

    def csv_row(self) -> str:
        return (
            f"{self.dataset},{self.k_facts},{self.k_rules},{self.mode},"
            f"{self.examples_per_second:.4f},{self.peak_memory_bytes},"
            f"{self.seconds_per_epoch:.4f},{int(self.out_of_budget)}"
        )


BENCH_CSV_HEADER = "dataset,k_facts,k_rules,mode,examples_per_second,peak_memory_bytes,seconds_per_epoch,out_of_budget"


def benchmark_dataset(
    cfg: RunConfig,
    grid: list,
    batches: int = 10,
    state_budget: int = 2_000_000,
    data: LoadedDataset | None = None,
) -> list:
    """Timed training batches per (k_f, k_r) grid point, in pruned mode
    and in exhaustive mode (all facts, all rules per group). Exhaustive
    points whose estimated state count exceeds the budget are recorded
    as out-of-budget rather than run."""
    if data is None:
        data = load_dataset(cfg.dataset, cfg.data_root or None)
    records = []
    n_facts = max(1, len(data.kb.facts))
    max_group = max(
        [len(cls) for _s, cls in data.kb.partitioning().rule_groups()] or [1]
    )
    body_len = max([len(r.body) for r in data.kb.rules] or [1])
    for k_f, k_r in grid:
        records.append(_bench_one(cfg, data, k_f, k_r, "pruned", batches))
    # one exhaustive reference point (independent of the grid)
    est_states = (n_facts * 1.0) ** min(body_len, 2) * max(max_group, 1)
    record = None
    if est_states > state_budget:
        record = BenchRecord(cfg.dataset, n_facts, max_group, "exhaustive", 0.0, 0, 0.0, True)
    else:
        record = _bench_one(cfg, data, n_facts, max_group, "exhaustive", batches)
    records.append(record)
    return records


def _bench_one(cfg: RunConfig, data: LoadedDataset, k_f: int, k_r: int, mode: str, batches: int) -> BenchRecord:
    from .training import Batch, backward, corrupt, loss_terms

    run_cfg = replace(cfg, k_facts=k_f, k_rules=k_r)
    store = init_params(data.kb, k=cfg.k, seed=cfg.seed)
    kcfg = KernelConfig(cfg.kernel_bandwidth)
    index = NeighborIndex(data.kb, store, refresh_interval=cfg.index_refresh)
    prover = Prover(data.kb, store, index, proof_cfg_of(run_cfg), kcfg)
    opt = AdamState()
    opt.ensure(store)
    rng = np.random.default_rng(cfg.seed)
    process = psutil.Process()
    rss0 = process.memory_info().rss
    peak = rss0
    n_examples = 0
    t0 = time.perf_counter()
    fact_ids = [f.cid for f in data.kb.facts]
    for b in range(batches):
        ids = [fact_ids[i] for i in rng.integers(len(fact_ids), size=cfg.batch_size)]
        negatives = []
        for fid in ids:
            negatives.extend(corrupt(data.kb.clause_by_id(fid), data.kb, rng, 1))
        batch = Batch(ids, negatives)
        _loss, terms = loss_terms(batch, prover, cfg.clip)
        grads = backward(terms, store, kcfg)
        from .params import apply_gradients

        apply_gradients(store, grads, opt, cfg.lr, cfg.l2)
        index.tick_and_maybe_refresh(store)
        n_examples += len(ids) + len(negatives)
        peak = max(peak, process.memory_info().rss)
    elapsed = time.perf_counter() - t0
    per_epoch = elapsed / batches * max(1, len(fact_ids) // cfg.batch_size)
    return BenchRecord(
        cfg.dataset, k_f, k_r, mode,
        n_examples / elapsed if elapsed > 0 else 0.0,
        max(0, peak - rss0),
        per_epoch,
    )
