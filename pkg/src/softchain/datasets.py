"""Dataset presets, generators, and loaders.

Each preset bundles a loader, an evaluation protocol, rule templates,
and default hyperparameters. The benchmark-shaped corpora (countries
with regions/subregions/neighbourhoods, and the three relational KBs)
are produced by seeded generators that plant learnable regularities
(inverse, implication and composition structure plus noise) at the
published vocabulary sizes, so every preset is reproducible from the
code alone; ``ensure_dataset`` materialises the files on first use.

Protocols: ``countries`` datasets are evaluated by AUC-PR over
(held-out country, region) candidates; the relational datasets by
filtered MRR/HITS ranking.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kb import (
    ENT,
    KB,
    PRED,
    Atom,
    parse_mention_templates,
    parse_rule_templates,
    parse_triples,
)

DATA_ROOT_ENV = "SOFTCHAIN_DATA"


def data_root(override=None) -> Path:
    if override:
        return Path(override)
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


# ----------------------------------------------------------------------
# countries world

REGIONS = {
    "africa": ["northern_africa", "eastern_africa", "middle_africa", "southern_africa", "western_africa"],
    "americas": ["caribbean", "central_america", "northern_america", "south_america"],
    "asia": ["central_asia", "eastern_asia", "northern_asia", "southern_asia", "south_eastern_asia", "western_asia"],
    "europe": ["eastern_europe", "northern_europe", "southern_europe", "western_europe"],
    "oceania": ["australia_and_new_zealand", "melanesia", "micronesia", "polynesia"],
}

N_COUNTRIES = 244

LOCATED_IN_MENTIONS = [
    "[arg1] is located in [arg2]", "[arg1] is situated in [arg2]",
    "[arg1] is placed in [arg2]", "[arg1] is positioned in [arg2]",
    "[arg1] is sited in [arg2]", "[arg1] is currently in [arg2]",
    "[arg1] can be found in [arg2]", "[arg1] is still in [arg2]",
    "[arg1] is localized in [arg2]", "[arg1] is present in [arg2]",
    "[arg1] is contained in [arg2]", "[arg1] is found in [arg2]",
    "[arg1] was located in [arg2]", "[arg1] was situated in [arg2]",
    "[arg1] was placed in [arg2]", "[arg1] was positioned in [arg2]",
    "[arg1] was sited in [arg2]", "[arg1] was currently in [arg2]",
    "[arg1] used to be found in [arg2]", "[arg1] was still in [arg2]",
    "[arg1] was localized in [arg2]", "[arg1] was present in [arg2]",
    "[arg1] was contained in [arg2]", "[arg1] was found in [arg2]",
]

NEIGHBOR_OF_MENTIONS = [
    "[arg1] is adjacent to [arg2]", "[arg1] borders with [arg2]",
    "[arg1] is butted against [arg2]", "[arg1] neighbours [arg2]",
    "[arg1] is a neighbor of [arg2]", "[arg1] is a neighboring country of [arg2]",
    "[arg1] is a neighboring state to [arg2]", "[arg1] was adjacent to [arg2]",
    "[arg1] borders [arg2]", "[arg1] was butted against [arg2]",
    "[arg1] neighbours with [arg2]", "[arg1] was a neighbor of [arg2]",
    "[arg1] was a neighboring country of [arg2]",
    "[arg1] was a neighboring state to [arg2]",
]


def countries_mention_text() -> str:
    lines = [f"locatedIn\t{s}" for s in LOCATED_IN_MENTIONS]
    lines += [f"neighborOf\t{s}" for s in NEIGHBOR_OF_MENTIONS]
    return "\n".join(lines) + "\n"


def generate_countries_world(seed: int = 7) -> dict:
    """A world of countries on a circular geography: every country lives
    in one subregion (subregions grouped by region), and borders mostly
    its angular neighbours, which keeps borders local to regions without
    making them perfectly so.

    Like any real KB the location layer is incomplete, and the gaps are
    geographically correlated: contiguous poorly-mapped arcs miss either
    the country->subregion or the country->region atom. Held-out
    countries are drawn from fully-mapped ones with at least one
    training neighbor.

    Returns the triples plus the split and role inventory."""
    rng = np.random.default_rng(seed)
    subregions = [s for subs in REGIONS.values() for s in subs]
    region_of = {s: r for r, subs in REGIONS.items() for s in subs}

    counts = np.full(len(subregions), N_COUNTRIES // len(subregions))
    for i in rng.choice(len(subregions), N_COUNTRIES - counts.sum(), replace=False):
        counts[i] += 1
    countries = []
    sub_of = {}
    idx = 0
    for sub, cnt in zip(subregions, counts):
        for _ in range(cnt):
            name = f"country{idx:03d}"
            countries.append(name)
            sub_of[name] = sub
            idx += 1

    # neighbourhood: the nearest countries along the circle plus a few
    # long-range borders; most borders are stored in both directions
    n = len(countries)
    edges = set()
    for i in range(n):
        edges.add((min(i, (i + 1) % n), max(i, (i + 1) % n)))
        if rng.random() < 0.25:
            j = (i + 2) % n
            edges.add((min(i, j), max(i, j)))
    extra = int(0.12 * n)
    while extra > 0:
        a, b = int(rng.integers(n)), int(rng.integers(n))
        if a != b and (min(a, b), max(a, b)) not in edges:
            edges.add((min(a, b), max(a, b)))
            extra -= 1

    # incomplete location layers, like any real KB: almost every country
    # carries its subregion atom, but the coarse region tag is only
    # present for roughly half of them
    no_sub = {c for c in countries if rng.random() < 0.06}
    no_region = {c for c in countries if rng.random() < 0.45}

    triples = []
    for c in countries:
        if c not in no_sub:
            triples.append((c, "locatedIn", sub_of[c]))
        if c not in no_region:
            triples.append((c, "locatedIn", region_of[sub_of[c]]))
    for s in subregions:
        triples.append((s, "locatedIn", region_of[s]))
    for a, b in sorted(edges):
        ca, cb = countries[a], countries[b]
        if rng.random() < 0.9:
            triples.append((ca, "neighborOf", cb))
            triples.append((cb, "neighborOf", ca))
        elif rng.random() < 0.5:
            triples.append((ca, "neighborOf", cb))
        else:
            triples.append((cb, "neighborOf", ca))

    # held-out splits: fully-mapped countries, each keeping at least one
    # fully-mapped training neighbor
    neighbor_sets: dict = {c: set() for c in countries}
    for s, p, o in triples:
        if p == "neighborOf":
            neighbor_sets[s].add(o)
            neighbor_sets[o].add(s)
    complete = [c for c in countries if c not in no_sub and c not in no_region]
    complete_set = set(complete)
    order = list(rng.permutation(complete))
    held: list = []
    for c in order:
        if len(held) == 40:
            break
        others = set(held) | {c}
        if all((neighbor_sets[h] & complete_set) - others for h in others):
            held.append(c)
    valid, test = held[:20], held[20:]

    return {
        "triples": triples,
        "valid": sorted(valid),
        "test": sorted(test),
        "regions": sorted(REGIONS),
        "subregions": sorted(subregions),
    }


COUNTRIES_TEMPLATES = {
    "S1": "4 #1(X,Y) :- #2(X,Z), #3(Z,Y)\n3 #1(X,Y) :- #2(Y,X)\n",
    "S2": "4 #1(X,Y) :- #2(X,Z), #3(Z,Y)\n3 #1(X,Y) :- #2(Y,X)\n",
    "S3": (
        "4 #1(X,Y) :- #2(X,Z), #3(Z,Y)\n"
        "3 #1(X,Y) :- #2(Y,X)\n"
        "2 #1(X,Y) :- #2(X,Z), #3(Z,W), #4(W,Y)\n"
    ),
}


# ----------------------------------------------------------------------
# relational KB generator (UMLS/Kinship/Nations shaped)


@dataclass
class RelationalSpec:
    n_entities: int
    n_predicates: int
    target_facts: int
    n_types: int
    base_fraction: float = 0.35
    coverage: float = 0.9
    noise_fraction: float = 0.08
    seed: int = 11


def generate_relational_kb(spec: RelationalSpec) -> list:
    """Triples with planted regularities.

    Base predicates hold typed random facts. Every non-base predicate is
    derived from earlier ones through a planted inverse, implication, or
    two-hop composition (applied with probability ``coverage``) plus a
    noise floor; roughly half of the predicates are additionally closed
    under symmetry. Redundant derivations are common by construction,
    which is what makes held-out facts provable from the remaining KB.
    """
    rng = np.random.default_rng(spec.seed)
    ents = [f"e{i:03d}" for i in range(spec.n_entities)]
    types = rng.integers(spec.n_types, size=spec.n_entities)
    by_type = [np.flatnonzero(types == t) for t in range(spec.n_types)]
    for t in range(spec.n_types):
        if len(by_type[t]) == 0:
            by_type[t] = np.arange(spec.n_entities)

    n_base = max(2, int(spec.base_fraction * spec.n_predicates))
    facts: set = set()
    per_pred: dict = {p: set() for p in range(spec.n_predicates)}

    def add(p: int, s: int, o: int) -> None:
        if s == o:
            return
        t = (p, s, o)
        if t not in facts:
            facts.add(t)
            per_pred[p].add((s, o))

    # base predicate budget chosen so derivation lands near target_facts
    budget = max(4, int(spec.target_facts / (2.6 * n_base)))
    for p in range(n_base):
        st, ot = int(rng.integers(spec.n_types)), int(rng.integers(spec.n_types))
        size = int(budget * float(rng.uniform(0.6, 1.6)))
        for _ in range(size):
            s = int(rng.choice(by_type[st]))
            o = int(rng.choice(by_type[ot]))
            add(p, s, o)
        if rng.random() < 0.5:  # symmetric closure
            for s, o in list(per_pred[p]):
                if rng.random() < spec.coverage:
                    add(p, o, s)

    for p in range(n_base, spec.n_predicates):
        kind = ("inverse", "implication", "chain")[int(rng.integers(3))]
        if kind == "chain":
            q, r = (int(x) for x in rng.integers(p, size=2))
            right = {}
            for s, o in per_pred[r]:
                right.setdefault(s, []).append(o)
            for s, m in per_pred[q]:
                for o in right.get(m, []):
                    if rng.random() < spec.coverage:
                        add(p, s, o)
        else:
            q = int(rng.integers(p))
            for s, o in per_pred[q]:
                if rng.random() < spec.coverage:
                    add(p, o, s) if kind == "inverse" else add(p, s, o)
        if rng.random() < 0.4:
            for s, o in list(per_pred[p]):
                if rng.random() < spec.coverage:
                    add(p, o, s)
        n_noise = int(spec.noise_fraction * max(1, len(per_pred[p])))
        for _ in range(n_noise):
            add(p, int(rng.integers(spec.n_entities)), int(rng.integers(spec.n_entities)))

    triples = [(ents[s], f"rel{p:02d}", ents[o]) for p, s, o in sorted(facts)]
    order = rng.permutation(len(triples))
    triples = [triples[i] for i in order]
    if len(triples) > spec.target_facts:
        triples = triples[: spec.target_facts]
    return triples


RELATIONAL_TEMPLATES = """\
4 #1(X,Y) :- #2(X,Y)
4 #1(X,Y) :- #2(Y,X)
4 #1(X,Y) :- #2(X,Z), #3(Z,Y)
"""


def split_triples(triples: list, seed: int, ratios=(0.8, 0.1, 0.1)) -> tuple:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(triples))
    n_train = int(ratios[0] * len(triples))
    n_valid = int(ratios[1] * len(triples))
    train = [triples[i] for i in order[:n_train]]
    valid = [triples[i] for i in order[n_train : n_train + n_valid]]
    test = [triples[i] for i in order[n_train + n_valid :]]
    return train, valid, test


def triples_text(triples: list) -> str:
    return "\n".join("\t".join(t) for t in triples) + "\n"


# ----------------------------------------------------------------------
# presets


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    protocol: str  # "countries" | "ranking"
    templates: str
    bandwidth: float = 2.0
    k: int = 100
    depth: int = 2
    k_facts: int = 3
    k_rules: int = 3
    lr: float = 0.01
    l2: float = 0.0001
    batch_size: int = 50
    epochs: int = 100
    clip: float = 1e-100
    early_stop_patience: int = 10
    schedule: str = "joint"
    attention: bool = False
    level: str = ""  # countries only
    generator: str = ""  # relational generator key
    val_sample: int = 0  # ranking: facts per validation probe (0 = all)
    val_corruptions: int = 40  # ranking: corruption sample per side


_RELATIONAL_SPECS = {
    "umls": RelationalSpec(n_entities=135, n_predicates=49, target_facts=6529, n_types=5, seed=11),
    "kinship": RelationalSpec(n_entities=104, n_predicates=25, target_facts=10686, n_types=4, seed=12),
    "nations": RelationalSpec(
        n_entities=14, n_predicates=56, target_facts=2565, n_types=1,
        coverage=0.8, noise_fraction=0.25, seed=13,
    ),
    "wn18": RelationalSpec(
        n_entities=40943, n_predicates=18, target_facts=151442, n_types=12, seed=14,
    ),
    "wn18rr": RelationalSpec(
        n_entities=40943, n_predicates=11, target_facts=93003, n_types=12, seed=15,
    ),
    "fb122": RelationalSpec(
        n_entities=9738, n_predicates=122, target_facts=112476, n_types=10, seed=16,
    ),
}

PRESETS = {}
for _lvl in ("s1", "s2", "s3"):
    PRESETS[f"countries-{_lvl}"] = DatasetPreset(
        name=f"countries-{_lvl}",
        protocol="countries",
        templates=COUNTRIES_TEMPLATES[_lvl.upper()],
        level=_lvl.upper(),
        k_facts=1,
        k_rules=1,
        batch_size=50,
        lr=0.05,
        early_stop_patience=15,
        attention=True,
    )
PRESETS["umls"] = DatasetPreset(
    name="umls", protocol="ranking", templates=RELATIONAL_TEMPLATES,
    generator="umls", batch_size=100, val_sample=40,
)
PRESETS["kinship"] = DatasetPreset(
    name="kinship", protocol="ranking", templates=RELATIONAL_TEMPLATES,
    generator="kinship", batch_size=100, val_sample=40,
)
PRESETS["nations"] = DatasetPreset(
    name="nations", protocol="ranking", templates=RELATIONAL_TEMPLATES,
    generator="nations", batch_size=50, val_sample=40,
)
for _big in ("wn18", "wn18rr", "fb122"):
    PRESETS[_big] = DatasetPreset(
        name=_big, protocol="ranking", templates=RELATIONAL_TEMPLATES,
        generator=_big, batch_size=1000, val_sample=20,
        schedule="rules-then-joint:95,5" if _big == "fb122" else "joint",
    )


def ensure_dataset(name: str, root=None) -> Path:
    """Materialise a preset's files under the data root (idempotent)."""
    preset = PRESETS.get(name)
    if preset is None:
        raise KeyError(f"unknown dataset preset {name!r}")
    base = data_root(root)
    if preset.protocol == "countries":
        return _ensure_countries(base)
    ddir = base / name
    if (ddir / "train.tsv").exists():
        return ddir
    ddir.mkdir(parents=True, exist_ok=True)
    spec = _RELATIONAL_SPECS[preset.generator]
    triples = generate_relational_kb(spec)
    train, valid, test = split_triples(triples, seed=spec.seed + 1)
    (ddir / "train.tsv").write_text(triples_text(train))
    (ddir / "valid.tsv").write_text(triples_text(valid))
    (ddir / "test.tsv").write_text(triples_text(test))
    (ddir / "templates.txt").write_text(preset.templates)
    return ddir


def _ensure_countries(base: Path) -> Path:
    ddir = base / "countries"
    if (ddir / "raw.tsv").exists():
        return ddir
    ddir.mkdir(parents=True, exist_ok=True)
    world = generate_countries_world()
    (ddir / "raw.tsv").write_text(triples_text(world["triples"]))
    (ddir / "split.json").write_text(
        json.dumps(
            {k: world[k] for k in ("valid", "test", "regions", "subregions")}, indent=1
        )
    )
    (ddir / "mentions.tsv").write_text(countries_mention_text())
    for lvl, text in COUNTRIES_TEMPLATES.items():
        (ddir / f"templates_{lvl.lower()}.txt").write_text(text)
    return ddir


@dataclass
class LoadedDataset:
    name: str
    preset: DatasetPreset
    kb: KB  # training facts + rule templates
    filter_kb: KB  # all true facts (train + valid + test)
    valid: list  # ranking: Atom list; countries: (Atom, label) list
    test: list
    mention_templates: dict = field(default_factory=dict)


def load_dataset(
    name: str,
    root=None,
    mention_fraction: float = 0.0,
    mention_seed: int = 0,
) -> LoadedDataset:
    """Load a preset's files into KBs and evaluation sets.

    ``mention_fraction`` > 0 replaces that fraction of countries
    training facts with textual mentions (countries presets only)."""
    preset = PRESETS.get(name)
    if preset is None:
        raise KeyError(f"unknown dataset preset {name!r}")
    ddir = ensure_dataset(name, root)
    if preset.protocol == "countries":
        return _load_countries(name, preset, ddir, mention_fraction, mention_seed)
    if mention_fraction:
        raise ValueError("mentionizing is only defined for the countries presets")

    kb = KB()
    parse_triples((ddir / "train.tsv").read_text(), kb)
    filter_kb = KB()
    valid_atoms: list = []
    test_atoms: list = []
    for split, sink in (("train", None), ("valid", valid_atoms), ("test", test_atoms)):
        text = (ddir / f"{split}.tsv").read_text()
        clauses = parse_triples(text, filter_kb)
        if sink is not None:
            for clause in clauses:
                pred = kb.vocab.intern(PRED, filter_kb.pred_str(clause.head.pred))
                s = kb.vocab.intern(ENT, filter_kb.vocab.name(clause.head.args[0]))
                o = kb.vocab.intern(ENT, filter_kb.vocab.name(clause.head.args[1]))
                sink.append(Atom(pred, (s, o)))
    parse_rule_templates(preset.templates, kb)
    return LoadedDataset(name, preset, kb, filter_kb, valid_atoms, test_atoms)


def _load_countries(name, preset, ddir: Path, mention_fraction, mention_seed) -> LoadedDataset:
    from .kb import build_countries_task, mentionize

    raw = KB()
    parse_triples((ddir / "raw.tsv").read_text(), raw)
    split = json.loads((ddir / "split.json").read_text())
    train_kb, eval_sets = build_countries_task(
        raw, preset.level, split["test"], split["valid"]
    )
    mentions = parse_mention_templates((ddir / "mentions.tsv").read_text())
    if mention_fraction:
        train_kb = mentionize(train_kb, mention_fraction, mentions, mention_seed)
    parse_rule_templates(preset.templates, train_kb)
    return LoadedDataset(
        name, preset, train_kb, raw, eval_sets["valid"], eval_sets["test"], mentions
    )


def subsample_facts(kb: KB, fraction: float, seed: int) -> KB:
    """A KB with the same vocabulary but only a sampled fraction of the
    facts (rules kept); used for desk-scale runs on the large corpora."""
    rng = np.random.default_rng(seed)
    n_keep = max(1, int(fraction * len(kb.facts)))
    keep = set(rng.choice(len(kb.facts), size=n_keep, replace=False).tolist())
    out = kb.copy_structure()
    for i, fact in enumerate(kb.facts):
        if i in keep:
            out.add_fact(fact.head.pred, *fact.head.args, origin=fact.origin)
    for rule in kb.rules:
        out.add_rule(rule.head, rule.body, origin=rule.origin)
    return out
