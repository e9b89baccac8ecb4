"""Differentiable backward chaining over Datalog knowledge bases.

Goals unify softly against facts and rule heads by Gaussian-kernel
similarity of symbol embeddings; proof scores aggregate by min along a
path and max across paths; candidate enumeration is pruned by exact
nearest-neighbour search; rule templates with trainable predicate slots
are induced from data and decoded back to readable rules.
"""

from .kb import KB, Atom, Clause, Sym, Var, parse_rule_templates, parse_triples
from .kernel import KernelConfig, kernel, kernel_grad
from .nns import BindingPattern, NeighborIndex
from .params import Gradients, ParamStore, init_params
from .prover import (
    ProofConfig,
    ProofResult,
    Prover,
    prove,
    prove_exhaustive,
    substitute,
    unify,
)
from .training import TrainConfig, train

__all__ = [
    "KB", "Atom", "Clause", "Sym", "Var",
    "parse_triples", "parse_rule_templates",
    "KernelConfig", "kernel", "kernel_grad",
    "BindingPattern", "NeighborIndex",
    "ParamStore", "Gradients", "init_params",
    "ProofConfig", "ProofResult", "Prover",
    "prove", "prove_exhaustive", "substitute", "unify",
    "TrainConfig", "train",
]

__version__ = "0.1.0"
