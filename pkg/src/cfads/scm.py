"""Structural equation model core.

A model is a directed acyclic graph of named nodes.  Each node carries a
factor: either a deterministic function of its parents or a parametrized
conditional density that can both sample and evaluate its log density.
Simulation draws every node in topological order, feeding each stochastic
factor an independent counter-based random substream derived from
``(seed, node position)``, so that intervening on one node never perturbs
the draws of any other node.

Interventions replace the factor (and possibly the parent set) of a node.
Density ratios between two models over the same variables exploit the
Markov factorization: factors present in both models cancel, and only the
factors that actually differ are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Sequence

import numpy as np
from numpy.random import Generator, Philox

__all__ = [
    "Factor",
    "Deterministic",
    "Constant",
    "DensityFactor",
    "ScmGraph",
    "GraphCycleError",
    "UnknownParentError",
    "NonDensityFactorError",
]


class GraphCycleError(ValueError):
    pass


class UnknownParentError(ValueError):
    pass


class NonDensityFactorError(TypeError):
    """Raised when a density ratio needs a factor with no density."""


class Factor:
    """Base class for node factors."""

    has_density = False

    def sample(self, parents: Mapping[str, np.ndarray], rng: Generator,
               n: int) -> np.ndarray:
        raise NotImplementedError

    def params(self):
        """Identity payload used to decide whether two factors differ."""
        return id(self)


@dataclass(frozen=True)
class Deterministic(Factor):
    """Value is a pure function of the parent values."""

    fn: Callable[..., np.ndarray]

    def sample(self, parents, rng, n):
        out = np.asarray(self.fn(**parents))
        return np.broadcast_to(out, (n,) + out.shape[1:]) if out.ndim == 0 else out

    def params(self):
        return ("det", self.fn)


@dataclass(frozen=True)
class Constant(Factor):
    """Clamp a node to a fixed value (a degenerate intervention)."""

    value: float

    def sample(self, parents, rng, n):
        return np.full(n, self.value)

    def params(self):
        return ("const", self.value)


@dataclass(frozen=True)
class DensityFactor(Factor):
    """Stochastic factor defined by a sampler and a matching log density.

    ``sampler(parents, rng, n)`` draws n values; ``logpdf(value, parents)``
    evaluates the conditional log density elementwise.  ``label`` plus
    ``theta`` identify the parametrization: two DensityFactor instances are
    considered equal (and cancel in ratios) iff both match.
    """

    sampler: Callable
    logpdf: Callable
    label: str
    theta: tuple = ()

    has_density = True

    def sample(self, parents, rng, n):
        return self.sampler(parents, rng, n)

    def params(self):
        return ("density", self.label, self.theta)


@dataclass
class ScmGraph:
    """Node name -> (parent names, factor)."""

    nodes: Dict[str, tuple] = field(default_factory=dict)

    def add(self, name: str, parents: Sequence[str], factor: Factor):
        if name in self.nodes:
            raise ValueError(f"duplicate node {name!r}")
        self.nodes[name] = (tuple(parents), factor)
        return self

    def parents(self, name: str):
        return self.nodes[name][0]

    def factor(self, name: str) -> Factor:
        return self.nodes[name][1]

    def validate(self):
        """Check parents exist and the graph is acyclic; return topo order."""
        for name, (parents, _) in self.nodes.items():
            for p in parents:
                if p not in self.nodes:
                    raise UnknownParentError(f"node {name!r} has unknown parent {p!r}")
        order, mark = [], {}
        def visit(u, stack):
            state = mark.get(u, 0)
            if state == 1:
                raise GraphCycleError(" -> ".join(stack + [u]))
            if state == 2:
                return
            mark[u] = 1
            for p in self.nodes[u][0]:
                visit(p, stack + [u])
            mark[u] = 2
            order.append(u)
        for name in self.nodes:
            visit(name, [])
        return order

    def descendants(self, name: str):
        """All nodes reachable from ``name`` through child edges."""
        children = {u: [] for u in self.nodes}
        for u, (parents, _) in self.nodes.items():
            for p in parents:
                children[p].append(u)
        out, todo = set(), [name]
        while todo:
            u = todo.pop()
            for c in children[u]:
                if c not in out:
                    out.add(c)
                    todo.append(c)
        return out

    def intervene(self, replacements: Mapping[str, tuple]) -> "ScmGraph":
        """Return a copy with ``{node: (parents, factor)}`` swapped in."""
        g = ScmGraph(dict(self.nodes))
        for name, (parents, factor) in replacements.items():
            if name not in g.nodes:
                raise UnknownParentError(f"cannot intervene on unknown node {name!r}")
            g.nodes[name] = (tuple(parents), factor)
        g.validate()
        return g

    def clamp(self, name: str, value: float) -> "ScmGraph":
        return self.intervene({name: ((), Constant(value))})

    def simulate(self, n: int, seed: int) -> Dict[str, np.ndarray]:
        """Draw n joint samples; each node gets its own Philox substream.

        Substreams are keyed by ``(seed, position)`` where position is the
        node's index in insertion order, so an intervention that only swaps
        factors leaves every other node's draws bit-identical.
        """
        order = self.validate()
        index = {name: i for i, name in enumerate(self.nodes)}
        values: Dict[str, np.ndarray] = {}
        for name in order:
            parents, factor = self.nodes[name]
            rng = Generator(Philox(key=[seed, index[name]]))
            pvals = {p: values[p] for p in parents}
            values[name] = np.asarray(factor.sample(pvals, rng, n))
        return values


def density_ratio(num: ScmGraph, den: ScmGraph,
                  values: Mapping[str, np.ndarray]) -> np.ndarray:
    """Pointwise ratio num/den of the two joint densities at ``values``.

    Both models must share the same node set.  Factors whose params match
    cancel symbolically; differing factors must both carry densities.
    """
    if set(num.nodes) != set(den.nodes):
        raise ValueError("models are over different variable sets")
    n = len(next(iter(values.values())))
    log_ratio = np.zeros(n)
    for name in num.nodes:
        p_parents, p_factor = den.nodes[name]
        q_parents, q_factor = num.nodes[name]
        if q_factor.params() == p_factor.params() and q_parents == p_parents:
            continue
        for f, where in ((p_factor, "denominator"), (q_factor, "numerator")):
            if not f.has_density:
                raise NonDensityFactorError(
                    f"factor of node {name!r} differs but the {where} version "
                    "has no density")
        pv_q = {p: np.asarray(values[p]) for p in q_parents}
        pv_p = {p: np.asarray(values[p]) for p in p_parents}
        v = np.asarray(values[name])
        log_ratio += q_factor.logpdf(v, pv_q) - p_factor.logpdf(v, pv_p)
    return np.exp(log_ratio)
