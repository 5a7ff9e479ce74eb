"""Synthetic benchmark generator and a small discrete causal simulator.

The generator produces the benchmark table used throughout the test
suite: ten covariates with known pairwise correlations, a binary
protected attribute whose effect on the outcome is scaled per record,
a sampled binary outcome, and a continuous collider fed by both the
outcome and the protected attribute.  Because the outcome mechanism is
known analytically, every record carries its exact ground-truth
discrimination score, which is what audit estimates are judged against.

``DiscreteScm`` is the companion oracle: a table-driven structural
model over finite domains that supports observational and intervened
sampling plus exact enumeration, used to validate the audit against
true manipulated probabilities.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .causal_graph import AuditRoles, Dag
from .dataset import (
    BINARY,
    CATEGORICAL,
    CONTINUOUS,
    AttributeSpec,
    Dataset,
    Schema,
)

__all__ = [
    "ScmError",
    "SyntheticConfig",
    "synthetic_dag",
    "generate_synthetic",
    "true_discrimination_score",
    "DiscreteScm",
    "scm_sample",
    "scm_intervene_sample",
    "exact_distribution",
    "exact_joint_distribution",
    "oracle_direct_effect",
]

MAX_ENUMERATION_STATES = 10_000_000


class ScmError(ValueError):
    """Invalid simulator specification or query."""


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic benchmark.

    ``delta`` scales the per-record effect of the protected attribute;
    ``collider_y_weight`` / ``collider_a_weight`` are the two loadings of
    the injected collider; ``noise_bound`` caps its uniform noise term.
    The default loadings weight the protected attribute twice as much as
    the outcome: classifiers then lean on the collider to decode the
    outcome and compensate through the protected attribute, which is the
    regime where the naive flip test visibly degrades.
    """

    n: int
    seed: int = 0
    delta: float = 1.0
    collider_y_weight: float = 1.0
    collider_a_weight: float = 2.0
    noise_bound: float = 0.01

    def __post_init__(self) -> None:
        if self.n <= 0:
            raise ScmError("n must be a positive integer")
        if self.noise_bound < 0:
            raise ScmError("noise_bound must be non-negative")


_CONTINUOUS_COLS = ("X1", "X2", "X4", "X5", "X6", "X9", "C", "tau", "true_ds")
_BINARY_COLS = ("A", "X3", "X7", "X8", "X10", "Y")
_COLUMN_ORDER = ("A", "X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8", "X9",
                 "X10", "C", "Y", "tau", "true_ds")


def synthetic_schema() -> Schema:
    attrs = [
        AttributeSpec(name, BINARY if name in _BINARY_COLS else CONTINUOUS)
        for name in _COLUMN_ORDER
    ]
    return Schema(attrs, AuditRoles(protected="A", outcome="Y"))


def synthetic_dag() -> Dag:
    """The causal structure behind the generator.

    The correlated covariate pairs are oriented first-to-second; either
    orientation leaves the outcome's ancestor set unchanged.
    """
    nodes = ["A", "Y", "C"] + [f"X{i}" for i in range(1, 11)]
    edges = [
        ("A", "Y"),
        ("X1", "Y"), ("X2", "Y"), ("X5", "Y"), ("X6", "Y"),
        ("X7", "Y"), ("X8", "Y"),
        ("X1", "X2"), ("X5", "X6"), ("X7", "X8"),
        ("A", "C"), ("Y", "C"),
    ]
    return Dag(nodes, edges)


def true_discrimination_score(x1, x2, x5, x6, x7, x8, delta: float = 1.0):
    """Exact per-record effect of flipping the protected attribute.

    Works on scalars or equal-length arrays; the result is the absolute
    difference between the two analytic outcome probabilities, not a
    resampled quantity.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    eta = _eta(x1) + _eta(np.asarray(x2, dtype=np.float64)) + _eta(
        np.asarray(x7, dtype=np.float64))
    tau = delta * eta
    f_y = (4.0 * x1 + 2.0 * np.asarray(x2, dtype=np.float64)
           + 2.0 * np.asarray(x5, dtype=np.float64)
           + 4.0 * np.asarray(x6, dtype=np.float64)
           + 4.0 * np.asarray(x8, dtype=np.float64))
    score = np.abs(_inv_logit(f_y) - _inv_logit(f_y - tau))
    return float(score) if score.ndim == 0 else score


def _eta(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 2.0 * x, 0.0)


def _inv_logit(t: np.ndarray) -> np.ndarray:
    # 1 / (1 + exp(t)), computed via tanh for overflow safety.
    return 0.5 * (1.0 - np.tanh(0.5 * t))


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Draw the benchmark table; bit-identical for identical configs.

    Covariates: two standard-normal pairs with correlation 0.5, one
    fair-coin pair with correlation 0.7, two independent fair coins and
    two independent standard normals.  The outcome success probability
    is logistic in the covariates, with the protected attribute's
    disadvantage scaled per record; the collider is a weighted sum of
    outcome and protected attribute plus bounded uniform noise.  The
    ``tau`` and ``true_ds`` columns carry the analytic ground truth.
    """
    n = config.n
    rng = np.random.default_rng(config.seed)
    x1, x2 = _correlated_normals(rng, n, 0.5)
    x5, x6 = _correlated_normals(rng, n, 0.5)
    x7, x8 = _correlated_bernoulli(rng, n, 0.7)
    x3 = (rng.random(n) < 0.5).astype(np.int64)
    x4 = rng.standard_normal(n)
    x9 = rng.standard_normal(n)
    x10 = (rng.random(n) < 0.5).astype(np.int64)
    a = (rng.random(n) < 0.5).astype(np.int64)

    tau = config.delta * (_eta(x1) + _eta(x2) + _eta(x7.astype(np.float64)))
    f_y = 4.0 * x1 + 2.0 * x2 + 2.0 * x5 + 4.0 * x6 + 4.0 * x8
    p_y = _inv_logit((a - 1) * tau + f_y)
    y = (rng.random(n) < p_y).astype(np.int64)
    c = (config.collider_y_weight * y + config.collider_a_weight * a
         + config.noise_bound * rng.random(n))
    true_ds = np.abs(_inv_logit(f_y) - _inv_logit(f_y - tau))

    columns = {
        "A": a, "X1": x1, "X2": x2, "X3": x3, "X4": x4, "X5": x5, "X6": x6,
        "X7": x7, "X8": x8, "X9": x9, "X10": x10, "C": c, "Y": y,
        "tau": tau, "true_ds": true_ds,
    }
    return Dataset(synthetic_schema(), columns)


def _correlated_normals(rng: np.random.Generator, n: int,
                        rho: float) -> tuple[np.ndarray, np.ndarray]:
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    return z1, rho * z1 + math.sqrt(1.0 - rho * rho) * z2


def _correlated_bernoulli(rng: np.random.Generator, n: int,
                          rho: float) -> tuple[np.ndarray, np.ndarray]:
    # Fair marginals with correlation rho have joint cell mass
    # 1/4 + rho/4 on the agreeing cells and 1/4 - rho/4 on the others.
    agree = 0.25 + rho / 4.0
    disagree = 0.25 - rho / 4.0
    cum = np.cumsum([agree, disagree, disagree, agree])
    pairs = np.array([(0, 0), (0, 1), (1, 0), (1, 1)], dtype=np.int64)
    idx = np.searchsorted(cum, rng.random(n), side="right")
    drawn = pairs[idx]
    return drawn[:, 0], drawn[:, 1]


class DiscreteScm:
    """Structural model over finite domains, one probability table per node.

    Each table row is the distribution of the node given one combination
    of parent values; rows are keyed by parent values in sorted parent
    name order.  Domains are expected to be small integer sets (0..k-1),
    which keeps sampled datasets, lookup tables and exact enumeration in
    one value vocabulary.
    """

    def __init__(self, dag: Dag, domains: Mapping[str, Sequence],
                 cpts: Mapping[str, Mapping[tuple, Sequence[float]]]):
        self.dag = dag
        self.domains = {n: tuple(domains[n]) for n in dag.nodes}
        for node in dag.nodes:
            if node not in domains or len(self.domains[node]) == 0:
                raise ScmError(f"node {node!r} lacks a finite domain")
        self.parent_order = {n: tuple(sorted(dag.parents(n))) for n in dag.nodes}
        self.cpts: dict[str, dict[tuple, tuple[float, ...]]] = {}
        for node in dag.nodes:
            table = cpts.get(node)
            if table is None:
                raise ScmError(f"node {node!r} lacks a probability table")
            k = len(self.domains[node])
            expected = list(itertools.product(
                *(self.domains[p] for p in self.parent_order[node])))
            normalized: dict[tuple, tuple[float, ...]] = {}
            for combo in expected:
                row = table.get(tuple(combo))
                if row is None:
                    raise ScmError(
                        f"node {node!r}: missing table row for parents "
                        f"{self.parent_order[node]} = {combo}"
                    )
                row = tuple(float(p) for p in row)
                if len(row) != k:
                    raise ScmError(
                        f"node {node!r}: row {combo} has {len(row)} entries, "
                        f"expected {k}"
                    )
                if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-9:
                    raise ScmError(f"node {node!r}: row {combo} is not a distribution")
                normalized[tuple(combo)] = row
            if len(table) != len(expected):
                raise ScmError(f"node {node!r}: unexpected extra table rows")
            self.cpts[node] = normalized
        # Dense row-major matrices for vectorized sampling and enumeration.
        self._matrices: dict[str, np.ndarray] = {}
        for node in dag.nodes:
            combos = list(itertools.product(
                *(self.domains[p] for p in self.parent_order[node])))
            self._matrices[node] = np.array(
                [self.cpts[node][c] for c in combos], dtype=np.float64
            )

    def value_index(self, node: str, value) -> int:
        try:
            return self.domains[node].index(value)
        except ValueError:
            raise ScmError(f"value {value!r} not in domain of {node!r}") from None

    def state_space(self) -> int:
        size = 1
        for node in self.dag.nodes:
            size *= len(self.domains[node])
        return size

    def to_json(self) -> str:
        return json.dumps(
            {
                "variables": [
                    {
                        "name": node,
                        "domain": list(self.domains[node]),
                        "parents": list(self.parent_order[node]),
                        "cpt": [
                            [list(combo), list(row)]
                            for combo, row in sorted(self.cpts[node].items())
                        ],
                    }
                    for node in self.dag.topological_order()
                ]
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscreteScm":
        obj = json.loads(text)
        names = [v["name"] for v in obj["variables"]]
        edges = []
        for v in obj["variables"]:
            edges.extend((p, v["name"]) for p in v.get("parents", ()))
        dag = Dag(names, edges)
        domains = {v["name"]: tuple(v["domain"]) for v in obj["variables"]}
        cpts = {
            v["name"]: {tuple(combo): row for combo, row in v["cpt"]}
            for v in obj["variables"]
        }
        return cls(dag, domains, cpts)


def _sample_columns(scm: DiscreteScm, interventions: Mapping[str, object],
                    n: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    value_idx: dict[str, np.ndarray] = {}
    for node in scm.dag.topological_order():
        if node in interventions:
            value_idx[node] = np.full(n, scm.value_index(node, interventions[node]),
                                      dtype=np.int64)
            continue
        parents = scm.parent_order[node]
        if parents:
            rows = np.zeros(n, dtype=np.int64)
            for p in parents:
                rows = rows * len(scm.domains[p]) + value_idx[p]
        else:
            rows = np.zeros(n, dtype=np.int64)
        cum = np.cumsum(scm._matrices[node], axis=1)[rows]
        value_idx[node] = (cum <= rng.random(n)[:, None]).sum(axis=1)
    columns = {}
    for node, idx in value_idx.items():
        domain = np.asarray(scm.domains[node])
        columns[node] = domain[np.minimum(idx, len(domain) - 1)]
    return columns


def _scm_schema(scm: DiscreteScm) -> Schema:
    attrs = []
    protected = outcome = None
    for node in scm.dag.topological_order():
        domain = scm.domains[node]
        if tuple(sorted(domain)) == (0, 1):
            attrs.append(AttributeSpec(node, BINARY))
        else:
            attrs.append(AttributeSpec(node, CATEGORICAL,
                                       tuple(str(v) for v in domain)))
    # A role-free schema is impossible by construction; pick any two binary
    # nodes as placeholders when the caller has not bound roles.
    binary = [a.name for a in attrs if a.kind == BINARY]
    if len(binary) >= 2:
        protected, outcome = binary[0], binary[1]
    else:
        raise ScmError("sampled datasets need at least two binary nodes for roles")
    return Schema(attrs, AuditRoles(protected=protected, outcome=outcome))


def scm_sample(scm: DiscreteScm, n: int, seed: int = 0,
               roles: AuditRoles | None = None) -> Dataset:
    """Observational ancestral sampling in topological order."""
    return scm_intervene_sample(scm, {}, n, seed, roles)


def scm_intervene_sample(scm: DiscreteScm, interventions: Mapping[str, object],
                         n: int, seed: int = 0,
                         roles: AuditRoles | None = None) -> Dataset:
    """Sampling under interventions: incoming edges of each intervened
    node are ignored and its value is pinned, the manipulated-graph
    semantics of setting a variable from outside."""
    if n <= 0:
        raise ScmError("n must be a positive integer")
    for node, value in interventions.items():
        if node not in scm.dag.nodes:
            raise ScmError(f"cannot intervene on unknown node {node!r}")
        scm.value_index(node, value)
    columns = _sample_columns(scm, interventions, n, seed)
    schema = _scm_schema(scm)
    if roles is not None:
        schema = Schema(schema.attributes, roles)
    # Categorical columns carry level indexes; with 0..k-1 domains the
    # index and the value coincide.
    for name in list(columns):
        spec = schema.attribute(name)
        if spec.kind == CATEGORICAL:
            domain = list(scm.domains[name])
            columns[name] = np.asarray(
                [domain.index(v) for v in columns[name]], dtype=np.int64
            )
    return Dataset(schema, columns)


def _enumeration_factors(scm: DiscreteScm,
                         interventions: Mapping[str, object]) -> np.ndarray:
    nodes = scm.dag.topological_order()
    sizes = [len(scm.domains[n]) for n in nodes]
    total = 1
    for s in sizes:
        total *= s
    if total > MAX_ENUMERATION_STATES:
        raise ScmError(
            f"state space of {total} assignments exceeds the enumeration limit"
        )
    axis = {n: i for i, n in enumerate(nodes)}
    joint = np.ones(sizes, dtype=np.float64)
    for node in nodes:
        k = len(scm.domains[node])
        if node in interventions:
            factor = np.zeros(k)
            factor[scm.value_index(node, interventions[node])] = 1.0
            shape = [1] * len(nodes)
            shape[axis[node]] = k
            joint *= factor.reshape(shape)
            continue
        parents = scm.parent_order[node]
        psizes = [len(scm.domains[p]) for p in parents]
        table = scm._matrices[node].reshape(psizes + [k])
        # Transpose the (parents..., node) axes into global node order.
        involved = list(parents) + [node]
        order = sorted(range(len(involved)), key=lambda i: axis[involved[i]])
        table = np.transpose(table, order)
        shape = [1] * len(nodes)
        for i in order:
            shape[axis[involved[i]]] = len(scm.domains[involved[i]])
        joint *= table.reshape(shape)
    return joint


def exact_distribution(scm: DiscreteScm, node: str,
                       given: Mapping[str, object] | None = None,
                       interventions: Mapping[str, object] | None = None,
                       ) -> dict:
    """Exact marginal of ``node`` by enumeration, optionally conditioned
    on ``given`` and/or under ``interventions``."""
    if node not in scm.dag.nodes:
        raise ScmError(f"unknown node {node!r}")
    interventions = dict(interventions or {})
    given = dict(given or {})
    joint = _enumeration_factors(scm, interventions)
    nodes = scm.dag.topological_order()
    axis = {n: i for i, n in enumerate(nodes)}
    for g_node, g_value in given.items():
        k = len(scm.domains[g_node])
        mask = np.zeros(k)
        mask[scm.value_index(g_node, g_value)] = 1.0
        shape = [1] * len(nodes)
        shape[axis[g_node]] = k
        joint = joint * mask.reshape(shape)
    other_axes = tuple(i for i in range(len(nodes)) if i != axis[node])
    marginal = joint.sum(axis=other_axes)
    total = marginal.sum()
    if total <= 0.0:
        raise ScmError("conditioning event has probability zero")
    marginal = marginal / total
    return {v: float(p) for v, p in zip(scm.domains[node], marginal)}


def exact_joint_distribution(scm: DiscreteScm, nodes: Sequence[str]) -> dict[tuple, float]:
    """Exact observational joint of ``nodes`` (in the given order) by enumeration."""
    nodes = list(nodes)
    for n in nodes:
        if n not in scm.dag.nodes:
            raise ScmError(f"unknown node {n!r}")
    if len(set(nodes)) != len(nodes):
        raise ScmError("joint query nodes must be distinct")
    joint = _enumeration_factors(scm, {})
    order = scm.dag.topological_order()
    axis = {n: i for i, n in enumerate(order)}
    if not nodes:
        return {(): float(joint.sum())}
    keep = [axis[n] for n in nodes]
    drop = tuple(i for i in range(len(order)) if i not in keep)
    table = joint.sum(axis=drop) if drop else joint
    # summed array axes follow global order; rearrange to the query order
    current = sorted(keep)
    table = np.transpose(table, [current.index(a) for a in keep])
    out = {}
    for combo in itertools.product(*(scm.domains[n] for n in nodes)):
        idx = tuple(scm.value_index(n, v) for n, v in zip(nodes, combo))
        out[combo] = float(table[idx])
    return out


def oracle_direct_effect(scm: DiscreteScm, roles: AuditRoles,
                         fixed: Mapping[str, object]) -> float:
    """Exact P(outcome=1 | protected set to 1, ``fixed`` pinned) minus the
    same with protected set to 0, both by manipulated-graph enumeration."""
    roles.require_in(scm.dag)
    if roles.protected in fixed or roles.outcome in fixed:
        raise ScmError("fixed values must not include the role attributes")
    outcome_domain = scm.domains[roles.outcome]
    if tuple(sorted(outcome_domain)) != (0, 1):
        raise ScmError("outcome node must be binary for a direct-effect query")
    probs = []
    for a_value in (1, 0):
        dist = exact_distribution(
            scm, roles.outcome,
            interventions={roles.protected: a_value, **fixed},
        )
        probs.append(dist[1])
    return probs[0] - probs[1]
