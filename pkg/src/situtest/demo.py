"""Bundled high-salary demo scenario with a pure collider structure.

Race and Salary are marginally independent; both drive Suburb.  A
classifier that scores salary from (Race, Suburb) shows a large naive
flip-test difference inside every suburb, yet the collider-adjusted
probe recovers the race-only view where the difference is exactly zero.
The suburb mechanism is race-balanced (each race has the same suburb
marginal), so averaging the classifier over the overall suburb
distribution reproduces the race-only probabilities exactly.
"""

from __future__ import annotations

import numpy as np

from .causal_graph import AuditRoles, Dag, partition_nodes
from .classifiers import LookupModel
from .dataset import BINARY, AttributeSpec, Dataset, EmpiricalJointDistribution, Schema
from .situation_test import AuditConfig, DiscriminationReport, audit

__all__ = [
    "demo_dag",
    "demo_roles",
    "demo_lookup_model",
    "demo_collider_distribution",
    "demo_dataset",
    "run_demo",
]

# P(high salary | race, suburb) implied by the mechanism below.
_TABLE = {
    (0, 0): 0.9,
    (0, 1): 0.1,
    (1, 0): 0.1,
    (1, 1): 0.9,
}
# P(suburb = race's "own" side) in the generating mechanism.
_SUBURB_MATCH = 0.9


def demo_roles() -> AuditRoles:
    return AuditRoles(protected="Race", outcome="Salary")


def demo_dag() -> Dag:
    return Dag(
        ["Race", "Salary", "Suburb"],
        [("Race", "Suburb"), ("Salary", "Suburb")],
    )


def demo_lookup_model() -> LookupModel:
    return LookupModel(["Race", "Suburb"], _TABLE)


def demo_collider_distribution() -> EmpiricalJointDistribution:
    return EmpiricalJointDistribution(
        ["Suburb"], [((0,), 0.5), ((1,), 0.5)]
    )


def demo_schema() -> Schema:
    return Schema(
        [
            AttributeSpec("Race", BINARY),
            AttributeSpec("Suburb", BINARY),
            AttributeSpec("Salary", BINARY),
        ],
        demo_roles(),
    )


def demo_dataset(n: int = 200, seed: int = 0) -> Dataset:
    """Sample records from the demo mechanism.

    Race and Salary are independent fair coins; Suburb matches
    (race == salary) with probability 0.9.  Race and Suburb are then
    marginally independent while remaining dependent given Suburb.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    race = (rng.random(n) < 0.5).astype(np.int64)
    salary = (rng.random(n) < 0.5).astype(np.int64)
    match = rng.random(n) < _SUBURB_MATCH
    suburb = np.where(match, race == salary, race != salary).astype(np.int64)
    return Dataset(
        demo_schema(), {"Race": race, "Suburb": suburb, "Salary": salary}
    )


def run_demo(n: int = 200, seed: int = 0, alpha: float = 0.05,
             ) -> tuple[DiscriminationReport, Dataset]:
    """Audit the demo classifier on sampled records; the naive scores are
    large while every collider-adjusted score is zero."""
    dag = demo_dag()
    roles = demo_roles()
    config = AuditConfig(
        threshold=alpha,
        partition=partition_nodes(dag, roles),
        collider_distribution=demo_collider_distribution(),
    )
    data = demo_dataset(n, seed)
    return audit(demo_lookup_model(), data, roles, config), data
