import json
import math

import numpy as np
import pytest

from situtest.causal_graph import AuditRoles, NodePartition, partition_nodes
from situtest.classifiers import LogisticModel, LookupModel, _FeatureCodec, train
from situtest.dataset import (
    BINARY,
    CONTINUOUS,
    AttributeSpec,
    Dataset,
    EmpiricalJointDistribution,
    Record,
    Schema,
    fit_distribution,
)
from situtest.demo import (
    demo_collider_distribution,
    demo_dag,
    demo_lookup_model,
    demo_roles,
)
from situtest.scm import SyntheticConfig, generate_synthetic, synthetic_dag
from situtest.situation_test import (
    AuditConfig,
    AuditError,
    audit,
    marginalized_proba,
    naive_score,
    unbiased_score,
)

ROLES = AuditRoles("A", "Y")


def two_point_config(p0=0.5, p1=0.5, threshold=0.5):
    partition = NodePartition(
        antecedents=frozenset({"B"}),
        descendants=frozenset({"C"}),
        spouses=frozenset(),
        irrelevant=frozenset(),
    )
    dist = EmpiricalJointDistribution(["C"], [((0,), p0), ((1,), p1)])
    return AuditConfig(threshold=threshold, partition=partition,
                       collider_distribution=dist)


class CountingModel:
    """Wraps a model and counts scalar predictions served."""

    def __init__(self, inner):
        self.inner = inner
        self.feature_names = inner.feature_names
        self.rows = 0

    def predict_proba_columns(self, columns):
        preds = self.inner.predict_proba_columns(columns)
        self.rows += len(preds)
        return preds

    def predict_proba(self, record):
        values = record.values if isinstance(record, Record) else record
        return float(self.predict_proba_columns(
            {k: np.asarray([v]) for k, v in values.items()})[0])


class TestAuditConfig:
    def test_variables_must_match_descendants(self):
        partition = NodePartition(frozenset(), frozenset({"C"}), frozenset(),
                                  frozenset())
        dist = EmpiricalJointDistribution(["D"], [((0,), 1.0)])
        with pytest.raises(AuditError, match="do not match"):
            AuditConfig(0.5, partition, dist)

    def test_threshold_range(self):
        partition = NodePartition(frozenset(), frozenset(), frozenset(), frozenset())
        dist = EmpiricalJointDistribution([], [((), 1.0)])
        with pytest.raises(AuditError, match="threshold"):
            AuditConfig(1.5, partition, dist)


class TestNaiveScore:
    def test_classifier_ignoring_protected_gives_zero(self):
        model = LookupModel(["B"], {(0,): 0.3, (1,): 0.8})
        assert naive_score(model, {"A": 1, "B": 0}, ROLES) == 0.0

    def test_logistic_analytic_value(self):
        codec = _FeatureCodec((("A", BINARY, 2),))
        model = LogisticModel(codec, np.array([math.log(3.0)]), 0.0,
                              np.zeros(1), np.ones(1))
        score = naive_score(model, {"A": 0}, ROLES)
        assert score == pytest.approx(0.25, abs=1e-12)

    def test_lookup_differs_within_suburb(self):
        model = demo_lookup_model()
        record = {"Race": 0, "Suburb": 1, "Salary": 0}
        assert naive_score(model, record, demo_roles()) == pytest.approx(0.8)

    def test_uses_values_not_flip_direction(self):
        # signed convention: P(.|A=1) - P(.|A=0) regardless of the stored A
        model = LookupModel(["A"], {(0,): 0.2, (1,): 0.9})
        assert naive_score(model, {"A": 0}, ROLES) == pytest.approx(0.7)
        assert naive_score(model, {"A": 1}, ROLES) == pytest.approx(0.7)


class TestMarginalizedProba:
    def test_constant_in_descendants_returns_value(self):
        model = LookupModel(["A", "B"], {(a, b): 0.37 for a in (0, 1)
                                         for b in (0, 1)})
        config = two_point_config()
        p = marginalized_proba(model, {"A": 0, "B": 1, "C": 5}, ROLES, 1, config)
        assert p == pytest.approx(0.37, abs=1e-15)

    def test_two_point_weighted_average(self):
        model = LookupModel(["A", "C"], {(a, 0): 0.2 for a in (0, 1)}
                            | {(a, 1): 0.6 for a in (0, 1)})
        config = two_point_config()
        p = marginalized_proba(model, {"A": 0, "B": 0, "C": 1}, ROLES, 0, config)
        assert p == pytest.approx(0.4, abs=1e-15)

    def test_demo_recovers_race_only_probabilities(self):
        config = AuditConfig(0.05, partition_nodes(demo_dag(), demo_roles()),
                             demo_collider_distribution())
        model = demo_lookup_model()
        record = {"Race": 1, "Suburb": 1, "Salary": 1}
        p1 = marginalized_proba(model, record, demo_roles(), 1, config)
        p0 = marginalized_proba(model, record, demo_roles(), 0, config)
        assert p1 == pytest.approx(0.5, abs=1e-15)
        assert p0 == pytest.approx(0.5, abs=1e-15)

    def test_bad_a_value(self):
        with pytest.raises(AuditError, match="0 or 1"):
            marginalized_proba(demo_lookup_model(), {"Race": 0, "Suburb": 0},
                               demo_roles(), 2,
                               AuditConfig(0.1,
                                           partition_nodes(demo_dag(), demo_roles()),
                                           demo_collider_distribution()))

    def test_weight_conservation_bounds(self):
        rng = np.random.default_rng(21)
        config = two_point_config(0.3, 0.7)
        for _ in range(50):
            table = {(a, c): float(rng.random()) for a in (0, 1) for c in (0, 1)}
            model = LookupModel(["A", "C"], table)
            record = {"A": 0, "B": 0, "C": 0}
            for a in (0, 1):
                p = marginalized_proba(model, record, ROLES, a, config)
                lo = min(table[(a, 0)], table[(a, 1)])
                hi = max(table[(a, 0)], table[(a, 1)])
                assert lo - 1e-12 <= p <= hi + 1e-12


class TestUnbiasedScore:
    def test_classifier_ignoring_protected(self):
        model = LookupModel(["C"], {(0,): 0.4, (1,): 0.9})
        config = two_point_config()
        assert unbiased_score(model, {"A": 1, "B": 0, "C": 0}, ROLES, config) == 0.0

    def test_demo_zero_while_naive_nonzero(self):
        config = AuditConfig(0.05, partition_nodes(demo_dag(), demo_roles()),
                             demo_collider_distribution())
        model = demo_lookup_model()
        record = {"Race": 0, "Suburb": 0, "Salary": 1}
        assert unbiased_score(model, record, demo_roles(), config) < 1e-12
        assert abs(naive_score(model, record, demo_roles())) == pytest.approx(0.8)

    def test_collapse_when_invariant_in_descendants(self):
        # a model that never reads C makes the adjustment a no-op
        rng = np.random.default_rng(22)
        data = generate_synthetic(SyntheticConfig(n=400, seed=9))
        dag = synthetic_dag()
        part = partition_nodes(dag, ROLES)
        dist = fit_distribution(data, ["C"], bins=10)
        config = AuditConfig(0.2, part, dist)
        features = [n for n in data.schema.names
                    if n in dag.nodes and n not in ("Y", "C")]
        model = train("logistic", data, features)
        for i in rng.integers(0, len(data), size=25):
            rec = data.record(int(i))
            u = unbiased_score(model, rec, ROLES, config)
            n_ = naive_score(model, rec, ROLES)
            assert abs(u - abs(n_)) < 1e-13

    def test_flip_symmetry_in_stored_protected_value(self):
        config = two_point_config(0.25, 0.75)
        model = LookupModel(["A", "B", "C"],
                            {(a, b, c): 0.1 + 0.2 * a + 0.3 * b + 0.1 * c
                             for a in (0, 1) for b in (0, 1) for c in (0, 1)})
        r0 = {"A": 0, "B": 1, "C": 0}
        r1 = {"A": 1, "B": 1, "C": 1}  # same antecedents, different A and C
        assert unbiased_score(model, r0, ROLES, config) == pytest.approx(
            unbiased_score(model, r1, ROLES, config), abs=1e-15)

    def test_invocation_count_is_twice_support(self):
        config = two_point_config()
        inner = LookupModel(["A", "C"], {(a, c): 0.5 for a in (0, 1)
                                         for c in (0, 1)})
        counting = CountingModel(inner)
        unbiased_score(counting, {"A": 0, "B": 0, "C": 0}, ROLES, config)
        assert counting.rows == 2 * len(config.collider_distribution)


def tiny_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    schema = Schema(
        [AttributeSpec("A", BINARY), AttributeSpec("B", CONTINUOUS),
         AttributeSpec("C", BINARY), AttributeSpec("Y", BINARY)],
        ROLES,
    )
    return Dataset(schema, {
        "A": (rng.random(n) < 0.5).astype(int),
        "B": rng.standard_normal(n),
        "C": (rng.random(n) < 0.5).astype(int),
        "Y": (rng.random(n) < 0.5).astype(int),
    })


def tiny_model():
    codec = _FeatureCodec((("A", BINARY, 2), ("B", CONTINUOUS, 0),
                           ("C", BINARY, 2)))
    return LogisticModel(codec, np.array([0.7, -0.4, 1.1]), 0.05,
                         np.zeros(3), np.ones(3))


class TestAudit:
    def test_empty_test_set(self):
        data = tiny_dataset(n=40).take(np.arange(0))
        report = audit(tiny_model(), data, ROLES, two_point_config())
        assert len(report) == 0
        assert report.flagged_ids == []

    def test_identical_records_identical_scores(self):
        base = tiny_dataset(n=1)
        data = base.take(np.zeros(6, dtype=int))
        report = audit(tiny_model(), data, ROLES, two_point_config())
        scores = {(s.nds, s.ds) for s in report.individuals}
        assert len(scores) == 1

    def test_matches_per_record_recomputation(self):
        data = tiny_dataset(n=50, seed=3)
        config = two_point_config(0.4, 0.6, threshold=0.2)
        model = tiny_model()
        report = audit(model, data, ROLES, config)
        expected_flags = []
        for rec in data.iter_records():
            ds = unbiased_score(model, rec, ROLES, config)
            nds = naive_score(model, rec, ROLES)
            got = report.individuals[rec.id]
            assert got.ds == pytest.approx(ds, abs=1e-12)
            assert got.nds == pytest.approx(nds, abs=1e-12)
            if ds > 0.2:
                expected_flags.append(rec.id)
        assert report.flagged_ids == expected_flags

    def test_flagged_monotone_in_threshold(self):
        data = tiny_dataset(n=80, seed=4)
        model = tiny_model()
        previous = None
        for alpha in (0.0, 0.1, 0.3, 0.6, 1.0):
            config = two_point_config(0.4, 0.6, threshold=alpha)
            flags = set(audit(model, data, ROLES, config).flagged_ids)
            if previous is not None:
                assert flags <= previous
            previous = flags

    def test_threshold_one_flags_nothing(self):
        data = tiny_dataset(n=30, seed=5)
        config = two_point_config(0.4, 0.6, threshold=1.0)
        report = audit(tiny_model(), data, ROLES, config)
        assert report.flagged_ids == []

    def test_scores_do_not_depend_on_threshold(self):
        data = tiny_dataset(n=30, seed=6)
        model = tiny_model()
        r1 = audit(model, data, ROLES, two_point_config(threshold=0.1))
        r2 = audit(model, data, ROLES, two_point_config(threshold=0.9))
        for a, b in zip(r1.individuals, r2.individuals):
            assert a.ds == b.ds and a.nds == b.nds

    def test_threads_match_serial(self):
        data = tiny_dataset(n=64, seed=7)
        model = tiny_model()
        config = two_point_config(0.4, 0.6)
        serial = audit(model, data, ROLES, config, threads=1)
        threaded = audit(model, data, ROLES, config, threads=4)
        for a, b in zip(serial.individuals, threaded.individuals):
            assert a == b

    def test_probabilities_within_unit_interval(self):
        data = tiny_dataset(n=60, seed=8)
        report = audit(tiny_model(), data, ROLES, two_point_config())
        for s in report.individuals:
            assert 0.0 <= s.p_protected_0 <= 1.0
            assert 0.0 <= s.p_protected_1 <= 1.0
            assert 0.0 <= s.ds <= 1.0

    def test_per_record_failure_aborts_with_row(self):
        data = tiny_dataset(n=10, seed=9)
        model = LookupModel(["A", "C"],
                            {(a, c): 0.5 for a in (0, 1) for c in (0, 1)})
        # distribution emits a C value the table lacks
        partition = NodePartition(frozenset({"B"}), frozenset({"C"}),
                                  frozenset(), frozenset())
        dist = EmpiricalJointDistribution(["C"], [((0,), 0.5), ((7,), 0.5)])
        config = AuditConfig(0.5, partition, dist)
        with pytest.raises(AuditError, match="record 0"):
            audit(model, data, ROLES, config)


class TestReportFormats:
    def test_csv_layout(self):
        report = audit(tiny_model(), tiny_dataset(n=5, seed=10), ROLES,
                       two_point_config(threshold=0.0))
        lines = report.to_csv_text().splitlines()
        assert lines[0] == "id,nds,ds,p0,p1,flagged"
        assert len(lines) == 6
        first = lines[1].split(",")
        assert first[0] == "0"
        assert first[5] in ("true", "false")

    def test_json_summary_block(self):
        report = audit(tiny_model(), tiny_dataset(n=12, seed=11), ROLES,
                       two_point_config(threshold=0.3))
        obj = json.loads(report.to_json_text())
        assert obj["summary"]["alpha"] == 0.3
        assert obj["summary"]["records"] == 12
        assert "ds" in obj["summary"]["score_quantiles"]
        assert len(obj["individuals"]) == 12
        assert set(obj["individuals"][0]) == {"id", "nds", "ds", "p0", "p1",
                                              "flagged"}


class TestUntouchedFields:
    def test_spouse_and_irrelevant_values_reach_the_classifier_unchanged(self):
        # model reads a spouse variable; only A and the descendant C are
        # ever rewritten during marginalization
        partition = NodePartition(
            antecedents=frozenset(), descendants=frozenset({"C"}),
            spouses=frozenset({"S"}), irrelevant=frozenset({"I"}),
        )
        dist = EmpiricalJointDistribution(["C"], [((0,), 0.5), ((1,), 0.5)])
        config = AuditConfig(0.5, partition, dist)
        table = {(a, s, i, c): 0.1 + 0.5 * s + 0.2 * i
                 for a in (0, 1) for s in (0, 1) for i in (0, 1) for c in (0, 1)}
        model = LookupModel(["A", "S", "I", "C"], table)
        for s_val in (0, 1):
            for i_val in (0, 1):
                record = {"A": 0, "S": s_val, "I": i_val, "C": 0}
                p = marginalized_proba(model, record, ROLES, 1, config)
                assert p == pytest.approx(0.1 + 0.5 * s_val + 0.2 * i_val,
                                          abs=1e-12)
