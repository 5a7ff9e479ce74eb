import math
import sys
import textwrap

import numpy as np
import pytest

from situtest.causal_graph import AuditRoles
from situtest.classifiers import (
    ExternalModel,
    LogisticModel,
    LookupModel,
    PredictionError,
    TrainingError,
    _FeatureCodec,
    external_predict,
    flip_protected,
    train,
)
from situtest.dataset import (
    BINARY,
    CATEGORICAL,
    CONTINUOUS,
    AttributeSpec,
    Dataset,
    Record,
    Schema,
)


def make_dataset(columns, kinds, roles=("A", "Y")):
    attrs = []
    for name, kind in kinds.items():
        if kind == CATEGORICAL:
            levels = tuple(str(v) for v in sorted(set(columns[name])))
            attrs.append(AttributeSpec(name, kind, levels))
        else:
            attrs.append(AttributeSpec(name, kind))
    schema = Schema(attrs, AuditRoles(*roles))
    return Dataset(schema, {k: np.asarray(v) for k, v in columns.items()})


def separable_dataset(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    y = (x1 + x2 > 0).astype(int)
    a = (rng.random(n) < 0.5).astype(int)
    return make_dataset(
        {"A": a, "X1": x1, "X2": x2, "Y": y},
        {"A": BINARY, "X1": CONTINUOUS, "X2": CONTINUOUS, "Y": BINARY},
    )


class TestLogistic:
    def test_separable_accuracy(self):
        data = separable_dataset()
        model = train("logistic", data, ["X1", "X2"])
        preds = model.predict_proba_columns(data.columns(["X1", "X2"]))
        acc = ((preds > 0.5).astype(int) == data.column("Y")).mean()
        assert acc >= 0.95

    def test_zero_weights_give_half(self):
        codec = _FeatureCodec((("A", BINARY, 2),))
        model = LogisticModel(codec, np.zeros(1), 0.0, np.zeros(1), np.ones(1))
        assert model.predict_proba({"A": 1}) == 0.5

    def test_analytic_single_weight(self):
        codec = _FeatureCodec((("A", BINARY, 2),))
        model = LogisticModel(codec, np.array([math.log(3.0)]), 0.0,
                              np.zeros(1), np.ones(1))
        assert model.predict_proba({"A": 1}) == pytest.approx(0.75, abs=1e-12)
        assert model.predict_proba({"A": 0}) == pytest.approx(0.5, abs=1e-12)

    def test_gradient_small_at_optimum_and_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        n = 50
        x1 = rng.standard_normal(n)
        x2 = rng.standard_normal(n)
        logit = 0.8 * x1 - 0.5 * x2
        y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
        a = (rng.random(n) < 0.5).astype(int)
        data = make_dataset(
            {"A": a, "X1": x1, "X2": x2, "Y": y},
            {"A": BINARY, "X1": CONTINUOUS, "X2": CONTINUOUS, "Y": BINARY},
        )
        model = train("logistic", data, ["X1", "X2"])
        cols = data.columns(["X1", "X2"])
        grad_w, grad_b = model.loss_gradient(cols, data.column("Y"))
        assert np.abs(grad_w).max() < 1e-4
        assert abs(grad_b) < 1e-4

        # central finite differences of the penalized mean log-loss
        def loss(w, b):
            codec = _FeatureCodec(model._codec.features)
            m = LogisticModel(codec, w, b, model.mean, model.scale)
            p = np.clip(m.predict_proba_columns(cols), 1e-12, 1 - 1e-12)
            t = data.column("Y")
            nll = -(t * np.log(p) + (1 - t) * np.log(1 - p)).mean()
            return nll + 0.5 * 1e-4 * (w ** 2).sum()

        h = 1e-6
        for j in range(len(model.weights)):
            bump = np.zeros_like(model.weights)
            bump[j] = h
            numeric = (loss(model.weights + bump, model.bias)
                       - loss(model.weights - bump, model.bias)) / (2 * h)
            assert numeric == pytest.approx(grad_w[j], abs=1e-5)

    def test_one_hot_for_categorical(self):
        rng = np.random.default_rng(8)
        n = 300
        job = rng.integers(0, 3, size=n)
        y = (job == 2).astype(int)
        a = (rng.random(n) < 0.5).astype(int)
        data = make_dataset(
            {"A": a, "Job": job, "Y": y},
            {"A": BINARY, "Job": CATEGORICAL, "Y": BINARY},
        )
        model = train("logistic", data, ["Job"])
        preds = model.predict_proba_columns({"Job": np.array([0, 1, 2])})
        assert preds[2] > 0.9 and preds[0] < 0.1


class TestNaiveBayes:
    def test_independent_features_give_prior(self):
        rng = np.random.default_rng(9)
        n = 4000
        y = (rng.random(n) < 0.7).astype(int)
        data = make_dataset(
            {"A": (rng.random(n) < 0.5).astype(int),
             "X": rng.standard_normal(n), "Y": y},
            {"A": BINARY, "X": CONTINUOUS, "Y": BINARY},
        )
        model = train("naive_bayes", data, ["A", "X"])
        rows = {"A": np.array([0, 1, 0]), "X": np.array([-0.5, 0.0, 1.0])}
        preds = model.predict_proba_columns(rows)
        assert np.abs(preds - y.mean()).max() < 0.02

    def test_informative_binary_feature(self):
        n = 1000
        y = np.array([0, 1] * (n // 2))
        x = y.copy()
        data = make_dataset(
            {"A": np.zeros(n, int) | (np.arange(n) % 2), "X": x.astype(float), "Y": y},
            {"A": BINARY, "X": CONTINUOUS, "Y": BINARY},
        )
        model = train("naive_bayes", data, ["X"])
        assert model.predict_proba({"X": 1.0}) > 0.95
        assert model.predict_proba({"X": 0.0}) < 0.05


class TestKnn:
    def test_k1_memorizes_training_points(self):
        data = separable_dataset(n=60, seed=3)
        model = train("knn", data, ["X1", "X2"], k=1)
        preds = model.predict_proba_columns(data.columns(["X1", "X2"]))
        np.testing.assert_array_equal(preds, data.column("Y").astype(float))

    def test_vote_fraction(self):
        data = make_dataset(
            {"A": [0, 0, 0, 1, 1], "X": [1.0, 1.0, 1.0, 1.0, 1.0],
             "Y": [1, 1, 1, 0, 0]},
            {"A": BINARY, "X": CONTINUOUS, "Y": BINARY},
        )
        model = train("knn", data, ["X"], k=5)
        assert model.predict_proba({"X": 1.0}) == pytest.approx(0.6)

    def test_distance_ties_break_to_lower_row_id(self):
        # six identical points; the five lowest ids vote
        data = make_dataset(
            {"A": [0] * 6, "X": [2.0] * 6, "Y": [1, 1, 1, 0, 0, 0]},
            {"A": BINARY, "X": CONTINUOUS, "Y": BINARY},
        )
        model = train("knn", data, ["X"], k=5)
        assert model.predict_proba({"X": 2.0}) == pytest.approx(3 / 5)

    def test_candidate_buffer_matches_full_sort(self):
        rng = np.random.default_rng(10)
        n = 3000
        x1, x2 = rng.standard_normal(n), rng.standard_normal(n)
        y = (x1 > 0).astype(int)
        data = make_dataset(
            {"A": (rng.random(n) < 0.5).astype(int), "X1": x1, "X2": x2, "Y": y},
            {"A": BINARY, "X1": CONTINUOUS, "X2": CONTINUOUS, "Y": BINARY},
        )
        model = train("knn", data, ["X1", "X2"], k=5)
        queries = {"X1": rng.standard_normal(40), "X2": rng.standard_normal(40)}
        fast = model.predict_proba_columns(queries)
        slow = np.empty(40)
        xs = (model._codec.encode(queries) - model.mean) / model.scale
        for i in range(40):
            d2 = ((model.matrix - xs[i]) ** 2).sum(axis=1)
            order = np.argsort(d2, kind="stable")[:5]
            slow[i] = model.labels[order].mean()
        np.testing.assert_allclose(fast, slow, atol=1e-12)

    def test_k_validation(self):
        data = separable_dataset(n=10)
        with pytest.raises(TrainingError):
            train("knn", data, ["X1"], k=0)
        with pytest.raises(TrainingError):
            train("knn", data, ["X1"], k=11)


class TestLookup:
    def test_matching_cell(self):
        model = LookupModel(["Race", "Suburb"], {(0, 0): 0.9, (0, 1): 0.1,
                                                 (1, 0): 0.1, (1, 1): 0.9})
        assert model.predict_proba({"Race": 1, "Suburb": 0}) == 0.1

    def test_missing_cell_reports_row(self):
        model = LookupModel(["R"], {(0,): 0.5})
        with pytest.raises(PredictionError, match="row 0"):
            model.predict_proba({"R": 3})

    def test_json_round_trip(self):
        model = LookupModel(["R", "S"], {(0, 1): 0.25, (1, 0): 0.75})
        again = LookupModel.from_json(model.to_json())
        assert again.table == model.table
        assert again.feature_names == model.feature_names


class TestExternal:
    def _script(self, tmp_path, body):
        path = tmp_path / "clf.py"
        path.write_text(textwrap.dedent(body))
        return f"{sys.executable} {path}"

    def test_constant_stub(self, tmp_path):
        cmd = self._script(tmp_path, """
            import sys
            rows = sys.stdin.read().splitlines()[1:]
            for _ in rows:
                print(0.5)
        """)
        records = [Record(i, {"X": float(i)}) for i in range(3)]
        assert external_predict(cmd, records, ["X"]) == [0.5, 0.5, 0.5]

    def test_nonzero_exit_reports_stderr(self, tmp_path):
        cmd = self._script(tmp_path, """
            import sys
            sys.stderr.write("boom")
            sys.exit(3)
        """)
        with pytest.raises(PredictionError, match="code 3.*boom"):
            external_predict(cmd, [Record(0, {"X": 1.0})], ["X"])

    def test_count_mismatch(self, tmp_path):
        cmd = self._script(tmp_path, """
            import sys
            sys.stdin.read()
            print(0.5)
            print(0.5)
        """)
        with pytest.raises(PredictionError, match="2 probabilities for 3"):
            external_predict(cmd, [Record(i, {"X": 1.0}) for i in range(3)], ["X"])

    def test_out_of_range_value(self, tmp_path):
        cmd = self._script(tmp_path, """
            import sys
            rows = sys.stdin.read().splitlines()[1:]
            for _ in rows:
                print(1.5)
        """)
        with pytest.raises(PredictionError, match="out of"):
            external_predict(cmd, [Record(0, {"X": 1.0})], ["X"])

    def test_header_and_order(self, tmp_path):
        # echo back the second column; verifies header order and row alignment
        cmd = self._script(tmp_path, """
            import csv, sys
            rows = list(csv.reader(sys.stdin))
            assert rows[0] == ["X", "P"]
            for row in rows[1:]:
                print(row[1])
        """)
        model = ExternalModel(["X", "P"], cmd)
        preds = model.predict_proba_columns(
            {"X": np.array([9.0, 9.0]), "P": np.array([0.25, 0.75])}
        )
        np.testing.assert_allclose(preds, [0.25, 0.75])


class TestTrainContract:
    def test_unknown_kind(self):
        with pytest.raises(TrainingError, match="unknown classifier kind"):
            train("svm", separable_dataset(), ["X1"])

    def test_degenerate_labels(self):
        data = make_dataset(
            {"A": [0, 1, 0], "X": [1.0, 2.0, 3.0], "Y": [1, 1, 1]},
            {"A": BINARY, "X": CONTINUOUS, "Y": BINARY},
        )
        with pytest.raises(TrainingError, match="single outcome class"):
            train("logistic", data, ["X"])

    def test_outcome_not_a_feature(self):
        with pytest.raises(TrainingError, match="outcome"):
            train("logistic", separable_dataset(), ["X1", "Y"])

    def test_training_is_deterministic(self):
        data = separable_dataset(n=200, seed=1)
        m1 = train("logistic", data, ["X1", "X2"])
        m2 = train("logistic", data, ["X1", "X2"])
        np.testing.assert_array_equal(m1.weights, m2.weights)
        assert m1.bias == m2.bias
        k1 = train("knn", data, ["X1", "X2"])
        k2 = train("knn", data, ["X1", "X2"])
        np.testing.assert_array_equal(k1.matrix, k2.matrix)

    def test_predictions_in_unit_interval(self):
        data = separable_dataset(n=300, seed=2)
        rng = np.random.default_rng(0)
        probe = {"A": (rng.random(50) < 0.5).astype(int),
                 "X1": 5 * rng.standard_normal(50),
                 "X2": 5 * rng.standard_normal(50)}
        for kind in ("logistic", "naive_bayes", "knn"):
            model = train(kind, data, ["A", "X1", "X2"])
            preds = model.predict_proba_columns(probe)
            assert preds.min() >= 0.0 and preds.max() <= 1.0

    def test_model_without_feature_ignores_it(self):
        data = separable_dataset(n=200, seed=4)
        model = train("logistic", data, ["X1"])
        base = model.predict_proba({"X1": 0.3, "X2": -9.0})
        moved = model.predict_proba({"X1": 0.3, "X2": +9.0})
        assert base == moved

    def test_missing_feature_raises(self):
        data = separable_dataset(n=50, seed=5)
        model = train("logistic", data, ["X1", "X2"])
        with pytest.raises(PredictionError, match="missing feature 'X2'"):
            model.predict_proba({"X1": 0.1})


class TestFlipProtected:
    def test_flip_and_involution(self):
        roles = AuditRoles("A", "Y")
        rec = Record(7, {"A": 0, "X1": 3.2})
        flipped = flip_protected(rec, roles)
        assert flipped.values == {"A": 1, "X1": 3.2}
        assert flipped.id == 7
        back = flip_protected(flipped, roles)
        assert back.values == rec.values and back.id == rec.id

    def test_identity_on_other_fields(self):
        roles = AuditRoles("A", "Y")
        rec = Record(0, {"A": 1, "X1": -2.0, "X2": 0.5, "C": 3.0})
        flipped = flip_protected(rec, roles)
        for name, value in rec.values.items():
            if name != "A":
                assert flipped.values[name] == value

    def test_non_binary_rejected(self):
        roles = AuditRoles("A", "Y")
        with pytest.raises(PredictionError, match="not binary"):
            flip_protected(Record(0, {"A": 2}), roles)
