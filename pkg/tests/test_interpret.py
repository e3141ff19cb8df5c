import json

import numpy as np
import pytest

from streetpulse.interpret import (
    FeatureTable,
    InterpretError,
    fit_logistic_cv,
    label_extremes,
    logistic_loss_grad,
    read_feature_table,
    select_features,
    write_coefficients_csv,
    write_cv_report,
)


def table_from(x, names=None, ids=None):
    n, p = x.shape
    names = names or [f"f{j}" for j in range(p)]
    ids = ids or [f"i{k:04d}" for k in range(n)]
    return FeatureTable(ids, names, x, {nm: "count" for nm in names})


def labels_from(ids, y):
    return {img: ("top" if v else "bottom") for img, v in zip(ids, y)}


class TestLabelExtremes:
    def test_hundred_images_ten_per_extreme(self):
        scores = {f"i{k:03d}": float(k) for k in range(100)}
        labels = label_extremes(scores)
        assert {img for img, l in labels.items() if l == "top"} == {
            f"i{k:03d}" for k in range(90, 100)
        }
        assert {img for img, l in labels.items() if l == "bottom"} == {
            f"i{k:03d}" for k in range(10)
        }
        assert len(labels) == 20

    def test_twenty_images_two_per_extreme(self):
        scores = {f"i{k:02d}": float(k) for k in range(20)}
        labels = label_extremes(scores)
        assert sum(1 for l in labels.values() if l == "top") == 2
        assert sum(1 for l in labels.values() if l == "bottom") == 2

    def test_constant_scores_rejected(self):
        with pytest.raises(InterpretError, match="degenerate"):
            label_extremes({f"i{k}": 5.0 for k in range(30)})

    def test_too_few_images_rejected(self):
        with pytest.raises(InterpretError):
            label_extremes({f"i{k}": float(k) for k in range(19)})


def separable_data(rng, n=200, p=6):
    x = rng.normal(size=(n, p))
    direction = np.zeros(p)
    direction[0], direction[1] = 3.0, -2.0
    y = (x @ direction > 0).astype(float)
    # push the classes apart so they are linearly separable with margin
    x[y == 1] += 0.5 * direction / np.linalg.norm(direction)
    x[y == 0] -= 0.5 * direction / np.linalg.norm(direction)
    return x, y


class TestLogisticCv:
    def test_separable_blobs_high_accuracy_and_signs(self):
        rng = np.random.default_rng(0)
        x, y = separable_data(rng)
        table = table_from(x)
        result = fit_logistic_cv(table, labels_from(table.image_ids, y), folds=5)
        assert result.mean_accuracy >= 0.99
        assert result.coefficients["f0"] > 0
        assert result.coefficients["f1"] < 0

    def test_pure_noise_near_chance(self):
        accs = []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            x = rng.normal(size=(200, 8))
            y = (np.arange(200) % 2).astype(float)
            table = table_from(x)
            result = fit_logistic_cv(table, labels_from(table.image_ids, y), seed=seed)
            accs.append(result.mean_accuracy)
        assert np.mean(accs) == pytest.approx(0.5, abs=0.05)

    def test_single_class_rejected(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 3))
        table = table_from(x)
        with pytest.raises(InterpretError):
            fit_logistic_cv(table, {img: "top" for img in table.image_ids})

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(2)
        x, y = separable_data(rng, n=120)
        table = table_from(x)
        labels = labels_from(table.image_ids, y)
        perm = rng.permutation(len(y))
        shuffled = FeatureTable(
            [table.image_ids[i] for i in perm], table.feature_names, x[perm], table.semantics
        )
        a = fit_logistic_cv(table, labels, seed=7)
        b = fit_logistic_cv(shuffled, labels, seed=7)
        assert a.fold_accuracies == b.fold_accuracies
        assert a.coefficients == pytest.approx(b.coefficients)

    def test_constant_shift_leaves_predictions_unchanged(self):
        rng = np.random.default_rng(3)
        x, y = separable_data(rng, n=150)
        table = table_from(x)
        labels = labels_from(table.image_ids, y)
        shifted = FeatureTable(
            table.image_ids, table.feature_names, x + np.array([5.0] + [0.0] * 5), table.semantics
        )
        a = fit_logistic_cv(table, labels, seed=4)
        b = fit_logistic_cv(shifted, labels, seed=4)
        assert a.fold_accuracies == b.fold_accuracies
        assert a.coefficients == pytest.approx(b.coefficients, abs=1e-8)


class TestGradientChecks:
    def test_analytic_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        x = np.column_stack([np.ones(60), rng.normal(size=(60, 4))])
        y = (rng.random(60) < 0.5).astype(float)
        for _ in range(20):
            w = rng.normal(scale=0.8, size=5)
            _, grad = logistic_loss_grad(w, x, y, l2=1.0)
            fd = np.empty_like(w)
            h = 1e-6
            for j in range(5):
                e = np.zeros(5)
                e[j] = h
                fd[j] = (
                    logistic_loss_grad(w + e, x, y, 1.0)[0]
                    - logistic_loss_grad(w - e, x, y, 1.0)[0]
                ) / (2 * h)
            assert np.allclose(grad, fd, rtol=1e-5, atol=1e-7)

    def test_gradient_norm_small_at_optimum(self):
        from streetpulse.interpret import _newton_logistic

        rng = np.random.default_rng(5)
        x = np.column_stack([np.ones(80), rng.normal(size=(80, 3))])
        y = (rng.random(80) < 0.4).astype(float)
        w = _newton_logistic(x, y, l2=1.0)
        _, grad = logistic_loss_grad(w, x, y, 1.0)
        assert np.linalg.norm(grad) < 1e-6


class TestSelectFeatures:
    def planted(self, seed, n=240, n_info=5, n_noise=20):
        rng = np.random.default_rng(seed)
        p = n_info + n_noise
        names = [f"info{j}" for j in range(n_info)] + [f"noise{j}" for j in range(n_noise)]
        x = rng.normal(size=(n, p))
        direction = np.zeros(p)
        direction[:n_info] = 1.2
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(x @ direction)))).astype(float)
        table = table_from(x, names=names)
        return table, labels_from(table.image_ids, y)

    def test_planted_sparsity_recovered_over_seeds(self):
        for seed in range(10):
            table, labels = self.planted(seed)
            kept = set(select_features(table, labels, l1_strength=0.06))
            assert {f"info{j}" for j in range(5)} <= kept
            assert sum(1 for k in kept if k.startswith("noise")) <= 3

    def test_vanishing_penalty_keeps_everything(self):
        table, labels = self.planted(3, n_noise=6)
        kept = select_features(table, labels, l1_strength=1e-10)
        assert set(kept) == set(table.feature_names)

    def test_duplicate_columns_keep_at_most_one(self):
        rng = np.random.default_rng(6)
        base = rng.normal(size=(200, 3))
        x = np.column_stack([base[:, 0], base[:, 0], base[:, 1], base[:, 1], base[:, 2]])
        logits = 1.5 * base[:, 0] - 1.2 * base[:, 1] + 0.8 * base[:, 2]
        y = (rng.random(200) < 1.0 / (1.0 + np.exp(-logits))).astype(float)
        table = table_from(x, names=["a1", "a2", "b1", "b2", "c"])
        kept = set(select_features(table, labels_from(table.image_ids, y), 0.03))
        assert len(kept & {"a1", "a2"}) <= 1
        assert len(kept & {"b1", "b2"}) <= 1

    def test_everything_killed_is_an_error(self):
        table, labels = self.planted(7)
        with pytest.raises(InterpretError, match="weaker"):
            select_features(table, labels, l1_strength=50.0)


class TestFeatureTableIo:
    def write_table(self, tmp_path, rows, names=("sidewalk", "truck"), kinds=("fraction", "count")):
        csv_path = tmp_path / "features.csv"
        meta_path = tmp_path / "features_meta.json"
        csv_path.write_text(
            "image_id," + ",".join(names) + "\n" + "\n".join(rows) + ("\n" if rows else "")
        )
        meta_path.write_text(json.dumps(dict(zip(names, kinds))))
        return csv_path, meta_path

    def test_round_trip(self, tmp_path):
        csv_path, meta_path = self.write_table(tmp_path, ["i1,0.25,3", "i2,0.5,0"])
        table = read_feature_table(csv_path, meta_path)
        assert table.image_ids == ["i1", "i2"]
        assert table.feature_names == ["sidewalk", "truck"]
        assert table.matrix.tolist() == [[0.25, 3.0], [0.5, 0.0]]
        assert table.semantics == {"sidewalk": "fraction", "truck": "count"}

    def test_fraction_out_of_range_rejected(self, tmp_path):
        csv_path, meta_path = self.write_table(tmp_path, ["i1,1.25,3"])
        with pytest.raises(InterpretError, match="fraction"):
            read_feature_table(csv_path, meta_path)

    def test_negative_count_rejected(self, tmp_path):
        csv_path, meta_path = self.write_table(tmp_path, ["i1,0.25,-3"])
        with pytest.raises(InterpretError, match="negative"):
            read_feature_table(csv_path, meta_path)

    def test_ragged_row_rejected(self, tmp_path):
        csv_path, meta_path = self.write_table(tmp_path, ["i1,0.25"])
        with pytest.raises(InterpretError, match=":2"):
            read_feature_table(csv_path, meta_path)

    def test_unknown_feature_rejected(self, tmp_path):
        csv_path, _ = self.write_table(tmp_path, ["i1,0.25,3"])
        meta_path = tmp_path / "other_meta.json"
        meta_path.write_text(json.dumps({"sidewalk": "fraction"}))
        with pytest.raises(InterpretError, match="missing"):
            read_feature_table(csv_path, meta_path)


def test_report_writers(tmp_path):
    rng = np.random.default_rng(8)
    x, y = separable_data(rng, n=100)
    table = table_from(x)
    result = fit_logistic_cv(table, labels_from(table.image_ids, y))
    coef_path = tmp_path / "coefficients.csv"
    report_path = tmp_path / "cv_report.json"
    write_coefficients_csv(result, coef_path)
    write_cv_report(result, report_path)
    lines = coef_path.read_text().splitlines()
    assert lines[0] == "feature,coef,abs_rank"
    assert len(lines) == 1 + len(table.feature_names)
    report = json.loads(report_path.read_text())
    assert len(report["fold_accuracies"]) == 5
    assert report["mean_accuracy"] == result.mean_accuracy
