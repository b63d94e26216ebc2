import numpy as np
import pytest

from vanids.boosted import BoostConfig
from vanids.dataio import ColumnSchema, Dataset
from vanids.linear import SolveConfig
from vanids.stacking import (
    PreprocessArtifacts,
    StackConfig,
    StackedModel,
    fit_stack,
    oof_meta_features,
    predict,
    predict_proba,
    stratified_folds,
)
from vanids.trees import ForestConfig


def ds(rows, labels, n_classes=None):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    labels = np.asarray(labels)
    k = n_classes or int(labels.max()) + 1
    return Dataset(
        rows=rows,
        labels=labels,
        schema=ColumnSchema(tuple(f"f{i}" for i in range(rows.shape[1])), "y"),
        class_names=tuple(f"c{i}" for i in range(k)),
    )


def small_config(**kw):
    base = dict(
        cv_folds=3,
        forest=ForestConfig(n_estimators=5, max_depth=4, min_samples_split=2,
                            min_samples_leaf=1, seed=0),
        boost=BoostConfig(iterations=5, depth=2, seed=0),
        meta=SolveConfig(max_iter=200),
        seed=0,
    )
    base.update(kw)
    return StackConfig(**base)


def separable(n=120, k=2, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(size=(n, 3))
    labels = (rows[:, 0] > 0.5).astype(int) if k == 2 else rng.integers(0, k, n)
    if k != 2:
        rows[np.arange(n), labels % 3] += labels  # make classes separable-ish
    return ds(rows, labels, n_classes=k)


class TestStratifiedFolds:
    def test_partitions_and_balance(self):
        labels = np.array([0] * 30 + [1] * 12)
        folds = stratified_folds(labels, 3, seed=1)
        assert folds.shape == (42,)
        for c in (0, 1):
            counts = np.bincount(folds[labels == c], minlength=3)
            assert counts.max() - counts.min() <= 1

    def test_deterministic(self):
        labels = np.random.default_rng(2).integers(0, 2, 40)
        labels[:4] = [0, 0, 1, 1]
        assert np.array_equal(
            stratified_folds(labels, 4, seed=9), stratified_folds(labels, 4, seed=9)
        )

    def test_small_class_rejected(self):
        with pytest.raises(ValueError, match="fewer than cv_folds"):
            stratified_folds(np.array([0, 0, 0, 1, 1]), 3, seed=0)


class TestOofMetaFeatures:
    def test_width_is_bases_times_classes(self):
        d = separable(90, k=3, seed=3)
        meta = oof_meta_features(d, small_config())
        assert meta.shape == (90, 2 * 3)

    def test_width_with_one_base_disabled(self):
        d = separable(60, seed=4)
        meta = oof_meta_features(d, small_config(use_boosted=False))
        assert meta.shape == (60, 2)

    def test_rows_are_probability_blocks(self):
        d = separable(60, seed=5)
        meta = oof_meta_features(d, small_config())
        assert np.allclose(meta[:, :2].sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(meta[:, 2:].sum(axis=1), 1.0, atol=1e-9)

    def test_leakage_probe_label_mutation(self):
        # With folds pinned, changing row i's label must not move row i's
        # meta-features: the models predicting i never trained on i.
        rng = np.random.default_rng(6)
        d = separable(48, seed=6)
        cfg = small_config(cv_folds=3)
        folds = stratified_folds(d.labels, 3, seed=cfg.seed)
        base = oof_meta_features(d, cfg, fold_indices=folds)
        for i in rng.choice(48, size=4, replace=False):
            labels = d.labels.copy()
            labels[i] = 1 - labels[i]
            mutated = Dataset(rows=d.rows, labels=labels, schema=d.schema,
                              class_names=d.class_names)
            out = oof_meta_features(mutated, cfg, fold_indices=folds)
            assert np.allclose(out[i], base[i], atol=1e-12)

    def test_constant_base_gives_constant_columns(self):
        # single-feature constant data: every base predicts the class prior
        d = ds(np.ones((8, 1)), [0, 1, 0, 1, 0, 1, 0, 1])
        cfg = small_config(
            cv_folds=2,
            forest=ForestConfig(n_estimators=2, max_depth=2, min_samples_split=2,
                                min_samples_leaf=1, seed=0),
            boost=BoostConfig(iterations=2, depth=1, seed=0),
        )
        meta = oof_meta_features(d, cfg)
        assert np.allclose(meta.std(axis=0), 0.0, atol=1e-9)


class TestFitStack:
    def test_end_to_end_beats_or_matches_bases(self):
        from vanids import boosted as bm
        from vanids import trees as tm
        from vanids.dataio import stratified_split

        rng = np.random.default_rng(7)
        n = 600
        rows = rng.uniform(size=(n, 4))
        labels = ((rows[:, 0] + rows[:, 1] > 1.0)).astype(int)
        flip = rng.uniform(size=n) < 0.02
        labels[flip] = 1 - labels[flip]
        pair = stratified_split(ds(rows, labels), 0.8, seed=1)
        cfg = small_config(
            forest=ForestConfig(n_estimators=15, max_depth=8, min_samples_split=4,
                                min_samples_leaf=2, seed=0),
            boost=BoostConfig(iterations=30, depth=3, seed=0),
        )
        stack = fit_stack(pair.train, cfg)
        stack_acc = (predict(stack, pair.test.rows)[0] == pair.test.labels).mean()
        f = tm.fit_forest(pair.train, cfg.forest)
        b = bm.fit_boosted(pair.train, cfg.boost)
        f_acc = (tm.predict_proba(f, pair.test.rows).argmax(1) == pair.test.labels).mean()
        b_acc = (bm.predict_proba(b, pair.test.rows).argmax(1) == pair.test.labels).mean()
        assert stack_acc >= max(f_acc, b_acc) - 0.005

    def test_single_base_stack_fits(self):
        d = separable(80, seed=8)
        m = fit_stack(d, small_config(use_boosted=False))
        assert m.boosted is None
        assert m.meta.weights.shape[1] == 2
        labels, proba = predict(m, d.rows)
        assert proba.shape == (80, 2)

    def test_overfit_stack_reproduces_training_labels(self):
        d = separable(90, seed=9)
        cfg = small_config(
            forest=ForestConfig(n_estimators=10, max_depth=12, min_samples_split=2,
                                min_samples_leaf=1, bootstrap=False,
                                features_per_split="all", seed=0),
            boost=BoostConfig(iterations=40, depth=3, seed=0),
        )
        m = fit_stack(d, cfg)
        labels, _ = predict(m, d.rows)
        assert (labels == d.labels).mean() == 1.0

    def test_probability_rows_sum_to_one(self):
        d = separable(66, k=3, seed=10)
        m = fit_stack(d, small_config())
        _, proba = predict(m, d.rows)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    def test_batch_equals_row_by_row(self):
        d = separable(50, seed=11)
        m = fit_stack(d, small_config())
        batch = predict_proba(m, d.rows)
        single = np.vstack([predict_proba(m, d.rows[i : i + 1]) for i in range(d.n)])
        assert np.array_equal(batch, single)

    def test_deterministic_serialization(self):
        import json

        d = separable(60, seed=12)
        a = fit_stack(d, small_config())
        b = fit_stack(d, small_config())
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    def test_unclean_input_rejected(self):
        rows = np.ones((12, 2))
        rows[0, 0] = np.nan
        d = ds(rows, [0, 1] * 6)
        with pytest.raises(ValueError, match="clean"):
            fit_stack(d, small_config())

    def test_round_trip_and_equal_predictions(self):
        d = separable(70, seed=13)
        m = fit_stack(d, small_config())
        back = StackedModel.from_dict(m.to_dict())
        assert np.array_equal(predict_proba(back, d.rows), predict_proba(m, d.rows))

    def test_predict_through_artifacts(self):
        from vanids.dataio import clean, fit_cleaner
        from vanids.preprocess import fit_scaler, fit_label_encoder, select_k_best

        rng = np.random.default_rng(14)
        raw_rows = rng.normal(size=(100, 4)) * 10
        raw_rows[5, 2] = np.nan
        labels = (raw_rows[:, 0] > 0).astype(int)
        d0 = ds(raw_rows, labels)
        cleaner = fit_cleaner(d0, "median")
        d1 = clean(d0, "median")
        scaler = fit_scaler(d1)
        from vanids.preprocess import transform

        d2 = transform(scaler, d1)
        selector = select_k_best(d2, 3)
        from vanids.preprocess import apply_selector

        d3 = apply_selector(selector, d2)
        artifacts = PreprocessArtifacts(
            cleaner=cleaner,
            encoder=fit_label_encoder(d0.class_names),
            scaler=scaler,
            selector=selector,
        )
        m = fit_stack(d3, small_config(), artifacts=artifacts)
        labels_pred, _ = predict(m, raw_rows)  # raw, dirty rows
        assert labels_pred.shape == (100,)
        assert (labels_pred == labels).mean() > 0.9

    def test_config_validation(self):
        with pytest.raises(ValueError, match="cv_folds"):
            StackConfig(cv_folds=1)
        with pytest.raises(ValueError, match="base learner"):
            small_config(use_forest=False, use_boosted=False)
