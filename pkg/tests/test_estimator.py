import numpy as np
import pytest
from sklearn.base import clone
from sklearn.ensemble import RandomForestClassifier
from sklearn.pipeline import make_pipeline

from shapefm import ShapeTokenClassifier, ShapeTokenFeaturizer, generate_motif_dataset

SMALL = dict(
    target_length=64,
    embed_dim=16,
    scales=((16, 16), (8, 8), (4, 4)),
    depth=1,
    heads=2,
    ff_dim=32,
    dropout=0.0,
)


def motif_arrays(n_per_class, seed, noise=0.2):
    ds = generate_motif_dataset(n_per_class, (16, 40), noise, seed=seed, target_length=64)
    return ds.values_matrix(), ds.labels()


class TestClassifier:
    def test_fit_predict_on_separable_data(self):
        X, y = motif_arrays(8, seed=0)
        clf = ShapeTokenClassifier(epochs=25, batch_size=16, learning_rate=2e-3, seed=1, **SMALL)
        clf.fit(X, y)
        X_test, y_test = motif_arrays(8, seed=9)
        assert clf.score(X_test, y_test) >= 0.9

    def test_predict_maps_back_to_original_labels(self):
        X, y = motif_arrays(4, seed=2)
        y_named = np.where(y == 0, 10, 20)
        clf = ShapeTokenClassifier(epochs=2, batch_size=8, seed=0, **SMALL)
        clf.fit(X, y_named)
        assert set(clf.predict(X)) <= {10, 20}
        assert list(clf.classes_) == [10, 20]

    def test_predict_proba_rows_sum_to_one(self):
        X, y = motif_arrays(4, seed=3)
        clf = ShapeTokenClassifier(epochs=2, batch_size=8, seed=0, **SMALL)
        clf.fit(X, y)
        proba = clf.predict_proba(X)
        assert proba.shape == (len(X), 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-5)

    def test_transform_returns_embeddings(self):
        X, y = motif_arrays(4, seed=4)
        clf = ShapeTokenClassifier(epochs=1, batch_size=8, seed=0, **SMALL)
        clf.fit(X, y)
        feats = clf.transform(X)
        assert feats.shape == (len(X), SMALL["embed_dim"])

    def test_clone_and_get_params_round_trip(self):
        clf = ShapeTokenClassifier(epochs=7, mu=0.5, seed=3, **SMALL)
        cloned = clone(clf)
        assert cloned.get_params() == clf.get_params()
        assert cloned.epochs == 7 and cloned.mu == 0.5

    def test_resizes_arbitrary_length_inputs(self):
        X, y = motif_arrays(4, seed=5)
        wide = np.repeat(X, 2, axis=1)  # length 128 inputs
        clf = ShapeTokenClassifier(epochs=1, batch_size=8, seed=0, **SMALL)
        clf.fit(wide, y)
        assert clf.predict(wide).shape == (len(wide),)

    def test_single_class_rejected(self):
        X, y = motif_arrays(4, seed=6)
        with pytest.raises(Exception):
            ShapeTokenClassifier(epochs=1, **SMALL).fit(X, np.zeros_like(y))


class TestFeaturizer:
    def test_transform_shape_and_determinism(self):
        X, _ = motif_arrays(6, seed=0)
        fz = ShapeTokenFeaturizer(seed=0, **SMALL)
        fz.fit(X)
        a = fz.transform(X)
        b = fz.transform(X)
        assert a.shape == (len(X), SMALL["embed_dim"])
        np.testing.assert_array_equal(a, b)

    def test_composes_with_random_forest_pipeline(self):
        X_train, y_train = motif_arrays(16, seed=1, noise=0.1)
        X_test, y_test = motif_arrays(16, seed=2, noise=0.1)
        pipe = make_pipeline(
            ShapeTokenFeaturizer(seed=0, **SMALL),
            RandomForestClassifier(n_estimators=50, random_state=0),
        )
        pipe.fit(X_train, y_train)
        assert pipe.score(X_test, y_test) >= 0.8

    def test_reuses_fitted_classifier_checkpoint(self):
        X, y = motif_arrays(4, seed=7)
        clf = ShapeTokenClassifier(epochs=1, batch_size=8, seed=0, **SMALL)
        clf.fit(X, y)
        fz = ShapeTokenFeaturizer(checkpoint=clf.checkpoint_, **SMALL)
        feats = fz.fit(X).transform(X)
        np.testing.assert_array_equal(feats, clf.transform(X))
