import numpy as np
import pytest

from morphoreg.data import build_dataset, load_split, measurement_kinds, read_manifest
from morphoreg.estimator import MultiScaleVoxelRegressor
from morphoreg.phantom import AugmentConfig
from morphoreg.validation import ValidationError


@pytest.fixture(scope="module")
def arrays(tmp_path_factory):
    out = tmp_path_factory.mktemp("est_ds")
    manifest = build_dataset(out, n_subjects=10, dims=(16, 16, 16), seed=31, scans_per_subject=(2, 3))
    records, names = read_manifest(manifest)
    X_train, Y_train, names, _ = load_split(manifest, "train", records, names)
    X_val, Y_val, _, _ = load_split(manifest, "validation", records, names)
    return X_train, Y_train, X_val, Y_val, names


def small_estimator(**overrides):
    params = dict(
        stem_channels=8,
        stage_channels=(8, 16, 32, 64),
        batch_size=4,
        epochs=2,
        swa_cycles=1,
        swa_cycle_epochs=1,
        augment=AugmentConfig.disabled(),
    )
    params.update(overrides)
    return MultiScaleVoxelRegressor(**params)


def test_get_set_params_round_trip():
    est = small_estimator()
    params = est.get_params()
    assert params["epochs"] == 2
    assert params["adam_lr"] == 1e-4
    est.set_params(epochs=5, adam_lr=2e-4)
    assert est.epochs == 5
    assert est.adam_lr == 2e-4
    with pytest.raises(ValidationError):
        est.set_params(nonsense=1)


def test_clone_compatible_construction():
    est = small_estimator()
    clone = MultiScaleVoxelRegressor(**est.get_params())
    assert clone.get_params() == est.get_params()


def test_fit_predict_score(arrays):
    X_train, Y_train, X_val, Y_val, names = arrays
    kinds = measurement_kinds(names)
    est = small_estimator()
    fitted = est.fit(X_train, Y_train, X_val=X_val, y_val=Y_val,
                     measurement_names=names, measurement_kinds=kinds)
    assert fitted is est
    preds = est.predict(X_val)
    assert preds.shape == (len(X_val), len(names))
    assert np.isfinite(preds).all()
    score = est.score(X_val, Y_val)
    assert -1.0 <= score <= 1.0
    assert est.n_measurements_ == len(names)
    assert est.network_.n_heads == 4


def test_fit_holds_out_validation_fraction(arrays):
    X_train, Y_train, _, _, names = arrays
    est = small_estimator(validation_fraction=0.25)
    est.fit(X_train, Y_train)
    assert hasattr(est, "model_state_")


def test_single_head_ablation(arrays):
    X_train, Y_train, X_val, Y_val, names = arrays
    est = small_estimator(n_heads=1, epochs=1, swa_cycles=0)
    est.fit(X_train, Y_train, X_val=X_val, y_val=Y_val)
    assert est.network_.n_heads == 1
    assert est.predict(X_val).shape == (len(X_val), len(names))


def test_invalid_head_count_rejected(arrays):
    X_train, Y_train, X_val, Y_val, _ = arrays
    est = small_estimator(n_heads=3)
    with pytest.raises(ValidationError):
        est.fit(X_train, Y_train, X_val=X_val, y_val=Y_val)


def test_predict_before_fit_rejected():
    with pytest.raises(ValidationError):
        small_estimator().predict(np.zeros((1, 1, 16, 16, 16), dtype=np.float32))


def test_fit_rejects_mismatched_lengths(arrays):
    X_train, Y_train, _, _, _ = arrays
    with pytest.raises(ValidationError):
        small_estimator().fit(X_train, Y_train[:-1])
