"""Tests for the trajectory predictor: feature locality, masking and
omission equivalence, translation covariance, and checkpointing."""

import numpy as np
import pytest

from trajsieve import autodiff as ad
from trajsieve.errors import CheckpointError, ConfigError, ContractError
from trajsieve.predictor import (
    PredictorConfig,
    extract_individual_features,
    init_predictor,
    load_predictor,
    predict,
    predict_gated,
    predict_scene,
    save_predictor,
)
from trajsieve.scenes import (
    GenConfig,
    PersonTrack,
    Scene,
    WindowConfig,
    generate_synthetic,
    normalize_scene,
)

CONFIG = PredictorConfig()
WINDOW = WindowConfig()


@pytest.fixture(scope="module")
def params():
    return init_predictor(CONFIG, seed=0)


def _scene(seed, n_min=4, n_max=8):
    gen = GenConfig(n_scenes=1, n_people_min=n_min, n_people_max=n_max)
    scene = generate_synthetic(gen, seed=seed)[0]
    return normalize_scene(scene, WINDOW)[0]


def _swap_neighbors(scene, i, j):
    tracks = list(scene.tracks)
    tracks[i], tracks[j] = tracks[j], tracks[i]
    return Scene(scene.scene_id, scene.frame_rate, tracks)


def test_config_validation():
    with pytest.raises(ConfigError):
        PredictorConfig(d_model=65)
    with pytest.raises(ConfigError):
        PredictorConfig(n_social_layers=0)
    assert CONFIG.n_future == 12


def test_feature_shape_and_locality(params):
    scene = _scene(0)
    feats = extract_individual_features(scene, params, CONFIG)
    assert feats.data.shape == (scene.n_people, CONFIG.d_model)
    swapped = _swap_neighbors(scene, 1, 2)
    feats_swapped = extract_individual_features(swapped, params, CONFIG)
    assert np.allclose(feats.data[1], feats_swapped.data[2], atol=1e-10)
    assert np.allclose(feats.data[2], feats_swapped.data[1], atol=1e-10)
    assert np.allclose(feats.data[0], feats_swapped.data[0], atol=1e-10)


def test_identical_tracks_get_identical_features(params):
    scene = _scene(1, n_min=3, n_max=3)
    tracks = list(scene.tracks)
    tracks[2] = PersonTrack(tracks[2].person_id, tracks[1].positions.copy())
    twin = Scene(scene.scene_id, scene.frame_rate, tracks)
    feats = extract_individual_features(twin, params, CONFIG)
    assert np.allclose(feats.data[1], feats.data[2], atol=1e-12)


def test_perturbing_one_track_changes_only_that_row(params):
    scene = _scene(2, n_min=4, n_max=4)
    feats = extract_individual_features(scene, params, CONFIG).data
    tracks = list(scene.tracks)
    moved = tracks[2].positions.copy()
    moved[: WINDOW.t_obs] += np.array([0.7, -0.4])
    tracks[2] = PersonTrack(tracks[2].person_id, moved)
    bumped = Scene(scene.scene_id, scene.frame_rate, tracks)
    feats_bumped = extract_individual_features(bumped, params, CONFIG).data
    assert not np.allclose(feats[2], feats_bumped[2], atol=1e-6)
    for row in (0, 1, 3):
        assert np.allclose(feats[row], feats_bumped[row], atol=1e-12)


def test_window_mismatch_rejected(params):
    scene = _scene(3)
    short = Scene(scene.scene_id, scene.frame_rate,
                  [PersonTrack(t.person_id, t.positions[:-1]) for t in scene.tracks])
    with pytest.raises(ContractError):
        extract_individual_features(short, params, CONFIG)


def test_predict_output_shape_and_n1(params):
    scene = _scene(4, n_min=1, n_max=1)
    feats = extract_individual_features(scene, params, CONFIG)
    out = predict(feats, np.ones(1), params, CONFIG)
    assert out.data.shape == (12, 2)
    assert np.all(np.isfinite(out.data))


def test_predict_mask_contracts(params):
    scene = _scene(5)
    feats = extract_individual_features(scene, params, CONFIG)
    n = scene.n_people
    with pytest.raises(ContractError):
        predict(feats, np.concatenate([[0], np.ones(n - 1)]), params, CONFIG)
    with pytest.raises(ContractError):
        predict(feats, np.ones(n + 1), params, CONFIG)


def test_omission_equivalence(params):
    # masked prediction equals prediction on the physically reduced input
    rng = np.random.default_rng(0)
    for seed in range(8):
        scene = _scene(100 + seed, n_min=3, n_max=9)
        feats = extract_individual_features(scene, params, CONFIG)
        n = scene.n_people
        mask = np.concatenate([[1], rng.integers(0, 2, size=n - 1)])
        masked_out = predict(feats, mask, params, CONFIG)
        reduced = ad.constant(feats.data[mask == 1])
        reduced_out = predict(reduced, np.ones(int(mask.sum()), dtype=np.int64),
                              params, CONFIG)
        assert np.max(np.abs(masked_out.data - reduced_out.data)) < 1e-10


def test_all_masked_neighbors_equals_solo_primary(params):
    scene = _scene(6, n_min=5, n_max=5)
    feats = extract_individual_features(scene, params, CONFIG)
    mask = np.concatenate([[1], np.zeros(scene.n_people - 1, dtype=np.int64)])
    masked_out = predict(feats, mask, params, CONFIG)
    solo = predict(ad.constant(feats.data[:1]), np.ones(1), params, CONFIG)
    assert np.max(np.abs(masked_out.data - solo.data)) < 1e-10


def test_neighbor_permutation_invariance(params):
    scene = _scene(7, n_min=5, n_max=5)
    base = predict(extract_individual_features(scene, params, CONFIG),
                   np.ones(5), params, CONFIG)
    swapped = _swap_neighbors(scene, 1, 3)
    out = predict(extract_individual_features(swapped, params, CONFIG),
                  np.ones(5), params, CONFIG)
    assert np.max(np.abs(base.data - out.data)) < 1e-10


def test_permutation_invariance_with_mask(params):
    scene = _scene(8, n_min=5, n_max=5)
    feats = extract_individual_features(scene, params, CONFIG)
    mask = np.array([1, 0, 1, 1, 0])
    base = predict(feats, mask, params, CONFIG)
    swapped = _swap_neighbors(scene, 1, 2)
    feats_swapped = extract_individual_features(swapped, params, CONFIG)
    mask_swapped = mask[[0, 2, 1, 3, 4]]
    out = predict(feats_swapped, mask_swapped, params, CONFIG)
    assert np.max(np.abs(base.data - out.data)) < 1e-10


def test_gated_all_ones_matches_plain(params):
    scene = _scene(9, n_min=4, n_max=4)
    feats = extract_individual_features(scene, params, CONFIG)
    plain = predict(feats, np.ones(4), params, CONFIG)
    gated = predict_gated(ad.constant(feats.data), ad.constant(np.ones(4)), params, CONFIG)
    assert np.max(np.abs(plain.data - gated.data)) < 1e-12


def test_gated_binary_matches_masked(params):
    scene = _scene(10, n_min=6, n_max=6)
    feats = extract_individual_features(scene, params, CONFIG)
    mask = np.array([1, 1, 0, 1, 0, 1])
    masked_out = predict(feats, mask, params, CONFIG)
    gated_out = predict_gated(ad.constant(feats.data),
                              ad.constant(mask.astype(np.float64)), params, CONFIG)
    assert np.max(np.abs(masked_out.data - gated_out.data)) < 1e-10


def test_translation_covariance(params):
    scene = _scene(11, n_min=4, n_max=4)
    out = predict_scene(scene, params, CONFIG)
    shift = np.array([12.5, -7.25])
    shifted = Scene(scene.scene_id, scene.frame_rate,
                    [PersonTrack(t.person_id, t.positions + shift) for t in scene.tracks])
    out_shifted = predict_scene(shifted, params, CONFIG)
    assert np.max(np.abs(out_shifted - (out + shift))) < 1e-12


def test_translation_covariance_exact_on_dyadic_shift(params):
    # power-of-two coordinates and shift keep every float op exact
    base = np.round(np.linspace(0.0, 5.0, 21 * 2), 3).reshape(21, 2)
    base = np.floor(base * 1024.0) / 1024.0
    tracks = [PersonTrack(1, base), PersonTrack(2, base + 0.5)]
    scene = Scene("dyadic", 2.5, tracks)
    out = predict_scene(scene, params, CONFIG)
    shift = np.array([32.0, -8.0])
    shifted = Scene("dyadic-s", 2.5,
                    [PersonTrack(t.person_id, t.positions + shift) for t in tracks])
    out_shifted = predict_scene(shifted, params, CONFIG)
    assert np.array_equal(out_shifted, out + shift)


def test_gradients_reach_all_parameters(params):
    scene = _scene(12, n_min=3, n_max=3)
    store = init_predictor(CONFIG, seed=3)
    feats = extract_individual_features(scene, store, CONFIG)
    out = predict(feats, np.ones(3), store, CONFIG)
    loss = ad.mean_all(ad.mul(out, out))
    loss.backward()
    for name, tensor in store.items():
        assert tensor.grad is not None and np.any(tensor.grad != 0.0), name


def test_checkpoint_round_trip(tmp_path, params):
    path = tmp_path / "tp.ckpt"
    save_predictor(path, params, CONFIG)
    loaded, config = load_predictor(path)
    assert config == CONFIG
    for name, tensor in params.items():
        assert np.array_equal(loaded[name].data, tensor.data)
    scene = _scene(13)
    a = predict(extract_individual_features(scene, params, CONFIG),
                np.ones(scene.n_people), params, CONFIG)
    b = predict(extract_individual_features(scene, loaded, CONFIG),
                np.ones(scene.n_people), loaded, CONFIG)
    assert np.array_equal(a.data, b.data)


def test_checkpoint_kind_mismatch(tmp_path, params):
    from trajsieve.estimator import load_estimator

    path = tmp_path / "tp.ckpt"
    save_predictor(path, params, CONFIG)
    with pytest.raises(CheckpointError):
        load_estimator(path)
