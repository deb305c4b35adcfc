"""Point-set classifier: taxonomy, canonicalization, OFF sampling, the
network itself, training, and the finite-difference gradient oracle."""

import numpy as np
import pytest

from hapmap import classifier as clf
from hapmap.classifier import (MeshFormatError, TrainConfig, TrainingError,
                               augment, forward, gate, grad_check, init_model,
                               load_model, loss_and_grads, merge_labels,
                               normalize_unit_sphere, predict_gated,
                               resample_points, sample_mesh_off, save_model,
                               to_labeling_class, train)

CUBE_OFF = b"""OFF
8 6 12
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 1 2 3
4 4 7 6 5
4 0 4 5 1
4 1 5 6 2
4 2 6 7 3
4 3 7 4 0
"""


def tiny_model(seed=3, k=3):
    return init_model([f"c{i}" for i in range(k)], n_points=16,
                      point_widths=(3, 8, 8), head_hidden=(8,),
                      rng=np.random.default_rng(seed))


def toy_dataset(rng, n_each=60, n_pts=128):
    """Spheres vs elongated boxes; linearly inseparable in raw coords."""
    def sphere():
        v = rng.normal(size=(n_pts, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(80, 120)

    def box():
        return rng.uniform(-1, 1, size=(n_pts, 3)) * [300, 40, 40]

    clouds = [sphere() for _ in range(n_each)] + [box() for _ in range(n_each)]
    return clouds, np.array([0] * n_each + [1] * n_each)


class TestTaxonomy:
    def test_paper_groupings(self):
        assert merge_labels("stool") == "sit_on"
        assert merge_labels("night_stand") == "put_on"
        assert merge_labels("bookshelf") == "store_in"
        assert merge_labels("stairs") == "stairs"

    def test_total_on_labeling_taxonomy(self):
        for fine in clf.FINE_CLASSES:
            assert merge_labels(fine, "labeling") in clf.LABELING_COARSE_CLASSES

    def test_surjective_onto_labeling(self):
        image = {merge_labels(f, "labeling") for f in clf.FINE_CLASSES}
        assert image == set(clf.LABELING_COARSE_CLASSES)

    def test_sanitary_merge(self):
        assert merge_labels("bathtub", "labeling") == "sanitary"
        assert merge_labels("toilet", "labeling") == "sanitary"
        assert merge_labels("bathtub", "training") == "bathtub"

    def test_untrained_classes(self):
        with pytest.raises(ValueError):
            merge_labels("door", "training")
        assert merge_labels("door", "labeling") == "door"

    def test_unknown_fine(self):
        with pytest.raises(ValueError):
            merge_labels("piano")

    def test_to_labeling_class(self):
        assert to_labeling_class("toilet") == "sanitary"
        assert to_labeling_class("sit_on") == "sit_on"
        with pytest.raises(ValueError):
            to_labeling_class("nonsense")


class TestNormalize:
    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        cloud = rng.normal(size=(50, 3)) * 40 + 7
        np.testing.assert_allclose(normalize_unit_sphere(cloud),
                                   normalize_unit_sphere(cloud * 2))

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        once = normalize_unit_sphere(rng.normal(size=(30, 3)))
        np.testing.assert_allclose(normalize_unit_sphere(once), once, atol=1e-12)

    def test_max_norm_one(self):
        rng = np.random.default_rng(2)
        out = normalize_unit_sphere(rng.normal(size=(30, 3)) * 123)
        assert np.linalg.norm(out, axis=1).max() == pytest.approx(1.0)

    def test_single_point_to_origin(self):
        np.testing.assert_array_equal(normalize_unit_sphere([[5.0, 6.0, 7.0]]),
                                      np.zeros((1, 3)))


class TestAugment:
    def test_forced_identity(self):
        rng = np.random.default_rng(0)
        cloud = rng.normal(size=(20, 3))
        np.testing.assert_allclose(augment(cloud, rng, sigma=0.0, angle=0.0), cloud)

    def test_half_turn(self):
        rng = np.random.default_rng(0)
        out = augment(np.array([[1.0, 0.0, 0.0]]), rng, sigma=0.0, angle=np.pi)
        np.testing.assert_allclose(out, [[-1.0, 0.0, 0.0]], atol=1e-12)

    def test_count_unchanged_and_clip(self):
        rng = np.random.default_rng(3)
        cloud = rng.normal(size=(40, 3))
        out = augment(cloud, rng, sigma=0.5, clip=0.05, angle=0.0)
        assert out.shape == cloud.shape
        assert np.abs(out - cloud).max() <= 0.05 + 1e-12


class TestResample:
    def test_downsample_no_replacement(self):
        rng = np.random.default_rng(0)
        cloud = np.arange(60, dtype=float).reshape(20, 3)
        out = resample_points(cloud, 10, rng)
        assert out.shape == (10, 3)
        assert len({tuple(p) for p in out}) == 10

    def test_upsample_with_replacement(self):
        rng = np.random.default_rng(0)
        out = resample_points(np.zeros((3, 3)), 9, rng)
        assert out.shape == (9, 3)


class TestOffSampling:
    def test_unit_cube_on_surface(self):
        rng = np.random.default_rng(0)
        pts = sample_mesh_off(CUBE_OFF, 2048, rng)
        centered = pts - [0.5, 0.5, 0.5]
        on_face = np.isclose(np.abs(centered), 0.5, atol=1e-9).any(axis=1)
        assert on_face.all()
        assert np.abs(centered).max() <= 0.5 + 1e-9

    def test_single_triangle_barycentric(self):
        off = b"OFF\n3 1 0\n0 0 0\n2 0 0\n0 2 0\n3 0 1 2\n"
        pts = sample_mesh_off(off, 256, np.random.default_rng(1))
        assert (pts[:, 2] == 0).all()
        assert (pts[:, 0] >= 0).all() and (pts[:, 1] >= 0).all()
        assert (pts[:, 0] + pts[:, 1] <= 2 + 1e-12).all()

    def test_face_count_mismatch(self):
        off = b"OFF\n3 2 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        with pytest.raises(MeshFormatError):
            sample_mesh_off(off, 16, np.random.default_rng(0))

    def test_zero_area(self):
        off = b"OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n"
        with pytest.raises(MeshFormatError, match="area"):
            sample_mesh_off(off, 16, np.random.default_rng(0))

    def test_glued_header_counts(self):
        off = b"OFF 3 1 0\n0 0 0\n2 0 0\n0 2 0\n3 0 1 2\n"
        assert sample_mesh_off(off, 64, np.random.default_rng(0)).shape == (64, 3)

    def test_not_off(self):
        with pytest.raises(MeshFormatError):
            sample_mesh_off(b"PLY\n", 16, np.random.default_rng(0))


class TestForward:
    def test_permutation_invariance_bitwise(self):
        model = tiny_model()
        rng = np.random.default_rng(5)
        cloud = rng.normal(size=(16, 3))
        base = forward(model, cloud)
        for _ in range(25):
            probs = forward(model, cloud[rng.permutation(16)])
            assert np.array_equal(probs, base)

    def test_duplicate_point_no_change(self):
        model = tiny_model()
        rng = np.random.default_rng(6)
        cloud = rng.normal(size=(16, 3))
        doubled = np.vstack([cloud, cloud[3:4]])
        np.testing.assert_array_equal(forward(model, doubled), forward(model, cloud))

    def test_probabilities_sum_to_one(self):
        model = tiny_model(seed=8, k=5)
        rng = np.random.default_rng(7)
        for _ in range(10):
            probs = forward(model, rng.normal(size=(16, 3)) * 10)
            assert abs(probs.sum() - 1.0) <= 1e-9
            assert (probs >= 0).all()

    def test_width_mismatch(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="width mismatch"):
            forward(model, np.zeros((16, 4)))


class TestGradCheck:
    def test_against_finite_differences(self):
        model = tiny_model(seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(4, 16, 3))
        y = np.array([0, 1, 2, 1])
        assert grad_check(model, x, y) <= 1e-4

    def test_saturated_batch_near_zero_grads(self):
        model = tiny_model(seed=9).astype(np.float64)
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 16, 3))
        logits, _ = clf._forward_batch(model, x, want_cache=False)
        y = logits.argmax(axis=1)
        model.head_weights[-1] *= 200.0   # saturate the softmax at the argmax
        model.head_biases[-1] *= 200.0
        _, grads, _ = loss_and_grads(model, x, y)
        worst = max(np.abs(g).max() for g in
                    grads["pw"] + grads["pb"] + grads["hw"] + grads["hb"])
        assert worst < 1e-6

    def test_repeatable(self):
        model = tiny_model(seed=3)
        x = np.random.default_rng(4).normal(size=(2, 16, 3))
        y = np.array([0, 1])
        assert grad_check(model, x, y) == grad_check(model, x, y)


class TestTrain:
    def test_toy_separable(self):
        rng = np.random.default_rng(0)
        clouds, labels = toy_dataset(rng)
        test_clouds, test_labels = toy_dataset(rng, n_each=20)
        cfg = TrainConfig(epochs=30, seed=0, n_points=64,
                          point_widths=(3, 32, 64), head_hidden=(32,))
        model, hist = train(clouds, labels, test_clouds, test_labels,
                            ("sphere", "box"), cfg)
        assert hist[-1]["test_acc"] >= 0.95
        assert hist[10]["train_loss"] <= hist[0]["train_loss"]

    def test_same_seed_identical_weights(self):
        rng = np.random.default_rng(1)
        clouds, labels = toy_dataset(rng, n_each=20)
        cfg = TrainConfig(epochs=3, seed=5, n_points=32,
                          point_widths=(3, 16, 16), head_hidden=(8,))
        m1, _ = train(clouds, labels, clouds, labels, ("a", "b"), cfg)
        m2, _ = train(clouds, labels, clouds, labels, ("a", "b"), cfg)
        assert save_model(m1) == save_model(m2)

    def test_empty_class_rejected(self):
        clouds = [np.zeros((8, 3))] * 4
        with pytest.raises(TrainingError, match="without training samples"):
            train(clouds, [0, 0, 0, 0], clouds, [0, 0, 0, 0], ("a", "b"),
                  TrainConfig(epochs=1, n_points=8))


class TestCoarseDominance:
    def test_merged_accuracy_never_below_fine(self):
        # structural property: a correct fine prediction stays correct after
        # merging, so the merged score can only gain
        rng = np.random.default_rng(11)
        model = init_model(clf.TRAINED_FINE_CLASSES, n_points=32,
                           point_widths=(3, 16, 32), head_hidden=(16,),
                           rng=rng)
        from hapmap.scenegen import sample_box_cloud
        fines = list(clf.TRAINED_FINE_CLASSES)
        clouds = [normalize_unit_sphere(
            resample_points(sample_box_cloud(c, rng), 32, rng))
            for c in fines for _ in range(6)]
        truth = np.array([i for i in range(len(fines)) for _ in range(6)])
        preds = np.array([forward(model, c).argmax() for c in clouds])
        fine_acc = (preds == truth).mean()
        merged = [merge_labels(fines[p]) for p in preds]
        merged_truth = [merge_labels(fines[t]) for t in truth]
        coarse_acc = np.mean([a == b for a, b in zip(merged, merged_truth)])
        assert coarse_acc >= fine_acc


class TestGating:
    def test_low_confidence_rejected(self):
        pred = gate([0.53, 0.47], ("table", "chair"), threshold=0.85)
        assert not pred.accepted and pred.confidence == 0.53

    def test_high_confidence_accepted(self):
        pred = gate([0.90, 0.10], ("table", "chair"), threshold=0.85)
        assert pred.accepted and pred.label == "table"

    def test_boundary_strict(self):
        assert not gate([0.85, 0.15], ("a", "b"), threshold=0.85).accepted

    def test_uniform_rejected(self):
        pred = gate(np.full(6, 1 / 6), [f"c{i}" for i in range(6)])
        assert not pred.accepted

    def test_predict_gated_resamples(self):
        model = tiny_model()
        rng = np.random.default_rng(0)
        cloud = rng.normal(size=(200, 3)) * 500
        pred = predict_gated(model, cloud, rng=np.random.default_rng(1))
        assert pred.label in model.classes
        assert pred.accepted == (pred.confidence > 0.85)


class TestSerialization:
    def test_roundtrip_bytes(self):
        model = tiny_model(seed=12, k=4)
        blob = save_model(model)
        again = load_model(blob)
        assert again.classes == model.classes
        assert again.n_points == model.n_points
        assert save_model(again) == blob

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="model"):
            load_model(b"XXXX" + b"\x00" * 32)

    def test_truncated(self):
        blob = save_model(tiny_model())
        with pytest.raises(ValueError, match="truncated"):
            load_model(blob[:-5])
