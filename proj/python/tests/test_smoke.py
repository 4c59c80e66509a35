
import numpy as np
import pytest

import partfield as pf

@pytest.fixture(scope="module")
def dumbbell():
    return pf.dumbbell()

@pytest.fixture(scope="module")
def fitted(dumbbell):
    vertices, faces, labels = dumbbell
    config = {
        "iterations": 80,
        "resolution": 16,
        "channels": 8,
        "snapshot_period": 20,
        "feature_hard_start": 40,
        "sampler": {
            "masks_per_batch": 3,
            "positive_pairs": 16,
            "uniform_negatives": 32,
            "hard3d_negatives": 32,
            "feature_hard_negatives": 32,
        },
    }
    return pf.fit(vertices, faces, labels, config, points=3000)

def test_fixture_shapes(dumbbell):
    vertices, faces, labels = dumbbell
    assert vertices.shape[1] == 3
    assert faces.shape == (labels.shape[0], 3)
    assert set(np.unique(labels)) == {0, 1, 2}

def test_field_query_and_round_trip(tmp_path):
    field = pf.Field(8, 4, 0.5, seed=3)
    assert field.params.shape == (3, 8, 8, 4)
    assert field.temperature == pytest.approx(0.07, rel=1e-6)
    points = np.array([[0.0, 0.0, 0.0], [0.5, -0.25, 1.0]])
    features = field.query(points)
    assert features.shape == (2, 4)
    assert features.dtype == np.float32

    path = tmp_path / "f.pfld"
    field.save(str(path))
    again = pf.Field.load(str(path))
    np.testing.assert_array_equal(again.query(points), features)
    np.testing.assert_array_equal(pf.Field.from_bytes(field.to_bytes()).params, field.params)

def test_fit_segment_evaluate(dumbbell, fitted):
    vertices, faces, labels = dumbbell
    field, report = fitted
    assert report["iterations"] == 80
    losses = [s["loss"] for s in report["loss"]]
    assert losses[-1] < losses[0]

    features = field.face_features(vertices, faces)
    assert features.shape == (faces.shape[0], 8)
    cuts = pf.segment(features, faces)
    assert len(cuts) == 20
    assert len(np.unique(cuts[1])) == 3
    assert pf.miou(labels, labels) == 1.0
    assert 0.0 <= pf.miou(labels, cuts[1]) <= 1.0

def test_miou_reference_example():
    gt = np.array([0] * 5 + [1] * 5)
    pred = np.array([0] * 4 + [1] * 6)
    assert pf.miou(gt, pred) == pytest.approx((4 / 5 + 5 / 6) / 2)

def test_correspondence_and_cosegment_on_identical_features(dumbbell, fitted):
    vertices, faces, _ = dumbbell
    field, _ = fitted
    features = field.face_features(vertices, faces)
    mapping = pf.nn_correspondence(features, features)
    np.testing.assert_array_equal(mapping, np.arange(faces.shape[0]))
    source = pf.kmeans(features, 3, seed=1)
    np.testing.assert_array_equal(pf.cosegment(source, features, features), source)
    sim = pf.similarity(features, 7)
    assert sim[7] == pytest.approx(1.0)

def test_errors_surface_as_python_exceptions(dumbbell):
    vertices, faces, labels = dumbbell
    with pytest.raises(ValueError):
        pf.miou(labels, labels[:-1])
    with pytest.raises(ValueError):
        pf.Field.from_bytes(b"JUNK")
    with pytest.raises(ValueError):
        pf.fit(vertices, faces, labels[:5], {"iterations": 1}, points=500)
    with pytest.raises(RuntimeError):
        pf.fit(vertices, faces, labels, {"iterations": "many"}, points=500)
