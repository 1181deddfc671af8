import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weakpose.alignment import nse_distance, se_distance
from weakpose.consensus import select_consensus
from weakpose.losses import (LossWeights, multiview_loss, regularization_loss, supervised_loss,
                             total_loss)

from conftest import central_difference, random_pose, random_rotation, rel_err


def views_of(p, rots):
    return [r.T @ p for r in rots]


def rig(rng, n=4):
    return [np.eye(3)] + [random_rotation(rng) for _ in range(n - 1)]


def test_multiview_identical_predictions(rng):
    p = random_pose(rng)
    val, grads, _ = multiview_loss([p] * 4, [np.eye(3)] * 4)
    assert val == 0
    for g in grads:
        np.testing.assert_allclose(g, 0, atol=1e-15)


@pytest.mark.parametrize("distance", ["nse", "se"])
def test_multiview_consistent_views(rng, distance):
    p = random_pose(rng)
    rots = rig(rng)
    val, _, _ = multiview_loss(views_of(p, rots), rots, distance=distance)
    assert val < 1e-10 * (1 if distance == "nse" else np.sum(p ** 2))


def test_multiview_value_matches_definition(rng):
    rots = rig(rng)
    preds = [random_pose(rng, 8) for _ in range(4)]
    val, _, cons = multiview_loss(preds, rots, k=2)
    rotated = [r @ p for r, p in zip(rots, preds)]
    ref = select_consensus(rotated, 2).reference
    assert val == pytest.approx(np.mean([nse_distance(q, ref) for q in rotated]), rel=1e-12)
    np.testing.assert_array_equal(cons.reference, ref)


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("distance", ["nse", "se"])
def test_multiview_gradient_stop_gradient(seed, distance):
    rng = np.random.default_rng(seed)
    rots = rig(rng)
    preds = [random_pose(rng, 5) for _ in range(4)]
    _, grads, cons = multiview_loss(preds, rots, distance=distance)
    ref = cons.reference
    dist = nse_distance if distance == "nse" else se_distance
    for c in range(4):
        def f(x, c=c):
            return sum(dist(rots[i] @ (x if i == c else preds[i]), ref) for i in range(4)) / 4
        fd = central_difference(f, preds[c])
        assert rel_err(grads[c], fd) < 1e-5


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("distance", ["nse", "se"])
def test_multiview_gradient_coupled_reference(seed, distance):
    rng = np.random.default_rng(seed)
    rots = rig(rng)
    preds = [random_pose(rng, 5) for _ in range(4)]
    _, grads, cons = multiview_loss(preds, rots, distance=distance, stop_gradient_reference=False)
    members = cons.member_indices
    dist = nse_distance if distance == "nse" else se_distance

    def f(x, c):
        ps = [x if i == c else preds[i] for i in range(4)]
        q = [r @ p for r, p in zip(rots, ps)]
        ref = sum(q[i] for i in members) / len(members)
        ref = ref - ref[:, [0]]
        return sum(dist(qi, ref) for qi in q) / 4

    for c in range(4):
        fd = central_difference(lambda x: f(x, c), preds[c])
        assert rel_err(grads[c], fd) < 1e-5


def test_multiview_zero_iff_all_equal_reference(rng):
    rots = rig(rng)
    p = random_pose(rng)
    views = views_of(p, rots)
    views[3] = views[3] * 1.0 + 1.0
    views[3][:, 0] = 0
    val, _, _ = multiview_loss(views, rots, distance="se")
    assert val > 0


def test_multiview_errors(rng):
    p = random_pose(rng)
    with pytest.raises(ValueError):
        multiview_loss([p, p], [np.eye(3)])
    with pytest.raises(ValueError):
        multiview_loss([p], [np.eye(3)])


def test_supervised_values(rng):
    labels = [random_pose(rng) for _ in range(5)]
    assert supervised_loss(labels, labels)[0] == 0
    assert supervised_loss([2 * p for p in labels], labels, "nse")[0] < 1e-15
    preds = [random_pose(rng) for _ in range(5)]
    for name, dist in (("nse", nse_distance), ("se", se_distance)):
        val, _ = supervised_loss(preds, labels, name)
        expected = sum(dist(a, b) for a, b in zip(preds, labels)) / 5
        assert val == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        supervised_loss([], [])


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("which", [supervised_loss, regularization_loss])
def test_paired_loss_gradients(seed, which):
    rng = np.random.default_rng(seed)
    preds = [random_pose(rng, 5) for _ in range(3)]
    tgts = [random_pose(rng, 5) for _ in range(3)]
    for distance in ("nse", "se"):
        _, grads = which(preds, tgts, distance)
        for i in range(3):
            f = lambda x, i=i: which([x if j == i else preds[j] for j in range(3)], tgts, distance)[0]
            assert rel_err(grads[i], central_difference(f, preds[i])) < 1e-5


def test_regularization_values(rng):
    anchors = [random_pose(rng) for _ in range(8)]
    assert regularization_loss(anchors, anchors)[0] == 0
    assert regularization_loss([3 * a for a in anchors], anchors, "nse")[0] < 1e-15
    preds = [random_pose(rng) for _ in range(8)]
    expected = np.mean([se_distance(a, b) for a, b in zip(preds, anchors)])
    assert regularization_loss(preds, anchors, "se")[0] == pytest.approx(expected, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0), st.integers(0, 3))
def test_nse_terms_ignore_prediction_scale(seed, a, which):
    rng = np.random.default_rng(seed)
    rots = rig(rng)
    preds = [random_pose(rng, 8) for _ in range(4)]
    tgts = [random_pose(rng, 8) for _ in range(4)]
    scaled = [a * p if i == which else p for i, p in enumerate(preds)]
    assert supervised_loss(scaled, tgts)[0] == pytest.approx(supervised_loss(preds, tgts)[0], abs=1e-9)
    assert regularization_loss(scaled, tgts)[0] == pytest.approx(regularization_loss(preds, tgts)[0], abs=1e-9)


def test_total_loss():
    assert total_loss(1, 2, 3, LossWeights()) == 501
    assert total_loss(0, 0, 0) == 0
    assert total_loss(1, 1, 1, LossWeights(1, 1, 1)) == 3
    with pytest.raises(ValueError):
        LossWeights(-1, 1, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0), st.integers(0, 3))
def test_nse_multiview_scale_invariant_with_normalized_reference(seed, a, which):
    rng = np.random.default_rng(seed)
    rots = rig(rng)
    preds = [random_pose(rng, 8) for _ in range(4)]
    scaled = [a * p if i == which else p for i, p in enumerate(preds)]
    v0 = multiview_loss(preds, rots, normalize_reference=True)[0]
    v1 = multiview_loss(scaled, rots, normalize_reference=True)[0]
    assert v1 == pytest.approx(v0, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("coupled", [False, True])
def test_multiview_gradient_normalized_reference(seed, coupled):
    rng = np.random.default_rng(seed)
    rots = rig(rng)
    preds = [random_pose(rng, 5) for _ in range(4)]
    _, grads, cons = multiview_loss(preds, rots, stop_gradient_reference=not coupled,
                                    normalize_reference=True)
    members = cons.member_indices

    def f(x, c):
        ps = [x if i == c else preds[i] for i in range(4)]
        q = [r @ p for r, p in zip(rots, ps)]
        if coupled:
            ref = sum(q[i] / np.linalg.norm(q[i]) for i in members) / len(members)
            ref = ref - ref[:, [0]]
        else:
            ref = cons.reference
        return sum(nse_distance(qi, ref) for qi in q) / 4

    for c in range(4):
        fd = central_difference(lambda x: f(x, c), preds[c])
        assert rel_err(grads[c], fd) < 1e-5
