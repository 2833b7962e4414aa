import json

import numpy as np
import pytest

from statknnad import plnet
from statknnad.exceptions import DataError, DimensionError
from statknnad.model import SelectionOutcome, build_eta, concat, line_params
from statknnad.plnet import (
    ActivationPattern,
    Affine,
    MaxPool,
    PLNetwork,
    ReLU,
    affine_map,
    dnn_events,
    forward,
    forward_batch,
    latent_distance_quadratics,
    polytope_ineqs,
    random_network,
)


def _random_net(rng, d=None):
    d = d or int(rng.integers(1, 6))
    depth = int(rng.integers(1, 4))
    hidden = tuple(int(rng.integers(2, 9)) * 2 for _ in range(depth))
    pool = int(rng.choice([0, 2]))
    return random_network(rng, d, hidden, int(rng.integers(1, 5)), pool or None)


def test_relu_by_hand():
    net = PLNetwork((Affine(np.eye(2), np.zeros(2)), ReLU()), 2)
    out, pattern = forward(net, [1.0, -1.0])
    assert out.tolist() == [1.0, 0.0]
    assert pattern.entries[1].tolist() == [True, False]


def test_zero_network_outputs_bias():
    net = PLNetwork((Affine(np.zeros((3, 2)), np.array([0.0, 1.0, -1.0])), ReLU(), Affine(np.zeros((2, 3)), np.array([4.0, 5.0]))), 2)
    out, pattern = forward(net, [3.0, 7.0])
    assert out.tolist() == [4.0, 5.0]
    # a pre-activation of exactly zero counts as inactive
    assert pattern.entries[1].tolist() == [False, True, False]


def test_maxpool_lowest_index_wins_ties():
    net = PLNetwork((Affine(np.eye(4), np.zeros(4)), MaxPool(2, 2)), 4)
    out, pattern = forward(net, [1.0, 1.0, -2.0, 3.0])
    assert out.tolist() == [1.0, 3.0]
    assert pattern.entries[1].tolist() == [0, 1]


def test_affine_map_reproduces_forward(rng):
    worst = 0.0
    for _ in range(100):
        net = _random_net(rng)
        x = rng.normal(size=net.input_dim) * 3
        out, pattern = forward(net, x)
        W, B = affine_map(net, pattern)
        worst = max(worst, np.max(np.abs(W @ x + B - out)))
    assert worst <= 1e-8


def test_single_affine_is_unchanged(rng):
    layer = Affine(rng.normal(size=(3, 2)), rng.normal(size=3))
    net = PLNetwork((layer,), 2)
    W, B = affine_map(net, ActivationPattern((None,)))
    np.testing.assert_array_equal(W, layer.weight)
    np.testing.assert_array_equal(B, layer.bias)
    assert net.is_affine


def test_all_active_relu_is_identity():
    net = PLNetwork((ReLU(),), 3)
    W, B = affine_map(net, ActivationPattern((np.ones(3, dtype=bool),)))
    np.testing.assert_array_equal(W, np.eye(3))
    np.testing.assert_array_equal(B, 0)


def test_polytope_of_an_active_unit():
    net = PLNetwork((Affine(np.eye(1), np.zeros(1)), ReLU()), 1)
    C, c0 = polytope_ineqs(net, ActivationPattern((None, np.array([True]))))
    assert C.tolist() == [[-1.0]] and c0.tolist() == [0.0]


def test_points_lie_inside_their_polytope(rng):
    for _ in range(100):
        net = _random_net(rng)
        x = rng.normal(size=net.input_dim)
        _, pattern = forward(net, x)
        C, c0 = polytope_ineqs(net, pattern)
        assert np.all(C @ x + c0 < 0)


def test_polytope_membership_matches_pattern_on_grid(rng):
    g = np.arange(-2.0, 2.0 + 1e-9, 0.01)
    X = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    for _ in range(5):
        net = random_network(rng, 2, (6, 6), 2, 2)
        _, patterns = forward_batch(net, X)
        for ref in rng.choice(X.shape[0], size=4, replace=False):
            C, c0 = polytope_ineqs(net, patterns[ref])
            vals = X @ C.T + c0
            in_poly = np.all(vals <= 0, axis=1)
            same = patterns.matches(patterns[ref])
            # grid points exactly on a facet may legitimately land on either side
            clear = np.min(np.abs(vals), axis=1) > 1e-12
            np.testing.assert_array_equal(in_poly[clear], same[clear])


def _line(rng, n, d):
    train, test = rng.normal(size=(n, d)), rng.normal(size=d)
    out = SelectionOutcome((0,), np.where(test - train[0] < 0, -1.0, 1.0), 1)
    return line_params(concat(test, train), build_eta(out, n, d), np.eye(d))


def test_dnn_events_empty_for_affine_net(rng):
    net = PLNetwork((Affine(rng.normal(size=(2, 3)), np.zeros(2)),), 3)
    assert len(dnn_events(net, _line(rng, 5, 3))) == 0


def test_dnn_events_hold_at_observation(rng):
    for _ in range(20):
        net = _random_net(rng, d=3)
        line = _line(rng, 6, 3)
        assert np.all(dnn_events(net, line).evaluate(line.z_obs) <= 1e-9)


def test_latent_distances_are_quadratic_inside_the_event(rng):
    checked = 0
    while checked < 50:
        net = _random_net(rng, d=3)
        line = _line(rng, 6, 3)
        dq = latent_distance_quadratics(net, line)
        z = line.z_obs + rng.normal() * 0.05
        if not np.all(dnn_events(net, line).evaluate(z) <= 0):
            continue
        lat, _ = forward_batch(net, line.at(z).reshape(7, 3))
        direct = np.sum((lat[0] - lat[1:]) ** 2, axis=1)
        np.testing.assert_allclose(dq(z), direct, rtol=1e-8, atol=1e-12)
        checked += 1


def test_network_validation():
    with pytest.raises(DimensionError):
        PLNetwork((Affine(np.eye(2), np.zeros(2)), Affine(np.eye(3), np.zeros(3))), 2)
    with pytest.raises(DimensionError):
        forward(PLNetwork((ReLU(),), 2), [1.0, 2.0, 3.0])


def test_json_round_trip(rng, tmp_path):
    net = random_network(rng, 4, (8,), 2, 2)
    path = tmp_path / "net.json"
    plnet.save(net, path)
    back = plnet.load(path)
    x = rng.normal(size=4)
    np.testing.assert_array_equal(forward(back, x)[0], forward(net, x)[0])
    assert json.loads(path.read_text())["format"] == "plnet"


def test_bad_json_is_a_data_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(DataError):
        plnet.load(path)
    path.write_text(json.dumps({"format": "plnet", "version": 1, "input_dim": 2, "layers": [{"type": "conv"}]}))
    with pytest.raises(DataError):
        plnet.load(path)
