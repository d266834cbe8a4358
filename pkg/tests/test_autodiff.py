"""Tests for the autodiff core: ops, graphs, gradients, Adam and checkpoints."""

import numpy as np
import pytest

from src.autodiff import tensor as T
from src.autodiff.checkpoint import (
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, subset,
)
from src.autodiff.graph import ComputeGraph, Leaf, check_gradients, evaluate, gradient
from src.autodiff.optim import AdamState, adam_step, clip_grad_norm, learning_rate
from src.errors import (
    CheckpointFormatError, MissingArtifactError, NonFiniteError, ShapeError, UnboundLeafError,
)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_matmul_of_ones():
    graph = ComputeGraph(lambda p: {"out": T.matmul(p["a"], p["b"])},
                         [Leaf("a", trainable=False), Leaf("b", trainable=False)])
    out = evaluate(graph, {"a": np.ones((2, 3)), "b": np.ones((3, 1))})["out"]
    np.testing.assert_array_equal(out, np.full((2, 1), 3.0))


def test_softmax_of_zeros_is_uniform():
    out = T.softmax(T.constant(np.zeros(3))).value
    np.testing.assert_allclose(out, np.full(3, 1.0 / 3.0), atol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    out = T.softmax(T.constant(rng.normal(scale=20.0, size=(50, 7))), axis=-1).value
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


def test_stop_gradient_forwards_value():
    x = T.constant(np.array([1.5, -2.0]))
    np.testing.assert_array_equal(T.stop_gradient(x).value, [1.5, -2.0])


def test_unbound_leaf_raises():
    graph = ComputeGraph(lambda p: {"out": p["x"].sum()}, [Leaf("x")], name="toy")
    with pytest.raises(UnboundLeafError, match="'x'"):
        evaluate(graph, {})


def test_shape_mismatch_names_the_node():
    with pytest.raises(ShapeError, match="node 'matmul#"):
        T.matmul(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 3))))


def test_declared_leaf_shape_is_checked():
    graph = ComputeGraph(lambda p: {"out": p["x"].sum()}, [Leaf("x", shape=(3,))])
    with pytest.raises(ShapeError, match="leaf 'x'"):
        evaluate(graph, {"x": np.ones(4)})


def test_only_leading_dimensions_broadcast():
    a = T.constant(np.ones((4, 3)))
    assert (a + np.ones(3)).shape == (4, 3)
    assert (a * 2.0).shape == (4, 3)
    with pytest.raises(ShapeError):
        a + np.ones((4, 1))
    assert (a + T.broadcast_to(T.constant(np.ones((4, 1))), (4, 3))).shape == (4, 3)


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        T.log(T.constant(np.array([0.0])))


def test_values_are_read_only():
    node = T.constant(np.ones(3)) + 1.0
    with pytest.raises(ValueError):
        node.value[0] = 5.0


def test_evaluation_is_deterministic(rng):
    w = rng.normal(size=(5, 4))
    x = rng.normal(size=(3, 5))
    graph = ComputeGraph(lambda p: {"out": T.softmax(T.tanh(p["x"] @ p["w"]))},
                         [Leaf("x", trainable=False), Leaf("w")])
    first = evaluate(graph, {"x": x, "w": w})["out"]
    second = evaluate(graph, {"x": x, "w": w})["out"]
    assert first.tobytes() == second.tobytes()


def test_unknown_output_name():
    graph = ComputeGraph(lambda p: {"out": p["x"].sum()}, [Leaf("x")])
    with pytest.raises(KeyError):
        evaluate(graph, {"x": np.ones(2)}, outputs=["missing"])


# ---------------------------------------------------------------------------
# gradient
# ---------------------------------------------------------------------------

def test_gradient_of_sum_of_squares():
    graph = ComputeGraph(lambda p: {"loss": T.square(p["x"]).sum()}, [Leaf("x")])
    grads = gradient(graph, "loss", {"x": np.array([1.0, 2.0, 3.0])})
    np.testing.assert_allclose(grads["x"], [2.0, 4.0, 6.0])


def test_stop_gradient_kills_one_path():
    graph = ComputeGraph(lambda p: {"loss": (T.stop_gradient(p["x"]) * p["x"]).sum()}, [Leaf("x")])
    grads = gradient(graph, "loss", {"x": np.array([2.0])})
    np.testing.assert_allclose(grads["x"], [2.0])


def test_stop_gradient_does_not_change_forward(rng):
    x = rng.normal(size=4)
    with_sg = ComputeGraph(lambda p: {"y": T.square(T.stop_gradient(p["x"])).sum()}, [Leaf("x")])
    plain = ComputeGraph(lambda p: {"y": T.square(p["x"]).sum()}, [Leaf("x")])
    assert evaluate(with_sg, {"x": x})["y"] == evaluate(plain, {"x": x})["y"]
    np.testing.assert_array_equal(gradient(with_sg, "y", {"x": x})["x"], np.zeros(4))


def test_non_scalar_loss_rejected():
    graph = ComputeGraph(lambda p: {"y": p["x"] * 2.0}, [Leaf("x")])
    with pytest.raises(ShapeError, match="scalar"):
        gradient(graph, "y", {"x": np.ones(3)})


def test_unused_parameter_gets_zero_gradient():
    graph = ComputeGraph(lambda p: {"loss": p["x"].sum()}, [Leaf("x"), Leaf("unused")])
    grads = gradient(graph, "loss", {"x": np.ones(2), "unused": np.ones((2, 2))})
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def _three_layer(p):
    h = T.tanh(p["x"] @ p["w1"] + p["b1"])
    h = T.sigmoid(h @ p["w2"] + p["b2"])
    out = h @ p["w3"]
    return {"loss": T.log_softmax(out, axis=-1).sum() * -0.1 + T.square(out).mean()}


def test_three_layer_network_matches_finite_differences(rng):
    leaves = [Leaf("x", trainable=False), Leaf("w1"), Leaf("b1"), Leaf("w2"), Leaf("b2"), Leaf("w3")]
    bindings = {
        "x": rng.normal(size=(4, 5)),
        "w1": rng.normal(scale=0.5, size=(5, 6)),
        "b1": rng.normal(scale=0.1, size=6),
        "w2": rng.normal(scale=0.5, size=(6, 4)),
        "b2": rng.normal(scale=0.1, size=4),
        "w3": rng.normal(scale=0.5, size=(4, 3)),
    }
    errors = check_gradients(ComputeGraph(_three_layer, leaves), "loss", bindings)
    assert max(errors.values()) < 1e-4


def test_shape_ops_match_finite_differences(rng):
    def build(p):
        x = p["x"]
        y = T.concatenate([T.reshape(x, (3, 4)), T.transpose(T.reshape(x, (4, 3)), (1, 0))], axis=1)
        z = T.stack([y[0], y[2]], axis=0)
        g = T.take(y, np.array([2, 0, 2]), axis=0)
        picked = T.pick(T.reshape(x, (3, 2, 2)), np.array([1, 0, 1]))
        return {"loss": T.l2norm(z, axis=-1).sum() + T.exp(g * 0.1).mean() + T.square(picked).sum()}

    errors = check_gradients(ComputeGraph(build, [Leaf("x")]), "loss", {"x": rng.normal(size=12)})
    assert errors["x"] < 1e-4


def test_elementwise_map_uses_given_derivative(rng):
    def build(p):
        return {"loss": T.elementwise(p["x"], np.sin, np.cos, op="sin").sum()}

    x = rng.normal(size=(3, 2))
    graph = ComputeGraph(build, [Leaf("x")])
    np.testing.assert_allclose(evaluate(graph, {"x": x})["loss"], np.sin(x).sum())
    np.testing.assert_allclose(gradient(graph, "loss", {"x": x})["x"], np.cos(x))
    assert check_gradients(graph, "loss", {"x": x})["x"] < 1e-4


def test_broadcast_to_gradient_sums_over_expanded_axes(rng):
    graph = ComputeGraph(lambda p: {"loss": T.square(T.broadcast_to(p["x"], (3, 2, 4))).sum()}, [Leaf("x")])
    x = rng.normal(size=(2, 1))
    grads = gradient(graph, "loss", {"x": x})
    np.testing.assert_allclose(grads["x"], 2.0 * x * 12)


def test_l2norm_has_zero_subgradient_at_origin():
    graph = ComputeGraph(lambda p: {"loss": T.l2norm(p["x"]).sum()}, [Leaf("x")])
    np.testing.assert_array_equal(gradient(graph, "loss", {"x": np.zeros((2, 3))})["x"], np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# Adam, schedule, clipping
# ---------------------------------------------------------------------------

def test_zero_gradient_leaves_parameters_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(step=3, m={"w": np.array([0.1, 0.1])}, v={"w": np.array([0.01, 0.01])})
    new, new_state = adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params))
    np.testing.assert_array_equal(new["w"], params["w"])
    _, decayed = adam_step(params, {"w": np.zeros(2)}, state)
    assert np.all(np.abs(decayed.m["w"]) < np.abs(state.m["w"]))
    assert np.all(decayed.v["w"] < state.v["w"])
    assert new_state.step == 1


def test_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, 1.0])}
    grads = {"w": np.array([3.0, -0.5])}
    new, _ = adam_step(params, grads, AdamState.zeros_like(params), lr=1e-3)
    np.testing.assert_allclose(new["w"], [1.0 - 1e-3, 1.0 + 1e-3], rtol=1e-6)


def test_adam_minimises_a_quadratic():
    params = {"w": np.array([1.0])}
    state = AdamState.zeros_like(params)
    for _ in range(500):
        params, state = adam_step(params, {"w": 2.0 * params["w"]}, state, lr=1e-2)
    assert abs(params["w"][0]) < 1e-2


def test_non_finite_gradient_names_parameter():
    params = {"enc.weight": np.ones(2)}
    with pytest.raises(NonFiniteError, match="enc.weight"):
        adam_step(params, {"enc.weight": np.array([np.nan, 0.0])}, AdamState.zeros_like(params))


def test_moment_shape_mismatch():
    params = {"w": np.ones(3)}
    state = AdamState(m={"w": np.zeros(2)}, v={"w": np.zeros(2)})
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.ones(3)}, state)


def test_learning_rate_schedule():
    assert learning_rate(0) == pytest.approx(1e-4)
    assert learning_rate(9) == pytest.approx(1e-4)
    assert learning_rate(10) == pytest.approx(0.98e-4)
    assert learning_rate(25) == pytest.approx(1e-4 * 0.98 ** 2)


def test_clip_grad_norm_scales_jointly():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
    untouched, _ = clip_grad_norm(grads, 10.0)
    np.testing.assert_array_equal(untouched["a"], grads["a"])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_is_lossless_and_sorted(tmp_path, rng):
    params = {"b.bias": rng.normal(size=3), "a.weight": rng.normal(size=(2, 3)), "scalar": np.array(1.5)}
    path = save_checkpoint(params, tmp_path / "model.ckpt")
    loaded = load_checkpoint(path)
    assert list(loaded) == sorted(params)
    for k, v in params.items():
        assert loaded[k].shape == v.shape
        np.testing.assert_array_equal(loaded[k], v)
    assert encode_checkpoint(params) == encode_checkpoint(dict(reversed(list(params.items()))))
    assert path.read_bytes()[:4] == b"STCN"


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_checkpoint(tmp_path / "absent.ckpt")
    with pytest.raises(CheckpointFormatError, match="magic"):
        decode_checkpoint(b"NOPE\x01\x00\x00\x00")
    data = encode_checkpoint({"w": np.ones((4, 4))})
    with pytest.raises(CheckpointFormatError, match="truncated"):
        decode_checkpoint(data[:-8])


def test_subset_by_prefix():
    params = {"enc.a": np.ones(1), "dec.b": np.ones(1), "enc.c": np.ones(1)}
    assert sorted(subset(params, "enc.")) == ["enc.a", "enc.c"]
