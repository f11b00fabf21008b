import numpy as np
import pytest

from numeric import (
    AdamState,
    GradTape,
    Tensor,
    adam_step,
    avg_pool2d,
    concat,
    conv2d,
    debug_mode,
    group_norm,
    layer_norm,
    linear,
    matmul,
    mse_loss,
    mul,
    precision,
    reshape,
    silu,
    softmax_lastaxis,
    take_rows,
    upsample_nearest2d,
)
from numeric import ops
from numeric.container import decode_tensor, encode_tensor, load_bundle, load_tensor, save_bundle, save_tensor
from numeric.gradcheck import check_gradients
from talk_core.errors import CheckpointError, DimensionError, NumericFailure

GRAD_TOL = 1e-3


def test_tensor_rejects_non_finite_input() -> None:
    with pytest.raises(NumericFailure):
        Tensor([1.0, float("nan")])


def test_tensor_rejects_zero_sized_and_high_rank_shapes() -> None:
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 0)))
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1, 1, 1)))


def test_tensor_is_read_only() -> None:
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_default_dtype_is_float32_and_precision_switches() -> None:
    assert Tensor([1.0]).data.dtype == np.float32
    with precision("float64"):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_debug_mode_flags_non_finite_op_output() -> None:
    big = Tensor(np.full((2,), 3e38, dtype=np.float32))
    with debug_mode(True):
        with pytest.raises(NumericFailure):
            ops.add(big, big)


def test_matmul_inner_mismatch_raises() -> None:
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_reshape_preserves_order_and_rejects_bad_size() -> None:
    x = Tensor(np.arange(6.0))
    assert np.array_equal(reshape(x, (2, 3)).data, np.arange(6.0).reshape(2, 3))
    with pytest.raises(DimensionError):
        reshape(x, (4, 2))


def test_gradient_through_shared_input_accumulates() -> None:
    x = Tensor([2.0, 3.0], requires_grad=True)
    with GradTape() as tape:
        y = mul(x, x).sum()
    grads = tape.gradient(y, {"x": x})
    assert np.allclose(grads["x"], [4.0, 6.0])


def test_unreachable_source_gets_zero_gradient() -> None:
    x = Tensor([1.0], requires_grad=True)
    unused = Tensor([[1.0, 2.0]], requires_grad=True)
    with GradTape() as tape:
        y = (x * 3.0).sum()
    grads = tape.gradient(y, {"x": x, "unused": unused})
    assert np.array_equal(grads["unused"], np.zeros((1, 2)))
    assert np.allclose(grads["x"], [3.0])


def test_tape_visits_each_record_once() -> None:
    x = Tensor(np.ones((3,)), requires_grad=True)
    with GradTape() as tape:
        y = silu(x * 2.0).sum()
    recorded = len(tape)
    tape.gradient(y, {"x": x})
    assert tape.visited == recorded


@pytest.mark.parametrize("name", ["matmul", "softmax", "linear_silu", "concat_take", "pool_upsample"])
def test_elementwise_and_matrix_op_gradients(name: str, rng: np.random.Generator) -> None:
    if name == "matmul":
        fn = lambda t: matmul(t["a"], t["b"])  # noqa: E731
        inputs = {"a": rng.standard_normal((2, 3, 4)), "b": rng.standard_normal((4, 5))}
    elif name == "softmax":
        fn = lambda t: softmax_lastaxis(t["x"])  # noqa: E731
        inputs = {"x": rng.standard_normal((3, 6))}
    elif name == "linear_silu":
        fn = lambda t: silu(linear(t["x"], t["w"], t["b"]))  # noqa: E731
        inputs = {"x": rng.standard_normal((4, 3)), "w": rng.standard_normal((3, 5)), "b": rng.standard_normal(5)}
    elif name == "concat_take":
        fn = lambda t: concat([take_rows(t["table"], [2, 0, 2]), t["x"]], axis=0)  # noqa: E731
        inputs = {"table": rng.standard_normal((4, 3)), "x": rng.standard_normal((2, 3))}
    else:
        fn = lambda t: upsample_nearest2d(avg_pool2d(t["x"], 2), 2)  # noqa: E731
        inputs = {"x": rng.standard_normal((1, 2, 4, 4))}
    result = check_gradients(fn, inputs)
    assert result.passed(GRAD_TOL), result.per_input


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradients(stride: int, padding: int, rng: np.random.Generator) -> None:
    inputs = {
        "x": rng.standard_normal((2, 3, 5, 5)),
        "w": rng.standard_normal((4, 3, 3, 3)),
        "b": rng.standard_normal(4),
    }
    result = check_gradients(lambda t: conv2d(t["x"], t["w"], t["b"], stride=stride, padding=padding), inputs)
    assert result.passed(GRAD_TOL), result.per_input


def test_norm_gradients(rng: np.random.Generator) -> None:
    gn = check_gradients(
        lambda t: group_norm(t["x"], 2, t["g"], t["b"]),
        {"x": rng.standard_normal((2, 4, 3, 3)), "g": rng.standard_normal(4), "b": rng.standard_normal(4)},
    )
    ln = check_gradients(
        lambda t: layer_norm(t["x"], t["g"], t["b"]),
        {"x": rng.standard_normal((3, 5)), "g": rng.standard_normal(5), "b": rng.standard_normal(5)},
    )
    assert gn.passed(GRAD_TOL), gn.per_input
    assert ln.passed(GRAD_TOL), ln.per_input


def test_mse_loss_gradient_and_sampled_audit(rng: np.random.Generator) -> None:
    result = check_gradients(
        lambda t: mse_loss(t["p"], t["q"]),
        {"p": rng.standard_normal((3, 4)), "q": rng.standard_normal((3, 4))},
        sample=6,
    )
    assert result.passed(GRAD_TOL)
    assert sum(np.count_nonzero(~np.isnan(v)) for v in result.numeric.values()) == 6


def test_conv2d_matches_direct_cross_correlation(rng: np.random.Generator) -> None:
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    w = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
    out = conv2d(x, w).data
    expected = np.array(
        [[np.sum(x[0, 0, i:i + 3, j:j + 3] * w[0, 0]) for j in range(2)] for i in range(2)]
    )
    assert np.allclose(out[0, 0], expected, atol=1e-5)


def test_conv2d_channel_mismatch_raises() -> None:
    with pytest.raises(DimensionError):
        conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)))


def test_adam_moves_against_gradient_and_only_named_params() -> None:
    params = {"a": Tensor([1.0, -1.0]), "frozen": Tensor([5.0])}
    updated, state = adam_step(params, {"a": np.array([2.0, -3.0])}, AdamState(), lr=0.1)
    assert state.step == 1
    # first bias-corrected step has magnitude lr in every coordinate
    assert np.allclose(updated["a"].data, [0.9, -0.9], atol=1e-6)
    assert updated["frozen"] is params["frozen"]


def test_adam_rejects_gradient_shape_mismatch() -> None:
    with pytest.raises(DimensionError):
        adam_step({"a": Tensor([1.0, 2.0])}, {"a": np.ones(3)}, AdamState(), lr=0.1)


def test_adam_settles_in_a_quadratic_bowl() -> None:
    curvature = np.array([0.5, 1.0, 4.0, 10.0])
    target = np.array([1.5, -2.0, 0.25, 3.0])
    params = {"x": Tensor(np.zeros(4))}
    state = AdamState()
    for _ in range(2000):
        grad = curvature * (params["x"].data - target)
        params, state = adam_step(params, {"x": grad}, state, lr=0.02)
    assert state.step == 2000
    assert np.allclose(params["x"].data, target, atol=0.05)


@pytest.mark.parametrize("scale", [1000.0, 1e4])
def test_softmax_is_stable_for_large_logits(scale: float) -> None:
    logits = np.array([[scale, 0.0, -scale], [scale, scale, 0.0], [-scale, -scale, -scale]])
    probs = softmax_lastaxis(logits).data
    assert np.all(np.isfinite(probs))
    assert np.allclose(probs.sum(axis=-1), 1.0)
    assert np.allclose(probs[0], [1.0, 0.0, 0.0])
    assert np.allclose(probs[1], [0.5, 0.5, 0.0])
    assert np.allclose(probs[2], 1.0 / 3.0)
    assert np.allclose(softmax_lastaxis(logits[:1] - scale).data, probs[:1])


def test_tensor_record_round_trip(tmp_path, rng: np.random.Generator) -> None:
    value = rng.standard_normal((2, 3, 4)).astype(np.float32)
    save_tensor(tmp_path / "x.mtk", value)
    assert np.array_equal(load_tensor(tmp_path / "x.mtk"), value)
    blob = encode_tensor(value)
    assert blob[:4] == b"MTK1"
    assert len(blob) == 4 + 4 + 3 * 4 + value.size * 4


def test_tensor_record_bad_magic_and_truncation() -> None:
    blob = encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(CheckpointError):
        decode_tensor(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        decode_tensor(blob[:-3])


def test_bundle_round_trip_and_trailing_bytes(tmp_path) -> None:
    path = tmp_path / "b.mtkb"
    save_bundle(path, {"kind": "test"}, {"w": np.ones((2, 2), dtype=np.float32), "b": np.zeros(3, dtype=np.float32)})
    header, tensors = load_bundle(path)
    assert header["kind"] == "test"
    assert header["tensors"] == ["w", "b"]
    assert np.array_equal(tensors["w"], np.ones((2, 2)))

    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        load_bundle(path)
