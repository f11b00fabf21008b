import numpy as np
import pytest
from pydantic import ValidationError

from models import (
    ConditionSet,
    ControlConditions,
    UNetConfig,
    control_forward,
    count_params,
    denoise_forward,
    has_control,
    init_denoiser,
    init_model,
    inject,
    load_checkpoint,
    model_digest,
    model_param_count,
    motion_param_names,
    predict_noise,
    save_checkpoint,
    stream_weight_names,
    timestep_embedding,
)
from models.params import count
from numeric import AdamState, Tensor
from talk_core.errors import CheckpointError, ConfigurationError, DimensionError


def _latent(config: UNetConfig, rng: np.random.Generator, batch: int = 1) -> np.ndarray:
    shape = (batch, config.channels, config.frames, config.height, config.width)
    return rng.standard_normal(shape).astype(np.float32)


def _with(params, **arrays):
    updated = dict(params)
    for name, value in arrays.items():
        updated[name] = Tensor(value)
    return updated


def test_config_rejects_bad_geometry() -> None:
    with pytest.raises(ValidationError):
        UNetConfig(height=10, width=10, channel_mult=(1, 2, 2))
    with pytest.raises(ValidationError):
        UNetConfig(norm_groups=5)
    with pytest.raises(ValidationError):
        UNetConfig(frames=65, max_frames=64)
    with pytest.raises(ValidationError):
        UNetConfig(unified_attention=True, id_dim=64, text_dim=32)


def test_config_rejects_odd_timestep_embedding_width() -> None:
    # level widths 6 and 12 are even, only the embedding width is odd
    with pytest.raises(ValidationError):
        UNetConfig(base_channels=3, channel_mult=(2, 4), norm_groups=2)
    assert UNetConfig(base_channels=4, channel_mult=(2, 4), norm_groups=2).temb_dim == 16


def test_timestep_embedding_layout_and_range() -> None:
    emb = timestep_embedding(0, 8).data
    assert np.allclose(emb[0::2], 0.0)
    assert np.allclose(emb[1::2], 1.0)
    with pytest.raises(ConfigurationError):
        timestep_embedding(1000, 8, num_steps=1000)
    with pytest.raises(ConfigurationError):
        timestep_embedding(-1, 8)


def test_init_is_deterministic_and_counted(tiny_config: UNetConfig) -> None:
    a = init_model(tiny_config, seed=3)
    b = init_model(tiny_config, seed=3)
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert count(a) == model_param_count(tiny_config)
    assert count(init_denoiser(tiny_config, 3)) == count_params(tiny_config)
    assert has_control(a)


def test_fresh_model_has_zero_motion_outputs_and_zero_convs(tiny_params) -> None:
    motion_out = [n for n in motion_param_names(tiny_params) if ".motion.out." in n]
    assert motion_out
    assert all(not tiny_params[n].data.any() for n in motion_out)
    zero_convs = [n for n in tiny_params if n.startswith(("control.zero", "control.hint"))]
    assert zero_convs
    assert all(not tiny_params[n].data.any() for n in zero_convs)


def test_control_clones_the_denoiser_encoder(tiny_params) -> None:
    assert np.array_equal(tiny_params["control.conv_in.weight"].data, tiny_params["unet.conv_in.weight"].data)
    assert np.array_equal(tiny_params["control.down0.res.conv1.weight"].data, tiny_params["unet.down0.res.conv1.weight"].data)


def test_stream_weights_start_equal_at_one(tiny_params) -> None:
    names = stream_weight_names(tiny_params)
    assert len(names) == 4
    assert all(tiny_params[n].data.tolist() == [1.0] for n in names)


def test_denoiser_output_shape(tiny_config, tiny_params, tiny_conds, rng) -> None:
    z = _latent(tiny_config, rng)
    out = denoise_forward(z, 10, tiny_conds, tiny_params, tiny_config, num_steps=100)
    assert out.shape == z.shape
    assert np.all(np.isfinite(out.data))


def test_denoiser_rejects_wrong_inputs(tiny_config, tiny_params, tiny_conds, rng) -> None:
    z = _latent(tiny_config, rng)
    with pytest.raises(DimensionError):
        denoise_forward(z[:, :, :, :4, :4], 1, tiny_conds, tiny_params, tiny_config)
    with pytest.raises(ConfigurationError):
        denoise_forward(z, 100, tiny_conds, tiny_params, tiny_config, num_steps=100)
    short_text = ConditionSet(tiny_conds.identity, np.array([[1, 2]]))
    with pytest.raises(DimensionError):
        denoise_forward(z, 1, short_text, tiny_params, tiny_config)


def test_fresh_control_branch_leaves_denoiser_unchanged(tiny_config, tiny_params, tiny_conds, tiny_control, rng) -> None:
    z = _latent(tiny_config, rng)
    base = denoise_forward(z, 7, tiny_conds, tiny_params, tiny_config)
    controlled = predict_noise(z, 7, tiny_conds, tiny_control, tiny_params, tiny_config)
    assert np.array_equal(base.data, controlled.data)


def test_control_residuals_match_skip_shapes(tiny_config, tiny_params, tiny_control, rng) -> None:
    residuals = control_forward(_latent(tiny_config, rng), 5, tiny_control, tiny_params, tiny_config)
    assert len(residuals) == tiny_config.levels + 1
    assert residuals[0].shape == (tiny_config.frames, 8, 8, 8)
    assert residuals[1].shape == (tiny_config.frames, 16, 4, 4)
    assert residuals[2].shape == (tiny_config.frames, 16, 4, 4)


def _trained_zero_convs(params, rng):
    arrays = {}
    for name, tensor in params.items():
        if name.startswith(("control.zero", "control.hint")):
            arrays[name] = rng.standard_normal(tensor.shape).astype(np.float32) * 0.1
    return _with(params, **arrays)


def test_contour_ignored_when_its_weight_is_zero(tiny_config, tiny_params, tiny_control, rng) -> None:
    params = _trained_zero_convs(tiny_params, rng)
    params = _with(params, **{n: np.zeros(1, dtype=np.float32) for n in stream_weight_names(params) if n.endswith(".w2")})
    z = _latent(tiny_config, rng)
    flipped = ControlConditions(tiny_control.landmark_heatmaps, 1.0 - tiny_control.contour_map)
    a = control_forward(z, 3, tiny_control, params, tiny_config)
    b = control_forward(z, 3, flipped, params, tiny_config)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))


def test_contour_matters_when_its_weight_is_nonzero(tiny_config, tiny_params, tiny_control, rng) -> None:
    params = _trained_zero_convs(tiny_params, rng)
    z = _latent(tiny_config, rng)
    flipped = ControlConditions(tiny_control.landmark_heatmaps, 1.0 - tiny_control.contour_map)
    a = control_forward(z, 3, tiny_control, params, tiny_config)
    b = control_forward(z, 3, flipped, params, tiny_config)
    assert any(not np.allclose(x.data, y.data) for x, y in zip(a, b))


def test_unified_control_mixes_both_maps_through_one_projection(tiny_config, tiny_params, tiny_control, rng) -> None:
    unified = UNetConfig.model_validate({**tiny_config.model_dump(), "unified_attention": True})
    shapes = {n: t.shape for n, t in init_model(unified, 0).items()}
    control_names = [n for n in shapes if n.startswith("control.")]
    assert control_names
    assert not any(n.endswith((".w1", ".w2", ".wk1", ".wv1")) for n in control_names)
    assert all(tiny_params[n].shape == shape for n, shape in shapes.items())

    params = _trained_zero_convs(tiny_params, rng)
    unified_params = {n: params[n] for n in shapes}
    assert stream_weight_names(unified_params) == []
    z = _latent(tiny_config, rng)
    full = control_forward(z, 3, tiny_control, params, tiny_config)
    mixed = control_forward(z, 3, tiny_control, unified_params, unified)
    assert [r.shape for r in mixed] == [r.shape for r in full]
    assert any(not np.allclose(x.data, y.data) for x, y in zip(full, mixed))

    flipped = ControlConditions(tiny_control.landmark_heatmaps, 1.0 - tiny_control.contour_map)
    other = control_forward(z, 3, flipped, unified_params, unified)
    assert any(not np.allclose(x.data, y.data) for x, y in zip(mixed, other))


def test_control_conditions_validation(tiny_config) -> None:
    h = tiny_config.height
    with pytest.raises(DimensionError):
        ControlConditions(np.zeros((1, 2, 2, h, h)), np.zeros((1, 1, h, h)))
    with pytest.raises(ConfigurationError):
        ControlConditions(np.full((1, 2, 1, h, h), 2.0), np.zeros((1, 1, h, h)))
    with pytest.raises(ConfigurationError):
        ControlConditions.from_frames(np.zeros((2, 1, h, h)), np.stack([np.zeros((1, h, h)), np.ones((1, h, h))]))


def test_control_frame_count_must_match(tiny_config, tiny_params, tiny_control, rng) -> None:
    z = rng.standard_normal((1, 3, 3, tiny_config.height, tiny_config.width))
    with pytest.raises(DimensionError):
        control_forward(z, 1, tiny_control, tiny_params, tiny_config)


def test_inject_adds_levelwise_and_checks_shapes() -> None:
    base = [Tensor(np.ones((1, 2, 2, 2))), Tensor(np.zeros((1, 4, 1, 1)))]
    residuals = [Tensor(np.full((1, 2, 2, 2), 0.5)), Tensor(np.ones((1, 4, 1, 1)))]
    fused = inject(base, residuals)
    assert np.allclose(fused[0].data, 1.5)
    assert np.allclose(fused[1].data, 1.0)
    with pytest.raises(DimensionError):
        inject(base, residuals[:1])
    with pytest.raises(DimensionError):
        inject(base, [residuals[1], residuals[0]])


def test_checkpoint_round_trip(tmp_path, tiny_config, tiny_params) -> None:
    adam = AdamState(step=4, m={"unet.text.table": np.ones((16, 8), np.float32)},
                     v={"unet.text.table": np.full((16, 8), 2.0, np.float32)})
    path = save_checkpoint(tmp_path / "ck.mtkb", tiny_config, tiny_params, "abc", seed=9, adam=adam)
    loaded = load_checkpoint(path, expected_model_hash=model_digest(tiny_config), expected_config_hash="abc")
    assert loaded.step == 4
    assert loaded.seed == 9
    assert loaded.config == tiny_config
    assert all(np.array_equal(loaded.params[k].data, tiny_params[k].data) for k in tiny_params)
    assert np.array_equal(loaded.adam.v["unet.text.table"], adam.v["unet.text.table"])


def test_checkpoint_mismatch_and_missing(tmp_path, tiny_config, tiny_params) -> None:
    path = save_checkpoint(tmp_path / "ck.mtkb", tiny_config, tiny_params, "abc", seed=0)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_model_hash="0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_config_hash="other")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.mtkb")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def _conv_count(cout: int, cin: int, kernel: int) -> int:
    return cout * cin * kernel * kernel + cout


def _stage_count(cin: int, cout: int, config: UNetConfig) -> int:
    res = 2 * cin + _conv_count(cout, cin, 3) + config.temb_dim * cout + cout + 2 * cout + _conv_count(cout, cout, 3)
    if cin != cout:
        res += _conv_count(cout, cin, 1)
    xattn = 2 * cout + 2 * cout * config.attn_dim + sum(2 * d * config.attn_dim for d in config.reference_cond_dims)
    motion = 4 * cout * cout + cout * cout + cout
    return res + xattn + motion


def _hand_count(config: UNetConfig) -> int:
    chs = config.level_channels
    base, temb = config.base_channels, config.temb_dim
    total = base * temb + temb + temb * temb + temb
    total += config.vocab_size * config.text_dim
    total += _conv_count(chs[0], config.channels, 3)
    cin = chs[0]
    for level, ch in enumerate(chs):
        total += _stage_count(cin, ch, config)
        if level < config.levels - 1:
            total += _conv_count(ch, ch, 3)
        cin = ch
    total += _stage_count(cin, cin, config)
    for level in reversed(range(config.levels)):
        total += _stage_count(cin + chs[level], chs[level], config)
        if level > 0:
            total += _conv_count(chs[level], chs[level], 3)
        cin = chs[level]
    return total + 2 * cin + _conv_count(config.channels, cin, 3)


@pytest.mark.parametrize(
    "overrides",
    [{}, {"channel_mult": (1, 2, 2)}, {"unified_attention": True}, {"base_channels": 16, "attn_dim": 32}],
)
def test_count_params_matches_hand_formula(overrides) -> None:
    config = UNetConfig(**overrides)
    assert count_params(config) == _hand_count(config)
    assert count_params(config) == count_params(UNetConfig(**overrides))


def test_doubling_base_channels_more_than_doubles_count(tiny_config) -> None:
    doubled = UNetConfig.model_validate({**tiny_config.model_dump(), "base_channels": 16})
    assert count_params(doubled) > 2 * count_params(tiny_config)
    assert count_params(UNetConfig(base_channels=64)) > 2 * count_params(UNetConfig())


def test_fresh_motion_blocks_make_frames_permutation_equivariant(tiny_config, tiny_params, tiny_conds, rng) -> None:
    z = _latent(tiny_config, rng)
    order = [1, 0]
    out = predict_noise(z, 9, tiny_conds, None, tiny_params, tiny_config).data
    swapped = predict_noise(z[:, :, order], 9, tiny_conds, None, tiny_params, tiny_config).data
    assert np.allclose(swapped, out[:, :, order], atol=1e-5)


def test_trained_motion_blocks_break_frame_permutation(tiny_config, tiny_params, tiny_conds, rng) -> None:
    trained = _with(
        tiny_params,
        **{
            n: rng.standard_normal(tiny_params[n].shape).astype(np.float32)
            for n in motion_param_names(tiny_params)
            if n.endswith(".motion.out.weight")
        },
    )
    z = _latent(tiny_config, rng)
    order = [1, 0]
    out = predict_noise(z, 9, tiny_conds, None, trained, tiny_config).data
    swapped = predict_noise(z[:, :, order], 9, tiny_conds, None, trained, tiny_config).data
    assert not np.allclose(swapped, out[:, :, order], atol=1e-4)
