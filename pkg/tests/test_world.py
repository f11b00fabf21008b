import numpy as np
import pytest

from talk_core.errors import ConfigurationError, DimensionError
from tools import FrameExporter, SyntheticWorld, load_png
from tools.world_tool import (
    PALETTE,
    VOCABULARY,
    BlobIdentity,
    ClipRecord,
    build_dataset,
    disc_coverage,
    encode_identity,
    extract_contour,
    keypoint_track,
    landmark_heatmap,
    luminance,
    make_drive_signal,
    mean_color_embedding,
    mouth_coverage,
    render_clip,
    render_frame,
    token_ids,
)


def test_drive_signal_is_bounded_smooth_and_seeded() -> None:
    signal = make_drive_signal(7, 64)
    values = signal.as_array()
    assert signal.length == 64
    assert values.min() >= 0.0 and values.max() <= 1.0
    assert np.abs(np.diff(values)).max() <= 0.3 + 1e-12
    assert make_drive_signal(7, 64) == signal
    assert make_drive_signal(8, 64) != signal
    with pytest.raises(ConfigurationError):
        make_drive_signal(0, 0)


def test_render_frame_draws_blob_on_black() -> None:
    identity = BlobIdentity.from_tokens(["blue", "large"])
    frame = render_frame(identity, 0.5)
    assert frame.shape == (3, 16, 16)
    assert frame.dtype == np.float32
    assert np.array_equal(frame[:, 0, 0], [0.0, 0.0, 0.0])
    assert np.allclose(frame[:, 3, 7], PALETTE["blue"])


def test_render_frame_validates_inputs() -> None:
    identity = BlobIdentity.from_tokens(["red"])
    with pytest.raises(ConfigurationError):
        render_frame(identity, 1.5)
    off_frame = BlobIdentity.from_tokens(["red", "large"], center=(2.0, 7.5))
    with pytest.raises(ConfigurationError):
        render_frame(off_frame, 0.5)


def test_open_mouth_is_darker_than_closed() -> None:
    identity = BlobIdentity.from_tokens(["yellow", "small"])
    closed = render_frame(identity, 0.0)
    opened = render_frame(identity, 1.0)
    assert opened.sum() < closed.sum()
    assert not np.array_equal(closed, opened)


def test_render_clip_is_a_pure_function() -> None:
    identity = BlobIdentity.from_tokens(["green", "small", "smiling"])
    signal = make_drive_signal(3, 6)
    a, b = render_clip(identity, signal), render_clip(identity, signal)
    assert a.frames.shape == (3, 6, 16, 16)
    assert np.array_equal(a.frames, b.frames)
    assert a.attribute_tokens == ["green", "small", "smiling"]


def test_from_tokens_defaults() -> None:
    identity = BlobIdentity.from_tokens([])
    assert (identity.color_name, identity.size_name, identity.expression) == ("red", "small", "neutral")
    assert BlobIdentity.from_dict(identity.to_dict()) == identity


def test_landmark_heatmap_peaks_at_mouth_keypoint() -> None:
    identity = BlobIdentity.from_tokens(["red", "small"])
    heat = landmark_heatmap(0.8, identity)
    assert heat.shape == (1, 16, 16)
    assert heat.max() <= 0.8
    row, col = np.unravel_index(np.argmax(heat[0]), heat[0].shape)
    mx, my = identity.mouth_keypoint
    assert abs(col + 0.5 - mx) <= 0.5 and abs(row + 0.5 - my) <= 0.5
    assert not landmark_heatmap(0.0, identity).any()
    with pytest.raises(ConfigurationError):
        landmark_heatmap(1.2, identity)


def test_contour_is_binary_and_traces_the_blob() -> None:
    frame = render_frame(BlobIdentity.from_tokens(["purple", "small"]), 0.3)
    contour = extract_contour(frame)
    assert contour.shape == (1, 16, 16)
    assert set(np.unique(contour)) <= {0.0, 1.0}
    assert contour.any()
    assert not extract_contour(np.zeros((3, 16, 16))).any()
    with pytest.raises(DimensionError):
        extract_contour(np.zeros((16, 16)))


def test_contour_of_a_step_edge_and_a_flat_frame() -> None:
    frame = np.zeros((3, 16, 16))
    frame[:, :, 8:] = 1.0
    contour = extract_contour(frame)[0]
    assert contour[:, 8].all()
    contour[:, 8] = 0.0
    assert not contour.any()
    assert not extract_contour(np.full((3, 16, 16), 0.6)).any()


@pytest.mark.parametrize("radius", [4.0, 5.0, 6.0, 7.0])
@pytest.mark.parametrize("color", ["red", "blue", "yellow"])
@pytest.mark.parametrize("expression", ["neutral", "smiling"])
def test_contour_is_a_one_pixel_outline(radius, color, expression) -> None:
    identity = BlobIdentity(PALETTE[color], radius, (7.5, 7.5), 0.35 * radius, color, "", expression)
    contour = extract_contour(render_frame(identity, 0.5))[0]
    circumference = 2.0 * np.pi * radius
    assert abs(contour.sum() - circumference) <= 0.2 * circumference
    # the outline hugs the rim, so eyes and mouth leave the centre clear
    assert not contour[7:9, 7:9].any()


def test_identity_encoder_is_frozen_and_discriminative() -> None:
    red = render_frame(BlobIdentity.from_tokens(["red"]), 0.0)
    blue = render_frame(BlobIdentity.from_tokens(["blue"]), 0.0)
    assert np.array_equal(encode_identity(red), encode_identity(red))
    assert encode_identity(red, dim=8).shape == (8,)
    assert not np.allclose(encode_identity(red), encode_identity(blue))
    with pytest.raises(DimensionError):
        encode_identity(red[:, :8, :8])


def test_mean_color_embedding_tiles_the_mean() -> None:
    frame = np.zeros((3, 4, 4))
    frame[0] = 1.0
    assert mean_color_embedding(frame, dim=5).tolist() == [1.0, 0.0, 0.0, 1.0, 0.0]


def test_token_ids_pad_and_validate() -> None:
    assert token_ids(["red", "small"]).tolist() == [1, 7, 0, 0]
    assert len(VOCABULARY) == 11
    with pytest.raises(ConfigurationError):
        token_ids(["magenta"])
    with pytest.raises(ConfigurationError):
        token_ids(["red", "small", "smiling", "neutral", "blue"])


def test_dataset_clips_are_independent_of_dataset_size() -> None:
    world = SyntheticWorld()
    small = world.build_dataset(2, 3, seed=4)
    large = build_dataset(4, 3, seed=4)
    assert np.array_equal(small[1].clip.frames, large[1].clip.frames)
    assert np.array_equal(world.clip_at(4, 3, 3).clip.frames, large[3].clip.frames)
    assert not np.array_equal(large[0].clip.frames, large[1].clip.frames)
    with pytest.raises(ConfigurationError):
        world.build_dataset(0, 3, seed=4)


def test_clip_record_conditioning_and_round_trip(tmp_path) -> None:
    record = SyntheticWorld().clip_at(1, 0, 4)
    assert record.heatmaps.shape == (4, 1, 16, 16)
    assert record.contour.shape == (1, 16, 16)
    assert record.identity_embedding.shape == (64,)
    record.save(tmp_path / "clip.mtkb")
    loaded = ClipRecord.load(tmp_path / "clip.mtkb")
    assert np.array_equal(loaded.clip.frames, record.clip.frames)
    assert np.array_equal(loaded.heatmaps, record.heatmaps)
    assert loaded.clip.identity == record.clip.identity
    assert loaded.clip.signal == record.clip.signal
    assert loaded.text_ids.tolist() == record.text_ids.tolist()


def test_keypoint_track_repeats_static_keypoints() -> None:
    identity = BlobIdentity.from_tokens(["red", "small", "smiling"])
    track = keypoint_track(identity, 5)
    assert track["mouth"].shape == (5, 2)
    assert np.allclose(track["face"], [7.5, 7.5])
    assert track["mouth"][0, 1] < identity.mouth_center[1]


def test_exporter_writes_pngs_and_gif(tmp_path) -> None:
    clip = render_clip(BlobIdentity.from_tokens(["cyan"]), make_drive_signal(0, 3)).frames
    exporter = FrameExporter(tmp_path / "frames")
    result = exporter.save_png_sequence(clip)
    assert result["error"] is None
    assert result["total_frames"] == 3
    assert result["files"][0].endswith("frame_0000.png")
    reloaded = load_png(result["files"][1])
    assert reloaded.shape == (3, 16, 16)
    assert np.abs(reloaded - clip[:, 1]).max() <= 0.5 / 255 + 1e-6
    gif = exporter.save_gif(clip)
    assert gif["error"] is None
    assert (tmp_path / "frames" / "clip.gif").is_file()


def test_exporter_reports_bad_clip_shape(tmp_path) -> None:
    result = FrameExporter(tmp_path).save_png_sequence(np.zeros((3, 16, 16)))
    assert result["error"] is not None
    assert result["files"] == []


@pytest.mark.parametrize("tokens", [["red", "small"], ["cyan", "large", "smiling"], ["purple", "large"]])
def test_mouth_pixels_darken_monotonically_with_aperture(tokens) -> None:
    identity = BlobIdentity.from_tokens(tokens)
    inside = disc_coverage(identity.center, identity.radius) >= 1.0
    apertures = np.linspace(0.0, 1.0, 11)
    coverages = [mouth_coverage(identity, a) for a in apertures]
    grays = [luminance(render_frame(identity, a))[inside] for a in apertures]
    for (c0, c1), (g0, g1) in zip(zip(coverages, coverages[1:]), zip(grays, grays[1:])):
        assert np.all(c1 >= c0)
        assert np.all(g1 <= g0 + 1e-6)
    assert coverages[0].sum() == 0.0
    assert coverages[-1].sum() > coverages[5].sum() > 0.0


def test_drive_signals_are_smooth_for_every_seed() -> None:
    signals = [make_drive_signal(seed, 128) for seed in range(50)]
    for signal in signals:
        values = signal.as_array()
        assert values.min() >= 0.0 and values.max() <= 1.0
        assert np.abs(np.diff(values)).max() <= 0.3 + 1e-12
    assert len({s.values for s in signals}) == len(signals)
    assert make_drive_signal(17, 128).values[:32] == make_drive_signal(17, 32).values
