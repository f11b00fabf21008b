import numpy as np
import pytest

from talk_core.errors import DimensionError, EmptyRegionError, UndefinedCorrelationError
from tools import ClipEvaluator
from tools.metric_tool import (
    PSNR_CAP,
    attribute_compliance,
    color_distance,
    face_center,
    flicker,
    landmark_distance,
    measure_attributes,
    mouth_aperture,
    pearson,
    psnr,
    seam_jump,
    ssim,
    sync_corr,
)
from tools.world_tool import BlobIdentity, keypoint_track, make_drive_signal, render_clip, render_frame


@pytest.fixture
def identity() -> BlobIdentity:
    return BlobIdentity.from_tokens(["red", "small"])


@pytest.fixture
def talking_clip(identity):
    return render_clip(identity, make_drive_signal(3, 16))


def test_psnr_values() -> None:
    a = np.zeros((3, 2, 8, 8))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    with pytest.raises(DimensionError):
        psnr(a, a[:, :1])


def test_ssim_identity_and_window_limit(rng) -> None:
    a = rng.uniform(0, 1, size=(3, 2, 16, 16))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, rng.uniform(0, 1, size=a.shape)) < 0.5
    with pytest.raises(DimensionError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)), window=8)


def test_ssim_of_flat_tiles_has_closed_form() -> None:
    a = np.full((8, 8), 0.3)
    b = np.full((8, 8), 0.6)
    c1 = 1e-4
    expected = (2 * 0.3 * 0.6 + c1) / (0.3 ** 2 + 0.6 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected)


def test_ssim_of_an_inverted_image(rng) -> None:
    x = rng.uniform(0, 1, size=(8, 8))
    mu, var = x.mean(), x.var()
    c1, c2 = 1e-4, 9e-4
    expected = (2 * mu * (1 - mu) + c1) * (c2 - 2 * var) / ((mu ** 2 + (1 - mu) ** 2 + c1) * (2 * var + c2))
    assert ssim(x, 1.0 - x) == pytest.approx(expected)
    assert ssim(x, 1.0 - x) < 0.0


def test_psnr_and_ssim_are_symmetric(rng) -> None:
    for _ in range(10):
        a = rng.uniform(0, 1, size=(3, 2, 16, 16))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert psnr(a, b) == pytest.approx(psnr(b, a))
        assert ssim(a, b) == pytest.approx(ssim(b, a))


@pytest.mark.parametrize("aperture", [0.25, 0.5, 0.8, 1.0])
def test_mouth_aperture_recovers_rendered_opening(identity, aperture: float) -> None:
    assert mouth_aperture(render_frame(identity, aperture), identity) == pytest.approx(aperture, abs=0.05)


def test_mouth_aperture_with_smile() -> None:
    smiling = BlobIdentity.from_tokens(["green", "large", "smiling"])
    assert mouth_aperture(render_frame(smiling, 0.6), smiling) == pytest.approx(0.6, abs=0.05)


def test_pearson() -> None:
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1], [1, 2, 3])


def test_sync_corr_of_ground_truth_render(talking_clip, identity) -> None:
    assert sync_corr(talking_clip.frames, talking_clip.signal, identity) > 0.99
    with pytest.raises(DimensionError):
        sync_corr(talking_clip.frames[:, :2], talking_clip.signal.values[:2], identity)
    with pytest.raises(DimensionError):
        sync_corr(talking_clip.frames, talking_clip.signal.values[:5], identity)


def test_sync_corr_collapses_on_shuffled_signals(identity, rng) -> None:
    clip = render_clip(identity, make_drive_signal(11, 48))
    values = clip.signal.as_array()
    assert sync_corr(clip.frames, values, identity) > 0.99
    shuffled = [sync_corr(clip.frames, rng.permutation(values), identity) for _ in range(20)]
    assert abs(float(np.mean(shuffled))) < 0.2
    assert max(shuffled) < 0.9


def test_face_center_of_centred_blob(identity) -> None:
    x, y = face_center(render_frame(identity, 0.7), identity.color)
    assert x == pytest.approx(7.5, abs=0.1)
    assert y == pytest.approx(7.5, abs=0.1)


def test_landmark_distance_ground_truth_and_shift(talking_clip, identity) -> None:
    mouth_lmd, face_lmd = landmark_distance(talking_clip.frames, identity)
    assert mouth_lmd < 0.3
    assert face_lmd < 0.1
    shifted = keypoint_track(identity, 16)
    shifted["face"] = shifted["face"] + np.array([2.0, 0.0])
    _, shifted_face = landmark_distance(talking_clip.frames, identity, shifted)
    assert shifted_face == pytest.approx(2.0, abs=0.15)


def test_landmark_distance_on_black_clip(identity) -> None:
    with pytest.raises(EmptyRegionError):
        landmark_distance(np.zeros((3, 4, 16, 16)), identity)


def test_flicker_values(rng) -> None:
    still = np.repeat(rng.uniform(0, 1, size=(3, 1, 8, 8)), 5, axis=1)
    assert flicker(still) == 0.0
    blink = np.zeros((3, 4, 8, 8))
    blink[:, 1::2] = 1.0
    assert flicker(blink) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        flicker(still[:, :1])


def test_seam_jump_isolates_handoff_pairs() -> None:
    clip = np.zeros((3, 4, 8, 8))
    clip[:, 2:] = 1.0
    assert seam_jump(clip, [(1, 2)]) == pytest.approx(1.0)
    assert seam_jump(clip, [(0, 1)]) == pytest.approx(-0.5)
    assert seam_jump(clip, []) == 0.0


def test_color_distance_of_ground_truth(talking_clip, identity) -> None:
    assert color_distance(talking_clip.frames, identity) < 1e-4
    blue = BlobIdentity.from_tokens(["blue", "small"])
    assert color_distance(talking_clip.frames, blue) > 0.5


@pytest.mark.parametrize("tokens", [["blue", "large"], ["yellow", "small", "smiling"], ["cyan", "small"]])
def test_measure_attributes_of_rendered_blob(tokens) -> None:
    identity = BlobIdentity.from_tokens(tokens)
    measured = measure_attributes(render_frame(identity, 0.4))
    assert measured["color"] == identity.color_name
    assert measured["size"] == identity.size_name


def test_attribute_compliance(talking_clip) -> None:
    assert attribute_compliance(talking_clip.frames, ["red", "small"]) == 1.0
    assert attribute_compliance(talking_clip.frames, ["red"]) == 1.0
    assert attribute_compliance(talking_clip.frames, ["blue"]) == 0.0
    assert attribute_compliance(np.zeros((3, 2, 16, 16)), ["red"]) == 0.0


def test_evaluator_reports_every_metric(talking_clip, identity) -> None:
    result = ClipEvaluator().evaluate(
        talking_clip.frames, talking_clip.frames, identity, talking_clip.signal, ["red", "small"], [(7, 8)]
    )
    assert result["errors"] == {}
    assert result["psnr"] == PSNR_CAP
    assert result["ssim"] == pytest.approx(1.0)
    assert result["sync_corr"] > 0.99
    assert result["attribute_compliance"] == 1.0


def test_evaluator_records_failures_instead_of_raising(talking_clip, identity) -> None:
    black = np.zeros_like(talking_clip.frames)
    result = ClipEvaluator().evaluate(black, talking_clip.frames, identity, talking_clip.signal, ["red"])
    assert result["mouth_lmd"] is None and result["face_lmd"] is None
    assert "landmark_distance" in result["errors"]
    assert result["sync_corr"] is None
    assert result["flicker"] == 0.0
    assert result["psnr"] < PSNR_CAP
