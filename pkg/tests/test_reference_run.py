"""
Trained-model checks on the reference run: 64 clips, 2000 steps, default config.

Every cell of the ablation matrix (plus no_landmark) trains on one shared
dataset, so these take tens of CPU minutes and only run with ``-m slow``.
"""
import csv

import numpy as np
import pytest

from talk_core.graph import run_ablation
from talk_core.pipeline import LOSS_FILE, held_out_records, load_model, long_form_seams
from talk_core.settings import DEFAULT_ABLATION_MATRIX, load_config

pytestmark = pytest.mark.slow

REFERENCE_CELLS = DEFAULT_ABLATION_MATRIX + ("no_landmark",)
ABLATED_CELLS = [cell for cell in DEFAULT_ABLATION_MATRIX if cell != "full"]
SEAM_CLIPS = 4


@pytest.fixture(scope="module")
def reference_config():
    config = load_config()
    assert config.world.n_clips == 64 and config.train.steps == 2000
    return config


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory, reference_config):
    out_dir = tmp_path_factory.mktemp("reference")
    table = run_ablation(reference_config, out_dir, cells=REFERENCE_CELLS)
    assert [r.error for r in table.rows] == [None] * len(REFERENCE_CELLS)
    return out_dir, table


def test_reference_training_halves_the_loss(reference_run) -> None:
    out_dir, _ = reference_run
    with (out_dir / "full" / LOSS_FILE).open(newline="", encoding="utf-8") as handle:
        losses = np.array([float(row["loss"]) for row in csv.DictReader(handle)])
    assert len(losses) == 2000
    assert losses[-50:].mean() < 0.5 * losses[:50].mean()


def test_landmarks_drive_mouth_sync(reference_run) -> None:
    _, table = reference_run
    assert table.row("full").sync_corr >= 0.6
    assert table.row("no_landmark").sync_corr <= 0.3


def test_full_model_leads_every_ablation(reference_run) -> None:
    _, table = reference_run
    full = table.row("full")
    for cell in ABLATED_CELLS:
        row = table.row(cell)
        assert full.psnr >= row.psnr, cell
        assert full.sync_corr >= row.sync_corr, cell
    assert table.row("unified_attention").sync_corr == min(table.row(c).sync_corr for c in DEFAULT_ABLATION_MATRIX)
    assert table.row("no_contour").face_lmd > full.face_lmd


def test_fusion_smooths_segment_handoffs(reference_run, reference_config) -> None:
    out_dir, _ = reference_run
    assert reference_config.eval.long_frames == 48
    state = load_model(reference_config, out_dir / "full" / "checkpoint.mtkb")
    naive_config = reference_config.with_ablation(["no_fusion"])
    records = held_out_records(reference_config)[:SEAM_CLIPS]
    fused = [long_form_seams(reference_config, state, record) for record in records]
    naive = [long_form_seams(naive_config, state, record) for record in records]
    fused_seam = np.mean([m["seam_jump"] for m in fused])
    naive_seam = np.mean([m["seam_jump"] for m in naive])
    assert naive_seam > 0.0
    assert fused_seam <= 0.5 * naive_seam
    assert np.mean([m["flicker"] for m in fused]) <= np.mean([m["flicker"] for m in naive])
