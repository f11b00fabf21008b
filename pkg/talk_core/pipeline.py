"""
Command bodies: dataset generation, training, sampling, evaluation and the
manifest checks. Each writes its artifacts together with the config hash and
seed needed to regenerate them.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from diffusion import TrainingExample, Trainer, long_sample, plan_segments, sample_clip, to_latent
from models import Checkpoint, ConditionSet, ControlConditions, init_model, load_checkpoint, model_digest, save_checkpoint
from tools.export_tool import FrameExporter, load_png
from tools.metric_tool import ClipEvaluator, flicker, seam_jump
from tools.world_tool import (
    BlobIdentity,
    ClipRecord,
    SyntheticWorld,
    encode_identity,
    extract_contour,
    landmark_heatmaps,
    make_drive_signal,
    mean_color_embedding,
    render_frame,
    token_ids,
)

from .errors import CheckpointError, ConfigurationError, DimensionError
from .schemas.manifest import ClipEntry, DatasetManifest, FileEntry, RunManifest, file_digest
from .schemas.report import METRIC_COLUMNS, ClipMetrics, EvalReport
from .settings import RunConfig, build_config

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
RUN_MANIFEST_FILE = "run_manifest.json"
LOSS_FILE = "loss.csv"

PathLike = Union[str, Path]


# ======================= Conditioning =======================

def build_conditions(
    reference_frame: np.ndarray,
    tokens: Sequence[str],
    heatmaps: np.ndarray,
    contour: np.ndarray,
    config: RunConfig,
) -> Tuple[ConditionSet, ControlConditions]:
    """Identity/text conditions and control maps for one clip, with the config's ablations applied."""
    unet = config.effective_unet()
    flags = config.ablation
    if flags.no_face_encoder:
        identity = mean_color_embedding(reference_frame, unet.id_dim)
    else:
        identity = encode_identity(reference_frame, config.world.size, unet.id_dim)
    if flags.no_landmark:
        heatmaps = np.zeros_like(heatmaps)
    if flags.no_contour:
        contour = np.zeros_like(contour)
    conds = ConditionSet(identity[None], token_ids(tokens, unet.text_tokens)[None])
    return conds, ControlConditions(heatmaps, contour)


def record_conditions(record: ClipRecord, config: RunConfig) -> Tuple[ConditionSet, ControlConditions]:
    return build_conditions(
        record.clip.frames[:, 0], record.clip.attribute_tokens, record.heatmaps, record.contour, config
    )


def training_example(record: ClipRecord, config: RunConfig) -> TrainingExample:
    conds, control = record_conditions(record, config)
    return TrainingExample(latents=to_latent(record.clip.frames), conds=conds, control=control)


def prompt_identity(tokens: Sequence[str], size: int) -> BlobIdentity:
    centre = (size - 1) / 2.0
    identity = BlobIdentity.from_tokens(tokens, center=(centre, centre))
    identity.check_fits(size)
    return identity


def reference_for(identity: BlobIdentity, reference: Optional[PathLike], size: int) -> np.ndarray:
    """The reference PNG when given, otherwise the identity rendered with a closed mouth."""
    if reference is None:
        return render_frame(identity, 0.0, size)
    frame = load_png(reference)
    if frame.shape != (3, size, size):
        raise DimensionError(f"reference {reference} is {frame.shape[1]}x{frame.shape[2]}, expected {size}x{size}")
    return frame


# ======================= Dataset =======================

def gen_data(config: RunConfig, out_dir: PathLike) -> DatasetManifest:
    out_dir = Path(out_dir)
    if not out_dir.parent.is_dir():
        raise ConfigurationError(f"parent directory {out_dir.parent} does not exist")
    out_dir.mkdir(exist_ok=True)
    world = SyntheticWorld(config.world.size)
    records = world.build_dataset(config.world.n_clips, config.world.frames, config.world.seed)
    entries: List[ClipEntry] = []
    for index, record in enumerate(records):
        path = out_dir / f"clip_{index:04d}.mtkb"
        record.save(path)
        entries.append(
            ClipEntry(
                file=path.name,
                sha256=file_digest(path),
                index=index,
                tokens=record.clip.attribute_tokens,
                signal_seed=record.clip.signal.seed,
            )
        )
    manifest = DatasetManifest(
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        world_hash=config.world_hash(),
        seed=config.world.seed,
        n_clips=config.world.n_clips,
        frames=config.world.frames,
        size=config.world.size,
        clips=entries,
    )
    (out_dir / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info("dataset %s written to %s", manifest.dataset_hash(), out_dir)
    return manifest


def load_dataset(data_dir: PathLike) -> Tuple[DatasetManifest, List[ClipRecord]]:
    data_dir = Path(data_dir)
    manifest_path = data_dir / MANIFEST_FILE
    if not manifest_path.is_file():
        raise ConfigurationError(f"{data_dir} holds no dataset manifest")
    manifest = DatasetManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    records = [ClipRecord.load(data_dir / c.file) for c in sorted(manifest.clips, key=lambda c: c.index)]
    return manifest, records


# ======================= Training =======================

def load_model(config: RunConfig, checkpoint: PathLike) -> Checkpoint:
    """Checkpoint whose model architecture matches the config (ablations included)."""
    return load_checkpoint(checkpoint, expected_model_hash=model_digest(config.effective_unet()))


def train(
    config: RunConfig,
    data_dir: PathLike,
    out_checkpoint: PathLike,
    resume: Optional[PathLike] = None,
    progress: bool = True,
) -> Dict[str, Any]:
    """
    Returns:
        {
            'checkpoint': Path,
            'loss_csv': Path,
            'steps': int,
            'losses': [...]    # losses of the steps run in this call
        }
    """
    manifest, records = load_dataset(data_dir)
    if manifest.world_hash != config.world_hash():
        raise ConfigurationError(
            f"dataset world hash {manifest.world_hash} does not match the config's {config.world_hash()}"
        )
    config.apply_runtime()
    unet = config.effective_unet()
    examples = [training_example(r, config) for r in records]

    adam = None
    if resume is not None:
        state = load_model(config, resume)
        params, adam = state.params, state.adam
        logger.info("resuming from %s at step %d", resume, state.step)
    else:
        params = init_model(unet, config.train.seed)

    trainer = Trainer(
        unet,
        config.schedule(),
        examples,
        params,
        lr=config.train.lr,
        batch_size=config.train.batch_size,
        seed=config.train.seed,
        adam=adam,
        freeze_motion=config.ablation.no_motion,
    )
    out_checkpoint = Path(out_checkpoint)
    out_checkpoint.parent.mkdir(parents=True, exist_ok=True)
    loss_csv = out_checkpoint.parent / LOSS_FILE
    extra = {"ablation": config.ablation.active(), "dataset_hash": manifest.dataset_hash()}

    def save(path: Path, current: Trainer) -> None:
        save_checkpoint(path, unet, current.params, config.config_hash(), config.train.seed, current.adam, extra)

    def on_step(current: Trainer, loss: float) -> None:
        every = config.train.checkpoint_every
        if every and current.step % every == 0 and current.step < config.train.steps:
            save(out_checkpoint.with_name(f"{out_checkpoint.stem}_step{current.step:06d}{out_checkpoint.suffix}"), current)

    losses = trainer.run(config.train.steps, loss_csv=loss_csv, progress=progress, on_step=on_step)
    save(out_checkpoint, trainer)
    return {"checkpoint": out_checkpoint, "loss_csv": loss_csv, "steps": trainer.step, "losses": losses}


# ======================= Sampling =======================

def _export(
    clip: np.ndarray,
    out_dir: Path,
    gif: bool,
) -> Tuple[List[FileEntry], Optional[str]]:
    exporter = FrameExporter(out_dir)
    result = exporter.save_png_sequence(clip)
    if result["error"]:
        raise ConfigurationError(f"cannot write frames to {out_dir}: {result['error']}")
    gif_name = None
    if gif:
        gif_result = exporter.save_gif(clip)
        if gif_result["error"]:
            raise ConfigurationError(f"cannot write {gif_result['path']}: {gif_result['error']}")
        gif_name = Path(gif_result["path"]).name
    return [FileEntry.of(f, out_dir) for f in result["files"]], gif_name


def _prepare(
    config: RunConfig,
    tokens: Sequence[str],
    signal_seed: int,
    frames: int,
    reference: Optional[PathLike],
):
    size = config.world.size
    identity = prompt_identity(tokens, size)
    reference_frame = reference_for(identity, reference, size)
    signal = make_drive_signal(signal_seed, frames)
    conds, control = build_conditions(
        reference_frame,
        tokens,
        landmark_heatmaps(signal, identity, size),
        extract_contour(reference_frame),
        config,
    )
    return identity, signal, conds, control


def sample(
    config: RunConfig,
    checkpoint: PathLike,
    out_dir: PathLike,
    tokens: Sequence[str] = ("red", "small"),
    signal_seed: int = 0,
    frames: Optional[int] = None,
    reference: Optional[PathLike] = None,
    gif: bool = False,
) -> RunManifest:
    """One clip of ``frames`` frames (default: the training clip length)."""
    frames = frames or config.world.frames
    state = load_model(config, checkpoint)
    config.apply_runtime()
    identity, signal, conds, control = _prepare(config, tokens, signal_seed, frames, reference)
    sampler = config.sampler()
    clip = sample_clip(conds, control, state.params, state.config, config.schedule(), sampler, frames)[0]
    out_dir = Path(out_dir)
    files, gif_name = _export(clip, out_dir, gif)
    manifest = RunManifest(
        kind="sample",
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        seed=sampler.seed,
        checkpoint=str(checkpoint),
        checkpoint_sha256=file_digest(checkpoint),
        checkpoint_config_hash=state.config_hash,
        identity=identity.to_dict(),
        tokens=list(tokens),
        reference=str(reference) if reference is not None else None,
        signal_seed=signal_seed,
        signal_values=list(signal.values),
        total_frames=frames,
        files=files,
        gif=gif_name,
    )
    manifest.write(out_dir / RUN_MANIFEST_FILE)
    return manifest


def sample_long(
    config: RunConfig,
    checkpoint: PathLike,
    out_dir: PathLike,
    total_frames: int,
    tokens: Sequence[str] = ("red", "small"),
    signal_seed: int = 0,
    fusion: Optional[bool] = None,
    reference: Optional[PathLike] = None,
    gif: bool = False,
) -> RunManifest:
    """Long clip by progressive fusion, or by naive segment concatenation with fusion off."""
    fusion = config.fusion_on() if fusion is None else fusion
    state = load_model(config, checkpoint)
    config.apply_runtime()
    identity, signal, conds, control = _prepare(config, tokens, signal_seed, total_frames, reference)
    sampler = config.sampler()
    clip = long_sample(
        total_frames,
        conds,
        control,
        state.params,
        state.config,
        config.schedule(),
        sampler,
        segment_length=config.fusion.segment_length,
        overlap=config.fusion.overlap,
        fusion=fusion,
        fusion_every=config.fusion.fusion_every,
    )
    out_dir = Path(out_dir)
    files, gif_name = _export(clip, out_dir, gif)
    plan = plan_segments(total_frames, config.fusion.segment_length, config.fusion.overlap)
    manifest = RunManifest(
        kind="sample_long",
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        seed=sampler.seed,
        checkpoint=str(checkpoint),
        checkpoint_sha256=file_digest(checkpoint),
        checkpoint_config_hash=state.config_hash,
        identity=identity.to_dict(),
        tokens=list(tokens),
        reference=str(reference) if reference is not None else None,
        signal_seed=signal_seed,
        signal_values=list(signal.values),
        total_frames=total_frames,
        fusion=fusion,
        plan=plan.to_dict(),
        files=files,
        gif=gif_name,
    )
    manifest.write(out_dir / RUN_MANIFEST_FILE)
    return manifest


# ======================= Evaluation =======================

def held_out_records(config: RunConfig) -> List[ClipRecord]:
    """Clips generated from the world seed at indices following the training clips."""
    world = SyntheticWorld(config.world.size)
    first = config.world.n_clips
    return [world.clip_at(config.world.seed, first + k, config.world.frames) for k in range(config.eval.held_out)]


def long_form_seams(config: RunConfig, state: Checkpoint, record: ClipRecord) -> Dict[str, float]:
    """Long-form generation of one held-out identity; flicker and seam jump across its segment hand-offs."""
    total = config.eval.long_frames
    clip = record.clip
    signal = make_drive_signal(clip.signal.seed, total)
    conds, control = build_conditions(
        clip.frames[:, 0],
        clip.attribute_tokens,
        landmark_heatmaps(signal, clip.identity, config.world.size),
        record.contour,
        config,
    )
    generated = long_sample(
        total,
        conds,
        control,
        state.params,
        state.config,
        config.schedule(),
        config.sampler(),
        segment_length=config.fusion.segment_length,
        overlap=config.fusion.overlap,
        fusion=config.fusion_on(),
        fusion_every=config.fusion.fusion_every,
    )
    plan = plan_segments(total, config.fusion.segment_length, config.fusion.overlap)
    return {"flicker": flicker(generated), "seam_jump": seam_jump(generated, plan.handoff_pairs())}


def evaluate(config: RunConfig, checkpoint: PathLike, out_report: Optional[PathLike] = None) -> EvalReport:
    state = load_model(config, checkpoint)
    config.apply_runtime()
    schedule = config.schedule()
    sampler = config.sampler()
    evaluator = ClipEvaluator(config.eval.ssim_window)
    records = held_out_records(config)

    clips: List[ClipMetrics] = []
    for k, record in enumerate(records):
        conds, control = record_conditions(record, config)
        clip_sampler = sampler.model_copy(update={"seed": sampler.seed + k})
        generated = sample_clip(conds, control, state.params, state.config, schedule, clip_sampler)[0]
        result = evaluator.evaluate(
            generated, record.clip.frames, record.clip.identity, record.clip.signal, record.clip.attribute_tokens
        )
        clips.append(
            ClipMetrics(
                clip_index=config.world.n_clips + k,
                tokens=record.clip.attribute_tokens,
                errors=result["errors"],
                **{name: result.get(name) for name in METRIC_COLUMNS},
            )
        )

    seams: Dict[str, float] = {}
    if config.eval.long_frames > 0:
        seams = {"seam_jump": long_form_seams(config, state, records[0])["seam_jump"]}
    report = EvalReport.aggregate(clips, config.config_hash(), sampler.seed, config.ablation.active(), **seams)
    report = report.model_copy(update={"checkpoint_config_hash": state.config_hash})
    if out_report is not None:
        report.write(out_report)
    logger.info("evaluated %d held-out clips: sync_corr=%s psnr=%s", len(clips), report.sync_corr, report.psnr)
    return report


# ======================= Manifests =======================

def _read_manifest(path: PathLike) -> Union[DatasetManifest, RunManifest]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"manifest {path} does not exist")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("kind") == "dataset":
        return DatasetManifest.model_validate(payload)
    return RunManifest.model_validate(payload)


def verify_manifest(path: PathLike) -> Dict[str, Any]:
    """
    Recompute the config hash and every file digest a manifest records.

    Returns:
        {
            'kind': str,
            'config_hash_ok': bool,
            'mismatched_files': [...],
            'ok': bool
        }
    """
    path = Path(path)
    manifest = _read_manifest(path)
    config_ok = build_config(manifest.config).config_hash() == manifest.config_hash
    entries = manifest.clips if isinstance(manifest, DatasetManifest) else manifest.files
    mismatched = []
    for entry in entries:
        target = path.parent / entry.file
        if not target.is_file() or file_digest(target) != entry.sha256:
            mismatched.append(entry.file)
    if isinstance(manifest, RunManifest) and Path(manifest.checkpoint).is_file():
        if file_digest(manifest.checkpoint) != manifest.checkpoint_sha256:
            mismatched.append(manifest.checkpoint)
    return {
        "kind": manifest.kind,
        "config_hash_ok": config_ok,
        "mismatched_files": mismatched,
        "ok": config_ok and not mismatched,
    }


def reproduce(path: PathLike, out_dir: PathLike) -> Dict[str, Any]:
    """
    Regenerate the artifact a manifest describes into ``out_dir`` and compare digests.

    Returns:
        {'kind': str, 'identical': bool, 'mismatched_files': [...]}
    """
    manifest = _read_manifest(path)
    config = build_config(manifest.config)
    if isinstance(manifest, DatasetManifest):
        fresh = gen_data(config, out_dir)
        old = {c.file: c.sha256 for c in manifest.clips}
        new = {c.file: c.sha256 for c in fresh.clips}
    else:
        if not Path(manifest.checkpoint).is_file():
            raise CheckpointError(f"checkpoint {manifest.checkpoint} named by the manifest is missing")
        if manifest.kind == "sample":
            fresh = sample(
                config, manifest.checkpoint, out_dir, manifest.tokens, manifest.signal_seed,
                manifest.total_frames, manifest.reference, manifest.gif is not None,
            )
        else:
            fresh = sample_long(
                config, manifest.checkpoint, out_dir, manifest.total_frames, manifest.tokens,
                manifest.signal_seed, manifest.fusion, manifest.reference, manifest.gif is not None,
            )
        old = {f.file: f.sha256 for f in manifest.files}
        new = {f.file: f.sha256 for f in fresh.files}
    mismatched = sorted(name for name in set(old) | set(new) if old.get(name) != new.get(name))
    return {"kind": manifest.kind, "identical": not mismatched, "mismatched_files": mismatched}
