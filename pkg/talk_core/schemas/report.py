import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, field_validator


# ======================= Pydantic Schemas =======================

# Column order: fidelity first, then landmarks and sync, then temporal and identity surrogates.
METRIC_COLUMNS = (
    "psnr",
    "ssim",
    "mouth_lmd",
    "face_lmd",
    "sync_corr",
    "flicker",
    "seam_jump",
    "color_distance",
    "attribute_compliance",
)
COLUMN_TITLES = {
    "psnr": "PSNR",
    "ssim": "SSIM",
    "mouth_lmd": "M-LMD",
    "face_lmd": "F-LMD",
    "sync_corr": "Sync",
    "flicker": "Flicker",
    "seam_jump": "Seam",
    "color_distance": "ColorDist",
    "attribute_compliance": "AttrComp",
}


class MetricValues(BaseModel):
    psnr: Optional[float] = Field(default=None, description="Peak signal-to-noise ratio in dB, capped at 99")
    ssim: Optional[float] = Field(default=None, ge=-1.0, le=1.0, description="Mean 8x8 windowed SSIM")
    mouth_lmd: Optional[float] = Field(default=None, ge=0.0, description="Mouth keypoint distance in pixels")
    face_lmd: Optional[float] = Field(default=None, ge=0.0, description="Face centre distance in pixels")
    sync_corr: Optional[float] = Field(
        default=None, ge=-1.0, le=1.0, description="Pearson r of measured mouth aperture vs drive signal"
    )
    flicker: Optional[float] = Field(default=None, ge=0.0, description="Mean squared consecutive-frame difference")
    seam_jump: Optional[float] = Field(
        default=None, description="Frame difference at segment hand-offs minus the difference elsewhere"
    )
    color_distance: Optional[float] = Field(
        default=None, ge=0.0, description="RGB distance of the blob interior from the identity colour"
    )
    attribute_compliance: Optional[float] = Field(
        default=None, ge=0.0, le=1.0, description="Fraction of frames matching the prompt colour and size"
    )

    @field_validator(*METRIC_COLUMNS)
    @classmethod
    def _finite(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not math.isfinite(value):
            raise ValueError(f"metric value {value} is not finite")
        return value


class ClipMetrics(MetricValues):
    clip_index: int = Field(description="World index of the held-out clip")
    tokens: List[str] = Field(default_factory=list, description="Attribute tokens of the clip's identity")
    errors: Dict[str, str] = Field(default_factory=dict, description="Metrics that could not be computed, with why")


class EvalReport(MetricValues):
    config_hash: str = Field(description="Hash of the run config that produced the evaluated checkpoint")
    checkpoint_config_hash: str = Field(default="", description="Config hash stored in the checkpoint")
    seed: int = Field(description="Sampler seed of the evaluation")
    ablation: List[str] = Field(default_factory=list, description="Active ablation flags")
    clips: List[ClipMetrics] = Field(default_factory=list, description="Per-clip breakdown")

    @classmethod
    def aggregate(
        cls, clips: List[ClipMetrics], config_hash: str, seed: int, ablation: List[str], **extra: float
    ) -> "EvalReport":
        """Mean of every metric over the clips that produced it; ``extra`` overrides whole-run values."""
        means: Dict[str, Optional[float]] = {}
        for name in METRIC_COLUMNS:
            values = [getattr(c, name) for c in clips if getattr(c, name) is not None]
            means[name] = float(sum(values) / len(values)) if values else None
        means.update(extra)
        return cls(config_hash=config_hash, seed=seed, ablation=ablation, clips=clips, **means)

    def row(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_COLUMNS}

    def to_text(self) -> str:
        rows = [("overall", self.row())] + [(f"clip {c.clip_index}", c.model_dump()) for c in self.clips]
        return format_table(["clip"] + [COLUMN_TITLES[c] for c in METRIC_COLUMNS], [
            [label] + [values.get(c) for c in METRIC_COLUMNS] for label, values in rows
        ])

    def write(self, path: Union[str, Path]) -> Dict[str, Path]:
        """JSON report, its JSON Schema and a text table side by side."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        schema_path = path.with_name(path.stem + ".schema.json")
        schema_path.write_text(json.dumps(EvalReport.model_json_schema(), indent=2, sort_keys=True), encoding="utf-8")
        table_path = path.with_suffix(".txt")
        table_path.write_text(self.to_text() + "\n", encoding="utf-8")
        return {"report": path, "schema": schema_path, "table": table_path}


class AblationRow(MetricValues):
    cell: str = Field(description="Ablation cell name ('full' for the unablated model)")
    flags: List[str] = Field(default_factory=list, description="Active ablation flags")
    config_hash: str = Field(default="", description="Config hash of the cell's run")
    config_diff: Dict[str, List[object]] = Field(
        default_factory=dict, description="Dotted config keys that differ from the full run: [full, cell]"
    )
    error: Optional[str] = Field(default=None, description="Failure message when the cell did not complete")


class AblationTable(BaseModel):
    base_config_hash: str = Field(description="Config hash of the full (unablated) run")
    rows: List[AblationRow] = Field(default_factory=list)

    def row(self, cell: str) -> AblationRow:
        for row in self.rows:
            if row.cell == cell:
                return row
        raise KeyError(cell)

    def to_text(self) -> str:
        return format_table(
            ["cell"] + [COLUMN_TITLES[c] for c in METRIC_COLUMNS] + ["error"],
            [[r.cell] + [getattr(r, c) for c in METRIC_COLUMNS] + [r.error or ""] for r in self.rows],
        )

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "ablation.json"
        json_path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        table_path = out_dir / "ablation.txt"
        table_path.write_text(self.to_text() + "\n", encoding="utf-8")
        return {"report": json_path, "table": table_path}


def _cell(value: object) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(header: List[str], rows: List[List[object]]) -> str:
    """Aligned plain-text table; the first column is left-aligned, numbers right-aligned."""
    cells = [header] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for k, row in enumerate(cells):
        parts = [row[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
