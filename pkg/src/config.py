try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigError, MissingFileError, read_utf8


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SessionConfig(_Section):
    max_gaze_gap_ms: int = Field(500, gt=0)
    max_offscreen_ratio: float = Field(0.2, ge=0, le=1)


class AudioConfig(_Section):
    """voice-note extraction settings.

    the default threshold is relative: 26 dB above the session noise floor,
    taken as the `floor_percentile` of the envelope levels.
    """

    threshold_db_rel: float = 26.0
    threshold_db_abs: Optional[float] = None
    min_note_ms: int = Field(3000, ge=0)
    merge_gap_ms: int = Field(400, ge=0)
    frame_ms: int = Field(10, gt=0)
    floor_percentile: float = Field(5.0, ge=0, le=100)


class IdtConfig(_Section):
    dispersion_threshold: float = Field(25.0, gt=0)
    duration_threshold: float = Field(100.0, gt=0)


class GazeConfig(_Section):
    idt_dispersion_px: float = Field(25.0, gt=0)
    idt_duration_ms: float = Field(100.0, gt=0)
    baseline_idt_dispersion_px: float = Field(20.0, gt=0)
    baseline_idt_duration_ms: float = Field(100.0, gt=0)

    @property
    def pipeline_idt(self) -> IdtConfig:
        return IdtConfig(
            dispersion_threshold=self.idt_dispersion_px,
            duration_threshold=self.idt_duration_ms,
        )

    @property
    def baseline_idt(self) -> IdtConfig:
        return IdtConfig(
            dispersion_threshold=self.baseline_idt_dispersion_px,
            duration_threshold=self.baseline_idt_duration_ms,
        )


class ForestConfig(_Section):
    """bagged decision-tree settings. only `n_trees` has a published value."""

    n_trees: int = Field(1000, ge=1)
    max_depth: Optional[int] = Field(None, ge=1)
    min_samples_leaf: int = Field(1, ge=1)
    features_per_split: int = Field(4, ge=1, le=15)
    bootstrap: bool = True
    class_weighting: Literal["balanced", "none"] = "balanced"
    seed: int = Field(0, ge=0, lt=2**64)
    n_jobs: int = 1


class EvalConfig(_Section):
    decision_threshold: float = Field(0.5, ge=0, le=1)
    metrics: List[Literal["precision", "recall", "f1", "auc", "hit_rate"]] = [
        "precision",
        "recall",
        "f1",
        "auc",
        "hit_rate",
    ]
    top_features: int = Field(8, ge=1, le=15)
    by_passage_size: bool = False
    n_jobs: int = 1


class SimulatorConfig(_Section):
    """synthetic reader settings. none of these are measured values."""

    n_participants: int = Field(32, ge=2)
    notes_per_participant: int = Field(22, ge=1)
    seed: int = Field(0, ge=0)
    type_mix: Dict[Literal["short", "reflective", "summary"], float] = {
        "short": 0.57,
        "reflective": 0.26,
        "summary": 0.17,
    }
    adherence: Dict[Literal["short", "reflective", "summary"], float] = {
        "short": 0.9,
        "reflective": 0.3,
        "summary": 0.6,
    }
    note_length_ms: Dict[Literal["short", "reflective", "summary"], List[int]] = {
        "short": [4000, 8000],
        "reflective": [8000, 20000],
        "summary": [15000, 40000],
    }
    fixation_duration_mean_ms: float = Field(220.0, gt=0)
    fixation_duration_sd_ms: float = Field(60.0, ge=0)
    saccade_length_mean_px: float = Field(30.0, gt=0)
    saccade_length_sd_px: float = Field(6.0, ge=0)
    reading_speed_px_per_ms: float = Field(1.5, gt=0)
    careful_saccade_scale: float = Field(0.6, gt=0)
    careful_fixation_scale: float = Field(1.25, gt=0)
    regression_prob: float = Field(0.3, ge=0, le=1)
    look_away_share: float = Field(0.5, ge=0, le=1)
    gaze_jitter_px: float = Field(1.5, ge=0)
    sample_rate_hz: float = Field(90.0, gt=0)
    line_height_px: float = Field(28.0, gt=0)
    passages_per_page: int = Field(5, ge=2)
    page_w: int = Field(960, gt=0)
    page_h: int = Field(1280, gt=0)
    viewport_w: int = Field(960, gt=0)
    viewport_h: int = Field(800, gt=0)
    waveform: bool = False
    waveform_rate_hz: int = Field(8000, gt=0)

    @model_validator(mode="after")
    def _check_profile(self) -> "SimulatorConfig":
        if abs(sum(self.type_mix.values()) - 1.0) > 1e-9:
            raise ValueError("type_mix weights must sum to 1")
        if any(not 0 <= a <= 1 for a in self.adherence.values()):
            raise ValueError("adherence must lie in [0, 1]")
        for bounds in self.note_length_ms.values():
            if len(bounds) != 2 or not 0 < bounds[0] <= bounds[1]:
                raise ValueError("note_length_ms entries are [min, max] with 0 < min <= max")
        return self


class PipelineConfig(_Section):
    session: SessionConfig = SessionConfig()
    audio: AudioConfig = AudioConfig()
    gaze: GazeConfig = GazeConfig()
    forest: ForestConfig = ForestConfig()
    evaluation: EvalConfig = EvalConfig()
    simulator: SimulatorConfig = SimulatorConfig()


def load_config(path: Optional[Path] = None) -> PipelineConfig:
    """read a TOML config file; absent sections and keys take defaults.

    Args:
        path (Optional[Path]): config file, or None for pure defaults

    Returns:
        PipelineConfig: validated configuration
    """
    if path is None:
        return PipelineConfig()
    if not path.is_file():
        raise MissingFileError(path)

    try:
        raw = tomllib.loads(read_utf8(path))
        return PipelineConfig.model_validate(raw)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e


def override(cfg: PipelineConfig, section: str, **values) -> PipelineConfig:
    """apply command-line overrides to one section, skipping unset flags."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    current = getattr(cfg, section)
    try:
        updated = type(current).model_validate({**current.model_dump(), **values})
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    return cfg.model_copy(update={section: updated})
