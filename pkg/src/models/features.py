from dataclasses import astuple, dataclass, fields
from enum import Enum
from typing import Final, Optional, Sequence, Tuple

from models.notes import NoteType


class Label(Enum):
    ANNOTATED = "Annotated"
    NOT_ANNOTATED = "NotAnnotated"
    UNKNOWN = "Unknown"

    @property
    def as_int(self) -> Optional[int]:
        return LABEL_INTS[self]


LABEL_INTS: Final = {
    Label.ANNOTATED: 1,
    Label.NOT_ANNOTATED: 0,
    Label.UNKNOWN: None,
}


@dataclass(frozen=True, slots=True)
class GazeFeatures:
    """per-passage gaze and temporal features over one region of analysis.

    Attributes:
        norm_fixation_count (float): fixations / passage area
        max_fixation_duration, min_fixation_duration, avg_fixation_duration (float): ms
        max_saccade_length, min_saccade_length, avg_saccade_length (float): px
        max_saccade_duration, min_saccade_duration, avg_saccade_duration (float): ms
        max_saccade_velocity, min_saccade_velocity, avg_saccade_velocity (float): px/ms
        norm_time_duration (float): total fixation ms / passage area
        temporal_order (float): 0 = read nearest the note start, 1 = farthest or never
    """

    norm_fixation_count: float = 0.0
    max_fixation_duration: float = 0.0
    min_fixation_duration: float = 0.0
    avg_fixation_duration: float = 0.0
    max_saccade_length: float = 0.0
    min_saccade_length: float = 0.0
    avg_saccade_length: float = 0.0
    max_saccade_duration: float = 0.0
    min_saccade_duration: float = 0.0
    avg_saccade_duration: float = 0.0
    max_saccade_velocity: float = 0.0
    min_saccade_velocity: float = 0.0
    avg_saccade_velocity: float = 0.0
    norm_time_duration: float = 0.0
    temporal_order: float = 1.0

    def values(self) -> Tuple[float, ...]:
        return astuple(self)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "GazeFeatures":
        if len(values) != len(FEATURE_NAMES):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {len(values)}")
        return cls(*(float(v) for v in values))


FEATURE_NAMES: Final[Tuple[str, ...]] = tuple(f.name for f in fields(GazeFeatures))
N_FEATURES: Final[int] = len(FEATURE_NAMES)
# features.csv column names, f1..f15 in FEATURE_NAMES order
FEATURE_CODES: Final[Tuple[str, ...]] = tuple(f"f{i}" for i in range(1, N_FEATURES + 1))


@dataclass(frozen=True, slots=True)
class PassageFeatureVector:
    participant_id: str
    note_id: int
    passage_id: int
    features: GazeFeatures
    label: Label = Label.UNKNOWN
    note_type: Optional[NoteType] = None

    def values(self) -> Tuple[float, ...]:
        return self.features.values()
