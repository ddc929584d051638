from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Mapping, Optional, Tuple, Union

from models.gaze import GazeSample, ScrollEvent
from models.layout import PageLayout
from models.notes import Envelope, NoteType


@dataclass(frozen=True, slots=True)
class Viewport:
    width: int
    height: int

    def contains(self, x: float, y: float) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


AudioSource = Union[Path, Envelope]


@dataclass(frozen=True, eq=True)
class Session:
    """one participant's recorded reading session.

    Attributes:
        participant_id (str): participant label
        gaze (Tuple[GazeSample, ...]): screen gaze, sorted by t
        scrolls (Tuple[ScrollEvent, ...]): viewport states, sorted by t, first at t=0
        layout (PageLayout): passage geometry
        viewport (Viewport): screen viewport size in pixels
        audio (AudioSource): WAV path or inline envelope
        ground_truth (Optional[Mapping[int, FrozenSet[int]]]): note_id -> true passages
        note_types (Optional[Mapping[int, NoteType]]): note_id -> note type tag
    """

    participant_id: str
    gaze: Tuple[GazeSample, ...]
    scrolls: Tuple[ScrollEvent, ...]
    layout: PageLayout
    viewport: Viewport
    audio: AudioSource
    ground_truth: Optional[Mapping[int, FrozenSet[int]]] = None
    note_types: Optional[Mapping[int, NoteType]] = field(default=None)

    __hash__ = None

    def true_passages(self, note_id: int) -> FrozenSet[int]:
        if self.ground_truth is None:
            return frozenset()
        return self.ground_truth.get(note_id, frozenset())

    @property
    def has_labels(self) -> bool:
        return self.ground_truth is not None

    @property
    def duration_ms(self) -> int:
        return self.gaze[-1].t if self.gaze else 0


def labels_from_pairs(pairs) -> Dict[int, FrozenSet[int]]:
    grouped: Dict[int, set] = {}
    for note_id, passage_id in pairs:
        grouped.setdefault(int(note_id), set()).add(int(passage_id))
    return {k: frozenset(v) for k, v in grouped.items()}
