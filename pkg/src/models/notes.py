from dataclasses import dataclass
from enum import Enum

import numpy as np


class NoteType(Enum):
    SHORT = "short"
    REFLECTIVE = "reflective"
    SUMMARY = "summary"


@dataclass(frozen=True, slots=True)
class VoiceNote:
    """one utterance, [start, end) in session milliseconds."""

    note_id: int
    start: int
    end: int

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True, slots=True)
class RegionOfAnalysis:
    """window from the previous note's end (or session start) to this note's end."""

    note_id: int
    roa_start: int
    roa_end: int

    def __contains__(self, t: int) -> bool:
        return self.roa_start <= t <= self.roa_end


@dataclass(frozen=True, eq=False)
class Envelope:
    """audio level per frame.

    Attributes:
        times (np.ndarray): frame start times in ms, int64, non-decreasing
        levels (np.ndarray): frame level in dBFS, float64
    """

    times: np.ndarray
    levels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.int64))
        object.__setattr__(self, "levels", np.asarray(self.levels, dtype=np.float64))
        if self.times.shape != self.levels.shape:
            raise ValueError("envelope times and levels differ in length")

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Envelope):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(
            self.levels, other.levels
        )

    __hash__ = None
