from dataclasses import dataclass, replace
from typing import Optional


@dataclass(frozen=True, slots=True)
class GazeSample:
    """raw eye-tracker sample in screen space.

    Attributes:
        t (int): milliseconds since session start
        x (float): horizontal screen pixels
        y (float): vertical screen pixels
    """

    t: int
    x: float
    y: float


@dataclass(frozen=True, slots=True)
class ScrollEvent:
    """viewport state change: which page is shown and how far it is scrolled.

    Attributes:
        t (int): milliseconds since session start
        page (int): 1-based page index
        scroll_y (float): document-pixel offset of the viewport top
    """

    t: int
    page: int
    scroll_y: float


@dataclass(frozen=True, slots=True)
class DocGazeSample:
    t: int
    page: int
    x: float
    y: float
    on_screen: bool


@dataclass(frozen=True, slots=True)
class Fixation:
    """dispersion-threshold fixation in document space.

    Attributes:
        start (int): timestamp of the first member sample
        end (int): timestamp of the last member sample
        cx (float): centroid x in document pixels
        cy (float): centroid y in document pixels
        page (int): 1-based page index
        passage_id (Optional[int]): assigned passage, None until assigned
        n_samples (int): member sample count
        dispersion (float): (max x - min x) + (max y - min y) of the members
    """

    start: int
    end: int
    cx: float
    cy: float
    page: int
    passage_id: Optional[int] = None
    n_samples: int = 0
    dispersion: float = 0.0

    @property
    def duration(self) -> int:
        return self.end - self.start

    def assigned(self, passage_id: int) -> "Fixation":
        return replace(self, passage_id=passage_id)


@dataclass(frozen=True, slots=True)
class Saccade:
    """movement between two consecutive fixations.

    Attributes:
        from_fix (int): index of the departing fixation
        to_fix (int): index of the landing fixation
        length (float): euclidean distance between centroids in pixels
        duration (int): gap between the fixations in ms, at least 1
        velocity (float): length / duration in px/ms
        passage_id (Optional[int]): passage of the landing fixation
    """

    from_fix: int
    to_fix: int
    length: float
    duration: int
    velocity: float
    passage_id: Optional[int] = None
