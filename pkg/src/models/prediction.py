from dataclasses import dataclass
from enum import Enum

from models.features import Label


class Strategy(Enum):
    LEARNED = "learned"
    POSITION = "position"
    FIXATION = "fixation"


@dataclass(frozen=True, slots=True)
class AnchorPrediction:
    """scored (note, passage) decision shared by every anchoring strategy.

    Attributes:
        strategy (Strategy): producer of the score
        participant_id (str): owning participant
        note_id (int): voice note
        passage_id (int): candidate passage
        score (float): in [0, 1], higher means more likely annotated
        label (Label): Annotated or NotAnnotated
    """

    strategy: Strategy
    participant_id: str
    note_id: int
    passage_id: int
    score: float
    label: Label

    @property
    def key(self):
        return (self.participant_id, self.note_id, self.passage_id)
