import io
import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import pandas as pd

from config import IdtConfig
from errors import MissingFileError, NoVisiblePassagesError, ParseError, read_utf8
from gaze_events import passage_events
from layout_map import scroll_state_at, visible_passages
from models.features import Label
from models.gaze import DocGazeSample, ScrollEvent
from models.layout import PageLayout
from models.notes import VoiceNote
from models.prediction import AnchorPrediction, Strategy
from models.session import Viewport

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["strategy", "participant_id", "note_id", "passage_id", "score", "label"]
BASELINE_IDT = IdtConfig(dispersion_threshold=20.0, duration_threshold=100.0)


def position_baseline(
    note: VoiceNote,
    scrolls: Sequence[ScrollEvent],
    layout: PageLayout,
    viewport: Viewport,
    participant_id: str = "",
) -> List[AnchorPrediction]:
    """the topmost passage on screen when the note starts is the anchor.

    Raises:
        NoVisiblePassagesError: nothing is on screen at note start
    """
    state = scroll_state_at(scrolls, note.start)
    shown = visible_passages(layout, state, viewport)
    if not shown:
        raise NoVisiblePassagesError(
            f"note {note.note_id}: no passage visible at {note.start} ms"
        )
    return [
        AnchorPrediction(
            strategy=Strategy.POSITION,
            participant_id=participant_id,
            note_id=note.note_id,
            passage_id=passage_id,
            score=1.0 if rank == 0 else 0.0,
            label=Label.ANNOTATED if rank == 0 else Label.NOT_ANNOTATED,
        )
        for rank, passage_id in enumerate(shown)
    ]


def fixation_baseline(
    note: VoiceNote,
    doc_gaze: Sequence[DocGazeSample],
    layout: PageLayout,
    cfg: IdtConfig = BASELINE_IDT,
    candidates: Optional[Iterable[int]] = None,
    participant_id: str = "",
) -> List[AnchorPrediction]:
    """the passage fixated most often during the utterance is the anchor.

    fixations are detected over [note.start, note.end] only. scores are each
    passage's share of those fixations; ties go to the lowest passage id and
    a silent gaze record yields no Annotated passage.

    Args:
        note (VoiceNote): utterance window
        doc_gaze (Sequence[DocGazeSample]): mapped gaze, sorted by t
        layout (PageLayout): passage geometry
        cfg (IdtConfig): I-DT thresholds, 20 px / 100 ms by default
        candidates (Optional[Iterable[int]]): passages to emit rows for, default all
        participant_id (str): stamped on each prediction

    Returns:
        List[AnchorPrediction]: one row per candidate or fixated passage, by id
    """
    fixations, _ = passage_events(doc_gaze, layout, cfg, note.start, note.end)
    counts = Counter(f.passage_id for f in fixations)
    total = sum(counts.values())

    winner = None
    if total:
        winner = min(counts, key=lambda pid: (-counts[pid], pid))

    emitted = set(layout.passage_ids if candidates is None else candidates) | set(counts)
    return [
        AnchorPrediction(
            strategy=Strategy.FIXATION,
            participant_id=participant_id,
            note_id=note.note_id,
            passage_id=passage_id,
            score=counts[passage_id] / total if total else 0.0,
            label=Label.ANNOTATED if passage_id == winner else Label.NOT_ANNOTATED,
        )
        for passage_id in sorted(emitted)
    ]


def write_predictions(predictions: Sequence[AnchorPrediction], path: Path) -> None:
    frame = pd.DataFrame(
        [
            (p.strategy.value, p.participant_id, p.note_id, p.passage_id, p.score, p.label.value)
            for p in predictions
        ],
        columns=PREDICTION_COLUMNS,
    )
    frame.to_csv(path, index=False)
    logger.info("wrote %d predictions to %s", len(predictions), path)


def read_predictions(path: Path) -> List[AnchorPrediction]:
    if not Path(path).is_file():
        raise MissingFileError(path)
    try:
        frame = pd.read_csv(
            io.StringIO(read_utf8(path)),
            dtype={"participant_id": str},
            keep_default_na=False,
            float_precision="round_trip",
        )
    except pd.errors.EmptyDataError:
        raise ParseError(path, 1, "empty file, expected a header row") from None
    if list(frame.columns) != PREDICTION_COLUMNS:
        raise ParseError(path, 1, "unexpected predictions header")

    strategies = {s.value: s for s in Strategy}
    labels = {Label.ANNOTATED.value: Label.ANNOTATED, Label.NOT_ANNOTATED.value: Label.NOT_ANNOTATED}
    out: List[AnchorPrediction] = []
    for line, (strategy, pid, note_id, passage_id, score, label) in enumerate(
        frame.itertuples(index=False, name=None), start=2
    ):
        if strategy not in strategies or label not in labels:
            raise ParseError(path, line, "unknown strategy or label")
        try:
            out.append(
                AnchorPrediction(
                    strategies[strategy], str(pid), int(note_id), int(passage_id), float(score), labels[label]
                )
            )
        except (TypeError, ValueError):
            raise ParseError(path, line, "non-numeric field") from None
    return out
