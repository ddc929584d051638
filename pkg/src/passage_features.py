import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set

import numpy as np
import pandas as pd

from errors import DataValidationError, EmptyLayoutError, MissingFileError, ParseError, read_utf8
from models.features import FEATURE_CODES, FEATURE_NAMES, GazeFeatures, Label, PassageFeatureVector
from models.gaze import DocGazeSample, Fixation, Saccade
from models.layout import PageLayout
from models.notes import NoteType, RegionOfAnalysis

logger = logging.getLogger(__name__)

FEATURE_COLUMNS = ["participant_id", "note_id", "passage_id", *FEATURE_CODES, "label"]
# descriptive header, accepted on read
NAMED_FEATURE_COLUMNS = ["participant_id", "note_id", "passage_id", *FEATURE_NAMES, "label"]
TEMPORAL_ORDER_FIXATIONS = 5


def candidate_passages(
    samples: Sequence[DocGazeSample],
    fixations: Sequence[Fixation],
    layout: PageLayout,
    visible_at_start: Iterable[int],
) -> List[int]:
    """passages that plausibly got read during a region of analysis.

    a passage qualifies when an on-screen sample lies inside it, a fixation was
    assigned to it, or it was visible when the note started.

    Args:
        samples (Sequence[DocGazeSample]): mapped samples inside the region
        fixations (Sequence[Fixation]): assigned fixations inside the region
        layout (PageLayout): passage geometry
        visible_at_start (Iterable[int]): passage ids visible at note start

    Returns:
        List[int]: sorted passage ids
    """
    seen: Set[int] = set(visible_at_start)
    seen.update(f.passage_id for f in fixations if f.passage_id is not None)

    by_page: Dict[int, List[DocGazeSample]] = {}
    for s in samples:
        if s.on_screen:
            by_page.setdefault(s.page, []).append(s)

    for page, page_samples in by_page.items():
        xs = np.fromiter((s.x for s in page_samples), dtype=np.float64, count=len(page_samples))
        ys = np.fromiter((s.y for s in page_samples), dtype=np.float64, count=len(page_samples))
        for p in layout.passages_on(page):
            if p.passage_id in seen:
                continue
            inside = (xs >= p.x) & (xs <= p.right) & (ys >= p.y) & (ys <= p.bottom)
            if inside.any():
                seen.add(p.passage_id)
    return sorted(seen)


def temporal_order(
    roa: RegionOfAnalysis,
    per_passage_fixations: Mapping[int, Sequence[Fixation]],
    note_start: int,
    passages: Optional[Iterable[int]] = None,
) -> Dict[int, float]:
    """recency score per passage, 0 = read nearest the note start.

    for each passage with fixations, delta = note_start - mean start time of
    its first (up to) five fixations; deltas are min-max scaled to [0, 1].
    passages without fixations score 1.0; a single read passage scores 0.0.

    Args:
        roa (RegionOfAnalysis): the note's region of analysis
        per_passage_fixations (Mapping[int, Sequence[Fixation]]): fixations by passage
        note_start (int): utterance start in ms
        passages (Optional[Iterable[int]]): extra passage ids to score

    Returns:
        Dict[int, float]: passage id -> value in [0, 1]
    """
    if note_start < roa.roa_start:
        raise ValueError("note starts before its region of analysis")

    deltas: Dict[int, float] = {}
    for passage_id, fixations in per_passage_fixations.items():
        if not fixations:
            continue
        first = sorted(fixations, key=lambda f: f.start)[:TEMPORAL_ORDER_FIXATIONS]
        deltas[passage_id] = note_start - float(np.mean([f.start for f in first]))

    order = {pid: 1.0 for pid in (passages or ())}
    order.update({pid: 1.0 for pid in per_passage_fixations})
    if not deltas:
        return order

    lo, hi = min(deltas.values()), max(deltas.values())
    for passage_id, delta in deltas.items():
        order[passage_id] = 0.0 if hi == lo else (delta - lo) / (hi - lo)
    return order


def _triple(values: Sequence[float]):
    if not values:
        return 0.0, 0.0, 0.0
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.max()), float(arr.min()), float(arr.mean())


def featurize_roa(
    roa: RegionOfAnalysis,
    note_start: int,
    fixations: Sequence[Fixation],
    saccades: Sequence[Saccade],
    layout: PageLayout,
    candidates: Optional[Sequence[int]] = None,
    participant_id: str = "",
    true_passages: Optional[Set[int]] = None,
    note_type: Optional[NoteType] = None,
) -> List[PassageFeatureVector]:
    """the 15 gaze and temporal features for every candidate passage.

    Args:
        roa (RegionOfAnalysis): window the events were taken from
        note_start (int): utterance start, used for temporal order
        fixations (Sequence[Fixation]): assigned fixations inside the region
        saccades (Sequence[Saccade]): saccades between those fixations
        layout (PageLayout): passage geometry (areas)
        candidates (Optional[Sequence[int]]): passages to score, default all
        participant_id (str): stamped on each vector
        true_passages (Optional[Set[int]]): ground truth; None leaves labels Unknown
        note_type (Optional[NoteType]): tag stamped on each vector

    Returns:
        List[PassageFeatureVector]: one vector per candidate, by passage id

    Raises:
        EmptyLayoutError: the layout has no passages
    """
    if len(layout) == 0:
        raise EmptyLayoutError("layout has no passages")
    candidate_ids = sorted(candidates) if candidates is not None else layout.passage_ids

    fix_by_passage: Dict[int, List[Fixation]] = {}
    for f in fixations:
        fix_by_passage.setdefault(f.passage_id, []).append(f)
    sac_by_passage: Dict[int, List[Saccade]] = {}
    for s in saccades:
        sac_by_passage.setdefault(s.passage_id, []).append(s)

    order = temporal_order(
        roa, {pid: fix_by_passage.get(pid, []) for pid in candidate_ids}, note_start
    )

    vectors: List[PassageFeatureVector] = []
    for passage_id in candidate_ids:
        area = layout.passage(passage_id).area
        fix = fix_by_passage.get(passage_id, [])
        sac = sac_by_passage.get(passage_id, [])
        durations = [float(f.duration) for f in fix]

        if fix:
            features = GazeFeatures(
                len(fix) / area,
                *_triple(durations),
                *_triple([s.length for s in sac]),
                *_triple([float(s.duration) for s in sac]),
                *_triple([s.velocity for s in sac]),
                sum(durations) / area,
                order[passage_id],
            )
        else:
            features = GazeFeatures()

        if true_passages is None:
            label = Label.UNKNOWN
        else:
            label = Label.ANNOTATED if passage_id in true_passages else Label.NOT_ANNOTATED

        vectors.append(
            PassageFeatureVector(
                participant_id=participant_id,
                note_id=roa.note_id,
                passage_id=passage_id,
                features=features,
                label=label,
                note_type=note_type,
            )
        )
    return vectors


def write_features(rows: Sequence[PassageFeatureVector], path: Path) -> None:
    records = [
        (r.participant_id, r.note_id, r.passage_id, *r.values(), r.label.value) for r in rows
    ]
    frame = pd.DataFrame(records, columns=FEATURE_COLUMNS)
    frame.to_csv(path, index=False)
    logger.info("wrote %d feature rows to %s", len(rows), path)


def read_features(
    path: Path, note_types: Optional[Mapping[tuple, NoteType]] = None
) -> List[PassageFeatureVector]:
    """load features.csv; `note_types` maps (participant, note) to a tag."""
    if not path.is_file():
        raise MissingFileError(path)
    try:
        frame = pd.read_csv(
            io.StringIO(read_utf8(path)),
            float_precision="round_trip",
            dtype={"participant_id": str, "label": str},
            keep_default_na=False,
        )
    except pd.errors.EmptyDataError:
        raise ParseError(path, 1, "empty file, expected a header row") from None

    if list(frame.columns) not in (FEATURE_COLUMNS, NAMED_FEATURE_COLUMNS):
        raise ParseError(path, 1, "unexpected features header")

    rows: List[PassageFeatureVector] = []
    labels = {label.value: label for label in Label}
    for line, record in enumerate(frame.itertuples(index=False, name=None), start=2):
        participant_id, note_id, passage_id, *values, label = record
        if label not in labels:
            raise ParseError(path, line, f"unknown label {label!r}")
        try:
            features = GazeFeatures.from_values([float(v) for v in values])
            note_id, passage_id = int(note_id), int(passage_id)
        except (TypeError, ValueError):
            raise ParseError(path, line, "non-numeric feature value") from None
        rows.append(
            PassageFeatureVector(
                participant_id=str(participant_id),
                note_id=note_id,
                passage_id=passage_id,
                features=features,
                label=labels[label],
                note_type=(note_types or {}).get((str(participant_id), note_id)),
            )
        )
    return rows


def labelled(rows: Sequence[PassageFeatureVector], source: Path) -> List[PassageFeatureVector]:
    """rows with a known label; raises when there are none."""
    known = [r for r in rows if r.label is not Label.UNKNOWN]
    if not known:
        raise DataValidationError(f"{source}: no labelled rows (labels are all Unknown)")
    return known
