"""Reading and writing recorded reading sessions.

A session directory holds `gaze.csv`, `scroll.csv`, `layout.json` (or page
bitmaps under `pages/`), `meta.json`, either `envelope.csv` or `audio.wav`,
and optionally `labels.csv` and `note_types.csv`.
"""

import io
import logging
import shutil
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import SessionConfig
from errors import DataValidationError, MissingFileError, ParseError, read_utf8
from layout_map import read_pbm, segment_page_blocks
from models.gaze import GazeSample, ScrollEvent
from models.layout import PageLayout, PageSpec, Passage
from models.notes import Envelope, NoteType
from models.session import Session, Viewport, labels_from_pairs

logger = logging.getLogger(__name__)

GAZE_COLUMNS = ["t_ms", "x_px", "y_px"]
SCROLL_COLUMNS = ["t_ms", "page", "scroll_y_px"]
ENVELOPE_COLUMNS = ["t_ms", "db"]
LABEL_COLUMNS = ["note_id", "passage_id"]
NOTE_TYPE_COLUMNS = ["note_id", "type"]


class SessionMeta(BaseModel):
    model_config = ConfigDict(extra="ignore")

    participant_id: str
    viewport_w: int = Field(gt=0)
    viewport_h: int = Field(gt=0)


class PassageEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    x: float
    y: float
    w: float
    h: float


class PageEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    page: int
    w: float
    h: float
    passages: List[PassageEntry] = []


class LayoutFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pages: List[PageEntry]


def read_csv_columns(path: Path, columns: Sequence[str], allow_empty: bool = False) -> pd.DataFrame:
    """read a header-bearing CSV and check every cell is numeric.

    Args:
        path (Path): file to read
        columns (Sequence[str]): exact expected header
        allow_empty (bool): a zero-byte file reads as a frame with no rows

    Returns:
        pd.DataFrame: numeric frame with the expected columns

    Raises:
        MissingFileError: file absent
        ParseError: bad encoding, wrong header or a non-numeric / empty cell
    """
    if not path.is_file():
        raise MissingFileError(path)
    text = read_utf8(path)
    if allow_empty and not text.strip():
        return pd.DataFrame({col: pd.Series(dtype=np.float64) for col in columns})
    try:
        frame = pd.read_csv(io.StringIO(text), float_precision="round_trip", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(path, 1, "empty file, expected a header row") from None
    except pd.errors.ParserError as e:
        raise ParseError(path, 1, str(e)) from None

    if list(frame.columns) != list(columns):
        raise ParseError(path, 1, f"expected header {','.join(columns)}")

    for col in columns:
        numeric = pd.to_numeric(frame[col], errors="coerce")
        bad = np.flatnonzero(numeric.isna().to_numpy())
        if len(bad):
            # header is line 1
            raise ParseError(path, int(bad[0]) + 2, f"non-numeric {col!r}")
        frame[col] = numeric
    return frame


def _ms(values: pd.Series) -> np.ndarray:
    # sub-millisecond input is truncated
    return np.trunc(values.to_numpy(dtype=np.float64)).astype(np.int64)


def read_gaze(path: Path) -> List[GazeSample]:
    # a zero-byte file is a session without gaze, rejected by build_session
    frame = read_csv_columns(path, GAZE_COLUMNS, allow_empty=True)
    t = _ms(frame["t_ms"])
    x = frame["x_px"].to_numpy(dtype=np.float64)
    y = frame["y_px"].to_numpy(dtype=np.float64)
    return [GazeSample(int(a), float(b), float(c)) for a, b, c in zip(t, x, y)]


def read_scrolls(path: Path) -> List[ScrollEvent]:
    frame = read_csv_columns(path, SCROLL_COLUMNS)
    t = _ms(frame["t_ms"])
    page = frame["page"].to_numpy()
    if len(page) and not np.all(page == np.trunc(page)):
        raise DataValidationError(f"{path}: page indices must be integers")
    scroll = frame["scroll_y_px"].to_numpy(dtype=np.float64)
    return [
        ScrollEvent(int(a), int(b), float(c)) for a, b, c in zip(t, page.astype(np.int64), scroll)
    ]


def read_envelope(path: Path) -> Envelope:
    frame = read_csv_columns(path, ENVELOPE_COLUMNS)
    return Envelope(times=_ms(frame["t_ms"]), levels=frame["db"].to_numpy(dtype=np.float64))


def read_labels(path: Path) -> Dict[int, FrozenSet[int]]:
    frame = read_csv_columns(path, LABEL_COLUMNS)
    return labels_from_pairs(zip(frame["note_id"].astype(int), frame["passage_id"].astype(int)))


def read_note_types(path: Path) -> Dict[int, NoteType]:
    if not path.is_file():
        raise MissingFileError(path)
    try:
        frame = pd.read_csv(io.StringIO(read_utf8(path)), dtype={"type": str})
    except pd.errors.EmptyDataError:
        raise ParseError(path, 1, "empty file, expected a header row") from None
    if list(frame.columns) != NOTE_TYPE_COLUMNS:
        raise ParseError(path, 1, f"expected header {','.join(NOTE_TYPE_COLUMNS)}")

    tags: Dict[int, NoteType] = {}
    for row, (note_id, tag) in enumerate(zip(frame["note_id"], frame["type"]), start=2):
        try:
            tags[int(note_id)] = NoteType(str(tag).strip())
        except ValueError:
            raise ParseError(path, row, f"unknown note type {tag!r}") from None
    return tags


def read_layout(path: Path) -> PageLayout:
    if not path.is_file():
        raise MissingFileError(path)
    try:
        doc = LayoutFile.model_validate_json(read_utf8(path))
    except ValidationError as e:
        raise DataValidationError(f"{path}: {e}") from e
    return layout_from_file(doc)


def layout_from_file(doc: LayoutFile) -> PageLayout:
    pages = tuple(
        PageSpec(
            page=entry.page,
            page_w=entry.w,
            page_h=entry.h,
            passages=tuple(
                Passage(p.id, entry.page, p.x, p.y, p.w, p.h) for p in entry.passages
            ),
        )
        for entry in sorted(doc.pages, key=lambda e: e.page)
    )
    return PageLayout(pages)


def layout_to_file(layout: PageLayout) -> LayoutFile:
    return LayoutFile(
        pages=[
            PageEntry(
                page=spec.page,
                w=spec.page_w,
                h=spec.page_h,
                passages=[
                    PassageEntry(id=p.passage_id, x=p.x, y=p.y, w=p.w, h=p.h)
                    for p in spec.passages
                ],
            )
            for spec in layout.pages
        ]
    )


def write_layout(layout: PageLayout, path: Path) -> None:
    path.write_text(layout_to_file(layout).model_dump_json(indent=2) + "\n", encoding="utf-8")


def read_page_bitmaps(pages_dir: Path, gap_threshold: int = 20) -> PageLayout:
    """segment `page_NNN.pbm` bitmaps into a layout when no layout.json exists."""
    specs = []
    next_id = 0
    for path in sorted(pages_dir.glob("page_*.pbm")):
        page = int(path.stem.split("_")[-1])
        bitmap = read_pbm(path)
        blocks = segment_page_blocks(bitmap, gap_threshold, page=page, first_id=next_id)
        next_id += len(blocks)
        specs.append(PageSpec(page, bitmap.shape[1], bitmap.shape[0], tuple(blocks)))
        logger.info("segmented %s into %d passages", path.name, len(blocks))

    if not specs:
        raise MissingFileError(pages_dir / "page_001.pbm")
    return PageLayout(tuple(specs))


def _check_sorted(times: Sequence[int], what: str) -> None:
    if len(times) and np.any(np.diff(np.asarray(times, dtype=np.int64)) < 0):
        raise DataValidationError(f"non-monotonic timestamps in {what}")


def normalize_scrolls(scrolls: Sequence[ScrollEvent]) -> List[ScrollEvent]:
    """keep the last event per timestamp and make sure one exists at t=0."""
    deduped: Dict[int, ScrollEvent] = {}
    for event in scrolls:
        deduped[event.t] = event
    ordered = [deduped[t] for t in sorted(deduped)]
    if not ordered or ordered[0].t != 0:
        ordered.insert(0, ScrollEvent(0, 1, 0.0))
    return ordered


def build_session(
    participant_id: str,
    gaze: Sequence[GazeSample],
    scrolls: Sequence[ScrollEvent],
    layout: PageLayout,
    viewport: Viewport,
    audio,
    ground_truth: Optional[Mapping[int, FrozenSet[int]]] = None,
    note_types: Optional[Mapping[int, NoteType]] = None,
) -> Session:
    """validate raw streams and assemble an immutable Session.

    Raises:
        DataValidationError: any invariant of the session model is broken
    """
    if not gaze:
        raise DataValidationError("no gaze samples")
    if gaze[0].t < 0 or (scrolls and min(e.t for e in scrolls) < 0):
        raise DataValidationError("negative timestamp")
    _check_sorted([s.t for s in gaze], "gaze")
    _check_sorted([e.t for e in scrolls], "scroll")
    if viewport.width <= 0 or viewport.height <= 0:
        raise DataValidationError("viewport dimensions must be positive")

    for event in scrolls:
        if event.page < 1 or event.scroll_y < 0:
            raise DataValidationError(f"bad scroll event at t={event.t}")
        if not layout.has_page(event.page):
            raise DataValidationError(f"scroll event at t={event.t} names unknown page {event.page}")

    if ground_truth is not None:
        for note_id, passages in ground_truth.items():
            unknown = [p for p in passages if not layout.has_passage(p)]
            if unknown:
                raise DataValidationError(
                    f"labels for note {note_id} name unknown passages {sorted(unknown)}"
                )

    return Session(
        participant_id=participant_id,
        gaze=tuple(gaze),
        scrolls=tuple(normalize_scrolls(scrolls)),
        layout=layout,
        viewport=viewport,
        audio=audio,
        ground_truth=dict(ground_truth) if ground_truth is not None else None,
        note_types=dict(note_types) if note_types is not None else None,
    )


def load_session(dir_path: Path) -> Session:
    """load and validate a session directory.

    Args:
        dir_path (Path): session directory

    Returns:
        Session: time-sorted streams with a scroll event at t=0

    Raises:
        MissingFileError, ParseError, DataValidationError
    """
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise MissingFileError(dir_path)

    meta_path = dir_path / "meta.json"
    if not meta_path.is_file():
        raise MissingFileError(meta_path)
    try:
        meta = SessionMeta.model_validate_json(read_utf8(meta_path))
    except ValidationError as e:
        raise DataValidationError(f"{meta_path}: {e}") from e

    if (dir_path / "layout.json").is_file():
        layout = read_layout(dir_path / "layout.json")
    elif (dir_path / "pages").is_dir():
        layout = read_page_bitmaps(dir_path / "pages")
    else:
        raise MissingFileError(dir_path / "layout.json")

    if (dir_path / "envelope.csv").is_file():
        audio = read_envelope(dir_path / "envelope.csv")
    elif (dir_path / "audio.wav").is_file():
        audio = dir_path / "audio.wav"
    else:
        raise MissingFileError(dir_path / "envelope.csv")

    labels_path = dir_path / "labels.csv"
    types_path = dir_path / "note_types.csv"

    session = build_session(
        participant_id=meta.participant_id,
        gaze=read_gaze(dir_path / "gaze.csv"),
        scrolls=read_scrolls(dir_path / "scroll.csv"),
        layout=layout,
        viewport=Viewport(meta.viewport_w, meta.viewport_h),
        audio=audio,
        ground_truth=read_labels(labels_path) if labels_path.is_file() else None,
        note_types=read_note_types(types_path) if types_path.is_file() else None,
    )
    logger.debug(
        "loaded %s: %d gaze samples, %d scroll events, %d passages",
        session.participant_id,
        len(session.gaze),
        len(session.scrolls),
        len(session.layout),
    )
    return session


def save_session(session: Session, dir_path: Path) -> None:
    """write a session directory that `load_session` reads back unchanged."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)

    meta = SessionMeta(
        participant_id=session.participant_id,
        viewport_w=session.viewport.width,
        viewport_h=session.viewport.height,
    )
    (dir_path / "meta.json").write_text(meta.model_dump_json(indent=2) + "\n", encoding="utf-8")
    write_layout(session.layout, dir_path / "layout.json")

    pd.DataFrame(
        {
            "t_ms": [s.t for s in session.gaze],
            "x_px": np.array([s.x for s in session.gaze], dtype=np.float64),
            "y_px": np.array([s.y for s in session.gaze], dtype=np.float64),
        }
    ).to_csv(dir_path / "gaze.csv", index=False)

    pd.DataFrame(
        {
            "t_ms": [e.t for e in session.scrolls],
            "page": [e.page for e in session.scrolls],
            "scroll_y_px": np.array([e.scroll_y for e in session.scrolls], dtype=np.float64),
        }
    ).to_csv(dir_path / "scroll.csv", index=False)

    if isinstance(session.audio, Envelope):
        write_envelope(session.audio, dir_path / "envelope.csv")
    elif Path(session.audio).resolve() != (dir_path / "audio.wav").resolve():
        shutil.copyfile(session.audio, dir_path / "audio.wav")

    if session.ground_truth is not None:
        pairs = sorted(
            (note_id, passage_id)
            for note_id, passages in session.ground_truth.items()
            for passage_id in passages
        )
        pd.DataFrame(pairs, columns=LABEL_COLUMNS).to_csv(dir_path / "labels.csv", index=False)

    if session.note_types is not None:
        write_note_types(session.note_types, dir_path / "note_types.csv")

    logger.debug("saved session %s to %s", session.participant_id, dir_path)


def write_envelope(envelope: Envelope, path: Path) -> None:
    pd.DataFrame({"t_ms": envelope.times, "db": envelope.levels}).to_csv(path, index=False)


def write_note_types(note_types: Mapping[int, NoteType], path: Path) -> None:
    rows = [(note_id, note_types[note_id].value) for note_id in sorted(note_types)]
    pd.DataFrame(rows, columns=NOTE_TYPE_COLUMNS).to_csv(path, index=False)


def validate_session(session: Session, cfg: SessionConfig = SessionConfig()) -> List[str]:
    """report non-fatal data quality issues; never mutates the session.

    Args:
        session (Session): loaded session
        cfg (SessionConfig): gap and off-screen limits

    Returns:
        List[str]: one message per issue, empty when clean
    """
    warnings: List[str] = []

    times = np.fromiter((s.t for s in session.gaze), dtype=np.int64, count=len(session.gaze))
    gaps = np.diff(times)
    for i in np.flatnonzero(gaps > cfg.max_gaze_gap_ms):
        warnings.append(
            f"gaze gap: {int(gaps[i])} ms without samples after t={int(times[i])}"
        )

    off = sum(1 for s in session.gaze if not session.viewport.contains(s.x, s.y))
    ratio = off / len(session.gaze) if session.gaze else 0.0
    if ratio > cfg.max_offscreen_ratio:
        warnings.append(
            f"off-screen ratio: {ratio:.1%} of gaze samples outside the viewport"
        )

    for message in warnings:
        logger.warning("%s: %s", session.participant_id, message)
    return warnings
