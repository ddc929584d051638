import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from errors import EmptyImageError, NoVisiblePassagesError
from models.gaze import DocGazeSample, GazeSample, ScrollEvent
from models.layout import PageLayout, Passage
from models.session import Viewport

logger = logging.getLogger(__name__)

MIN_BLOCK_PX = 4


def scroll_state_at(scrolls: Sequence[ScrollEvent], t: int) -> ScrollEvent:
    """latest scroll event with event.t <= t (the first event if t precedes all).

    Args:
        scrolls (Sequence[ScrollEvent]): events sorted by t, non-empty
        t (int): query time in ms

    Returns:
        ScrollEvent: viewport state in force at t
    """
    times = np.fromiter((e.t for e in scrolls), dtype=np.int64, count=len(scrolls))
    index = int(np.searchsorted(times, t, side="right")) - 1
    return scrolls[max(index, 0)]


def map_gaze_to_document(
    gaze: Sequence[GazeSample],
    scrolls: Sequence[ScrollEvent],
    viewport: Viewport,
    layout: Optional[PageLayout] = None,
) -> List[DocGazeSample]:
    """replay scrolling to move screen gaze into document coordinates.

    each sample uses the latest scroll event at or before it. samples outside
    the viewport, or outside their page when a layout is given, are kept but
    flagged off-screen.

    Args:
        gaze (Sequence[GazeSample]): screen samples sorted by t
        scrolls (Sequence[ScrollEvent]): viewport states sorted by t, non-empty
        viewport (Viewport): screen viewport size
        layout (Optional[PageLayout]): page rectangles for the on-page check

    Returns:
        List[DocGazeSample]: one mapped sample per input sample
    """
    if not gaze:
        return []

    scroll_times = np.fromiter((e.t for e in scrolls), dtype=np.int64, count=len(scrolls))
    gaze_times = np.fromiter((s.t for s in gaze), dtype=np.int64, count=len(gaze))
    active = np.maximum(np.searchsorted(scroll_times, gaze_times, side="right") - 1, 0)

    mapped: List[DocGazeSample] = []
    for sample, index in zip(gaze, active.tolist()):
        event = scrolls[index]
        doc_y = sample.y + event.scroll_y
        on_screen = viewport.contains(sample.x, sample.y)
        if on_screen and layout is not None:
            on_screen = layout.has_page(event.page) and layout.page(event.page).contains(
                sample.x, doc_y
            )
        mapped.append(DocGazeSample(sample.t, event.page, sample.x, doc_y, on_screen))
    return mapped


def visible_passages(layout: PageLayout, scroll: ScrollEvent, viewport: Viewport) -> List[int]:
    """passages on the shown page intersecting the viewport, topmost first.

    Raises:
        UnknownPageError: scroll.page is not in the layout
    """
    top = scroll.scroll_y
    bottom = scroll.scroll_y + viewport.height
    shown = [p for p in layout.page(scroll.page).passages if p.y < bottom and p.bottom > top]
    return [p.passage_id for p in sorted(shown, key=lambda p: (p.y, p.passage_id))]


def topmost_visible(layout: PageLayout, scroll: ScrollEvent, viewport: Viewport) -> int:
    ids = visible_passages(layout, scroll, viewport)
    if not ids:
        raise NoVisiblePassagesError(
            f"no passage visible on page {scroll.page} at scroll {scroll.scroll_y}"
        )
    return ids[0]


def _ink_runs(profile: np.ndarray) -> List[tuple]:
    """[start, stop) index runs where the projection profile has ink."""
    edges = np.diff(np.concatenate(([0], (profile > 0).astype(np.int8), [0])))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def _split(profile: np.ndarray, gap_threshold: int) -> List[tuple]:
    """merge ink runs whose separating whitespace is shorter than the threshold."""
    runs = _ink_runs(profile)
    if not runs:
        return []
    groups = [list(runs[0])]
    for start, stop in runs[1:]:
        if start - groups[-1][1] >= gap_threshold:
            groups.append([start, stop])
        else:
            groups[-1][1] = stop
    return [tuple(g) for g in groups]


def _xy_cut(
    bitmap: np.ndarray,
    top: int,
    left: int,
    gap_threshold: int,
    horizontal_first: bool,
    boxes: List[tuple],
) -> None:
    rows = np.flatnonzero(bitmap.any(axis=1))
    cols = np.flatnonzero(bitmap.any(axis=0))
    if len(rows) == 0:
        return

    # tighten to the ink bounding box
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    region = bitmap[r0:r1, c0:c1]
    top, left = top + r0, left + c0

    for axis in ((0, 1) if horizontal_first else (1, 0)):
        profile = region.sum(axis=1 - axis)
        parts = _split(profile, gap_threshold)
        if len(parts) > 1:
            for start, stop in parts:
                if axis == 0:
                    _xy_cut(region[start:stop, :], top + start, left, gap_threshold, not horizontal_first, boxes)
                else:
                    _xy_cut(region[:, start:stop], top, left + start, gap_threshold, not horizontal_first, boxes)
            return

    boxes.append((top, left, region.shape[0], region.shape[1]))


def segment_page_blocks(
    bitmap: np.ndarray, gap_threshold: int, page: int = 1, first_id: int = 0
) -> List[Passage]:
    """recursive XY-cut of a binary page into passage rectangles.

    horizontal and vertical cuts alternate by depth; a region is cut wherever
    a whitespace band at least `gap_threshold` pixels wide separates ink.
    leaves are tight ink boxes; boxes under 4 px in either side are dropped.

    Args:
        bitmap (np.ndarray): 2-D array, truthy where there is ink
        gap_threshold (int): minimum whitespace run that separates blocks
        page (int): page index stamped on the passages
        first_id (int): id of the first emitted passage

    Returns:
        List[Passage]: rectangles in reading order (top to bottom, left to right)

    Raises:
        EmptyImageError: the bitmap has no pixels
    """
    if gap_threshold <= 0:
        raise ValueError("gap_threshold must be positive")
    ink = np.asarray(bitmap).astype(bool)
    if ink.ndim != 2 or ink.size == 0:
        raise EmptyImageError("page bitmap has no pixels")

    boxes: List[tuple] = []
    _xy_cut(ink, 0, 0, gap_threshold, True, boxes)
    kept = [b for b in boxes if b[2] >= MIN_BLOCK_PX and b[3] >= MIN_BLOCK_PX]
    kept.sort(key=lambda b: (b[0], b[1]))

    logger.debug("xy-cut found %d blocks, kept %d", len(boxes), len(kept))
    return [
        Passage(first_id + i, page, float(left), float(top), float(w), float(h))
        for i, (top, left, h, w) in enumerate(kept)
    ]


def read_pbm(path: Path) -> np.ndarray:
    """load a PBM page as a boolean ink mask (True = black)."""
    with Image.open(path) as image:
        return ~np.asarray(image.convert("1"), dtype=bool)


def write_pbm(ink: np.ndarray, path: Path) -> None:
    Image.fromarray(~np.asarray(ink, dtype=bool)).save(path, format="PPM")
