import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from config import IdtConfig
from errors import NoPassagesOnPageError
from models.gaze import DocGazeSample, Fixation, Saccade
from models.layout import PageLayout

FIXATION_COLUMNS = ["start_ms", "end_ms", "cx", "cy", "page", "passage_id"]


def remove_outliers(samples: Sequence[DocGazeSample]) -> List[DocGazeSample]:
    """drop samples that fell outside the display area, keeping order."""
    return [s for s in samples if s.on_screen]


def window(samples: Sequence[DocGazeSample], start: int, end: int) -> List[DocGazeSample]:
    """samples with start <= t <= end; `samples` must be time-sorted."""
    times = np.fromiter((s.t for s in samples), dtype=np.int64, count=len(samples))
    lo = int(np.searchsorted(times, start, side="left"))
    hi = int(np.searchsorted(times, end, side="right"))
    return list(samples[lo:hi])


def _page_runs(pages: np.ndarray) -> List[Tuple[int, int]]:
    """[lo, hi) index ranges of consecutive samples on the same page."""
    if len(pages) == 0:
        return []
    cuts = np.flatnonzero(np.diff(pages) != 0) + 1
    bounds = np.concatenate(([0], cuts, [len(pages)]))
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def _idt_run(
    t: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    page: int,
    cfg: IdtConfig,
    out: List[Fixation],
) -> None:
    n = len(t)
    i = 0
    while i < n:
        # smallest window starting at i that spans the duration threshold
        j = int(np.searchsorted(t, t[i] + cfg.duration_threshold, side="left"))
        if j >= n:
            break

        x_lo, x_hi = float(x[i : j + 1].min()), float(x[i : j + 1].max())
        y_lo, y_hi = float(y[i : j + 1].min()), float(y[i : j + 1].max())
        if (x_hi - x_lo) + (y_hi - y_lo) > cfg.dispersion_threshold:
            i += 1
            continue

        # grow while the dispersion stays within the threshold
        while j + 1 < n:
            nx_lo, nx_hi = min(x_lo, x[j + 1]), max(x_hi, x[j + 1])
            ny_lo, ny_hi = min(y_lo, y[j + 1]), max(y_hi, y[j + 1])
            if (nx_hi - nx_lo) + (ny_hi - ny_lo) > cfg.dispersion_threshold:
                break
            x_lo, x_hi, y_lo, y_hi = nx_lo, nx_hi, ny_lo, ny_hi
            j += 1

        out.append(
            Fixation(
                start=int(t[i]),
                end=int(t[j]),
                cx=float(np.mean(x[i : j + 1])),
                cy=float(np.mean(y[i : j + 1])),
                page=page,
                n_samples=j - i + 1,
                dispersion=float((x_hi - x_lo) + (y_hi - y_lo)),
            )
        )
        i = j + 1


def detect_fixations(samples: Sequence[DocGazeSample], cfg: IdtConfig) -> List[Fixation]:
    """dispersion-threshold identification (I-DT).

    a window is grown from each start sample until its dispersion
    D = (max x - min x) + (max y - min y) exceeds the threshold; windows
    spanning at least the duration threshold become fixations with the
    member mean as centroid. a page change ends the current window.

    Args:
        samples (Sequence[DocGazeSample]): time-sorted, outliers removed
        cfg (IdtConfig): dispersion (px) and duration (ms) thresholds

    Returns:
        List[Fixation]: time-ordered, non-overlapping fixations
    """
    if not samples:
        return []

    t = np.fromiter((s.t for s in samples), dtype=np.int64, count=len(samples))
    x = np.fromiter((s.x for s in samples), dtype=np.float64, count=len(samples))
    y = np.fromiter((s.y for s in samples), dtype=np.float64, count=len(samples))
    pages = np.fromiter((s.page for s in samples), dtype=np.int64, count=len(samples))

    fixations: List[Fixation] = []
    for lo, hi in _page_runs(pages):
        _idt_run(t[lo:hi], x[lo:hi], y[lo:hi], int(pages[lo]), cfg, fixations)
    return fixations


def extract_saccades(fixations: Sequence[Fixation]) -> List[Saccade]:
    """n fixations give n-1 saccades, owned by the landing fixation's passage."""
    saccades: List[Saccade] = []
    for k in range(1, len(fixations)):
        prev, nxt = fixations[k - 1], fixations[k]
        length = math.hypot(nxt.cx - prev.cx, nxt.cy - prev.cy)
        duration = max(1, nxt.start - prev.end)
        saccades.append(
            Saccade(
                from_fix=k - 1,
                to_fix=k,
                length=length,
                duration=duration,
                velocity=length / duration,
                passage_id=nxt.passage_id,
            )
        )
    return saccades


def assign_to_passages(fixations: Sequence[Fixation], layout: PageLayout) -> List[Fixation]:
    """attach each fixation to the containing or nearest passage on its page.

    distance is centroid-to-rectangle euclidean (0 inside); ties go to the
    lowest passage id.

    Raises:
        NoPassagesOnPageError: a fixation's page has no passages
    """
    assigned: List[Fixation] = []
    for fixation in fixations:
        passages = layout.passages_on(fixation.page)
        if not passages:
            raise NoPassagesOnPageError(f"page {fixation.page} has no passages")
        nearest = min(
            passages, key=lambda p: (p.distance_to(fixation.cx, fixation.cy), p.passage_id)
        )
        assigned.append(fixation.assigned(nearest.passage_id))
    return assigned


def passage_events(
    samples: Sequence[DocGazeSample],
    layout: PageLayout,
    cfg: IdtConfig,
    start: int,
    end: int,
) -> Tuple[List[Fixation], List[Saccade]]:
    """fixations and saccades inside [start, end], assigned to passages.

    fixations on pages without passages are dropped before assignment.
    """
    clean = remove_outliers(window(samples, start, end))
    fixations = [f for f in detect_fixations(clean, cfg) if layout.passages_on(f.page)]
    fixations = assign_to_passages(fixations, layout)
    return fixations, extract_saccades(fixations)


def group_by_passage(fixations: Sequence[Fixation]) -> Dict[int, List[Fixation]]:
    grouped: Dict[int, List[Fixation]] = {}
    for fixation in fixations:
        grouped.setdefault(fixation.passage_id, []).append(fixation)
    return grouped


def write_fixations(fixations: Sequence[Fixation], path: Path) -> None:
    """debug dump of assigned fixations."""
    pd.DataFrame(
        [(f.start, f.end, f.cx, f.cy, f.page, f.passage_id) for f in fixations],
        columns=FIXATION_COLUMNS,
    ).to_csv(path, index=False)
