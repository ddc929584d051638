"""Synthetic readers that take voice notes while reading.

Each participant reads through a document passage by passage, skimming
ordinary passages and reading the passages that prompt a note more
carefully (shorter saccades, longer fixations, line regressions). While
speaking, the reader spends the note type's adherence share of the
utterance on the target passage(s) and the rest wandering over the visible
passages or away from the screen.
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.io import wavfile

from config import SimulatorConfig
from errors import LayoutTooSmallError, TooFewParticipantsError
from layout_map import visible_passages
from models.gaze import GazeSample, ScrollEvent
from models.layout import PageLayout, PageSpec, Passage
from models.notes import Envelope, NoteType, VoiceNote
from models.session import Session, Viewport
from session_io import build_session, save_session

logger = logging.getLogger(__name__)

PAGE_MARGIN_PX = 64
SIDE_MARGIN_PX = 120
PASSAGE_GAP_PX = 48
MIN_SACCADE_PX = 18.0
MIN_FIXATION_MS = 130.0
PAGE_TURN_MS = 250
LOOK_AWAY_TRANSIT_MS = 40
SKIM_LINES = 2
CAREFUL_LINES = 2
NOISE_DB = -60.0
SPEECH_DB = -20.0
FRAME_MS = 10
MIN_PAUSE_MS = 100
MAX_PAUSE_MS = 290
PAUSE_EDGE_MS = 500
PAUSE_SPACING_MS = 200


def generate_layout(n_pages: int, cfg: SimulatorConfig = SimulatorConfig()) -> PageLayout:
    """evenly spaced single-column passages, `passages_per_page` per page.

    Raises:
        LayoutTooSmallError: the page cannot hold a line of text per passage
    """
    n = cfg.passages_per_page
    h = (cfg.page_h - 2 * PAGE_MARGIN_PX - (n - 1) * PASSAGE_GAP_PX) / n
    w = cfg.page_w - 2 * SIDE_MARGIN_PX
    if n_pages < 1 or h < cfg.line_height_px or w < 4 * MIN_SACCADE_PX:
        raise LayoutTooSmallError(
            f"{n_pages} pages of {cfg.page_w}x{cfg.page_h} cannot hold {n} passages each"
        )

    pages = []
    for page in range(1, n_pages + 1):
        first = (page - 1) * n
        passages = tuple(
            Passage(first + k, page, float(SIDE_MARGIN_PX), PAGE_MARGIN_PX + k * (h + PASSAGE_GAP_PX), w, h)
            for k in range(n)
        )
        pages.append(PageSpec(page, float(cfg.page_w), float(cfg.page_h), passages))
    return PageLayout(tuple(pages))


def pages_for(n_notes: int, cfg: SimulatorConfig = SimulatorConfig()) -> int:
    # at most two skimmed passages and three targets per note
    return math.ceil((5 * n_notes + 1) / cfg.passages_per_page)


def derive_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SimulatedParticipant:
    """one generated session and what was injected into it.

    Attributes:
        session (Session): labelled session with note types
        notes (Tuple[VoiceNote, ...]): utterances written into the envelope
        injected_fixations (int): on-screen fixations the reader made
        away_ms (Tuple[int, ...]): per note, utterance time budgeted off the targets
    """

    session: Session
    notes: Tuple[VoiceNote, ...]
    injected_fixations: int
    away_ms: Tuple[int, ...]


@dataclass(frozen=True)
class SimCorpus:
    participants: Tuple[SimulatedParticipant, ...]
    seed: int

    @property
    def sessions(self) -> List[Session]:
        return [p.session for p in self.participants]

    @property
    def n_notes(self) -> int:
        return sum(len(p.notes) for p in self.participants)


class _Reader:
    """moves one synthetic gaze point through a document, keeping a clock."""

    def __init__(
        self, layout: PageLayout, viewport: Viewport, cfg: SimulatorConfig, rng: np.random.Generator
    ) -> None:
        self.layout = layout
        self.viewport = viewport
        self.cfg = cfg
        self.rng = rng
        self.t = 0
        self.page = layout.pages[0].page
        self.scroll_y = 0.0
        self.scrolls: List[ScrollEvent] = [ScrollEvent(0, self.page, 0.0)]
        # (start, end, page, x, y, on_screen); off-screen rows hold screen coordinates
        self.dwells: List[Tuple[int, int, int, float, float, bool]] = []
        self.pos: Optional[Tuple[int, float, float]] = None

    def _step(self, careful: bool) -> float:
        scale = self.cfg.careful_saccade_scale if careful else 1.0
        length = self.rng.normal(self.cfg.saccade_length_mean_px * scale, self.cfg.saccade_length_sd_px * scale)
        return max(MIN_SACCADE_PX, float(length))

    def _duration(self, careful: bool) -> int:
        d = max(MIN_FIXATION_MS, self.rng.normal(self.cfg.fixation_duration_mean_ms, self.cfg.fixation_duration_sd_ms))
        if careful:
            d *= self.cfg.careful_fixation_scale
        return int(round(d))

    def _follow(self, page: int, y: float) -> None:
        # keep the current line near a third of the way down the viewport
        vh = self.viewport.height
        top = y - self.scroll_y
        if page == self.page and 0.15 * vh <= top <= 0.66 * vh:
            return
        limit = max(0.0, self.layout.page(page).page_h - vh)
        scroll_y = float(min(max(y - vh / 3.0, 0.0), limit))
        if page == self.page and scroll_y == self.scroll_y:
            return
        self.page, self.scroll_y = page, scroll_y
        event = ScrollEvent(self.t, page, scroll_y)
        if self.scrolls[-1].t == self.t:
            self.scrolls[-1] = event
        else:
            self.scrolls.append(event)

    def fixate(self, page: int, x: float, y: float, careful: bool = False) -> None:
        if self.pos is None:
            transit = LOOK_AWAY_TRANSIT_MS if self.dwells else 0
        elif self.pos[0] != page:
            transit = PAGE_TURN_MS
        else:
            dist = math.hypot(x - self.pos[1], y - self.pos[2])
            transit = max(1, int(round(dist / self.cfg.reading_speed_px_per_ms)))
        self.t += transit
        self._follow(page, y)
        duration = self._duration(careful)
        self.dwells.append((self.t, self.t + duration, page, x, y, True))
        self.t += duration
        self.pos = (page, x, y)

    def look_away(self, duration: int) -> None:
        self.t += LOOK_AWAY_TRANSIT_MS
        x = float(self.rng.uniform(0, self.viewport.width))
        y = float(self.viewport.height + self.rng.uniform(100, 300))
        self.dwells.append((self.t, self.t + duration, self.page, x, y, False))
        self.t += duration
        self.pos = None

    def line_y(self, passage: Passage, line: int) -> float:
        return passage.y + self.cfg.line_height_px * (line + 0.5)

    def n_lines(self, passage: Passage) -> int:
        return max(1, int(passage.h // self.cfg.line_height_px))

    def read_line(
        self,
        passage: Passage,
        line: int,
        careful: bool = False,
        until: Optional[int] = None,
        max_fixations: Optional[int] = None,
        x: Optional[float] = None,
    ) -> None:
        y = self.line_y(passage, line)
        left, right = passage.x + 4.0, passage.right - 4.0
        x = left + float(self.rng.uniform(0, 16)) if x is None else x
        made = 0
        while x <= right:
            if until is not None and self.t >= until:
                return
            if max_fixations is not None and made >= max_fixations:
                return
            self.fixate(passage.page, x, y, careful)
            made += 1
            if careful and self.rng.random() < self.cfg.regression_prob:
                back = max(left, x - self._step(careful) * float(self.rng.uniform(1.0, 3.0)))
                self.fixate(passage.page, back, y, careful)
            x += self._step(careful)

    def read_lines(self, passage: Passage, count: int, careful: bool) -> None:
        n = self.n_lines(passage)
        count = min(count, n)
        first = int(self.rng.integers(0, n - count + 1))
        for line in range(first, first + count):
            self.read_line(passage, line, careful)

    def dwell_on(self, targets: Sequence[Passage], until: int) -> None:
        k = 0
        while self.t < until:
            passage = targets[k % len(targets)]
            self.read_line(passage, int(self.rng.integers(0, self.n_lines(passage))), True, until)
            k += 1

    def _glance_away(self, until: int) -> None:
        self.look_away(max(100, min(int(self.rng.integers(300, 1500)), until - self.t)))

    def wander(self, until: int) -> None:
        """glances spread uniformly over the visible passages, targets included."""
        while self.t < until:
            if self.rng.random() < self.cfg.look_away_share:
                self._glance_away(until)
                continue
            state = ScrollEvent(self.t, self.page, self.scroll_y)
            visible = visible_passages(self.layout, state, self.viewport)
            if not visible:
                self._glance_away(until)
                continue
            passage = self.layout.passage(int(self.rng.choice(visible)))
            line = self._visible_line(passage)
            start = passage.x + float(self.rng.uniform(4, max(5.0, passage.w / 2)))
            self.read_line(passage, line, False, until, int(self.rng.integers(2, 7)), start)

    def speak(self, targets: Sequence[Passage], adherence: float, until: int) -> int:
        """gaze while talking: a (1 - adherence) share of the utterance goes to
        wandering, split into excursions between stretches on the targets.

        Returns:
            int: ms budgeted away from the targets
        """
        span = until - self.t
        away = int(round((1.0 - adherence) * span))
        if away > 0:
            n = int(min(3, max(1, away // 1000)))
            excursions = self.rng.dirichlet(np.ones(n)) * away
            stays = self.rng.dirichlet(np.ones(n + 1)) * (span - away)
            for stay, excursion in zip(stays, excursions):
                self.dwell_on(targets, self.t + int(stay))
                self.wander(self.t + max(1, int(excursion)))
        self.dwell_on(targets, until)
        return away

    def _visible_line(self, passage: Passage) -> int:
        top, bottom = self.scroll_y, self.scroll_y + self.viewport.height
        lines = [k for k in range(self.n_lines(passage)) if top <= self.line_y(passage, k) < bottom]
        return int(self.rng.choice(lines)) if lines else 0

    def samples(self, end: int) -> List[GazeSample]:
        """gaze sampled at the configured rate with Gaussian jitter, in screen space."""
        rate = self.cfg.sample_rate_hz
        n = int(end * rate / 1000.0) + 1
        times = np.floor(np.arange(n) * 1000.0 / rate).astype(np.int64)

        d = np.array([row[:5] for row in self.dwells], dtype=np.float64)
        starts, ends, pages, xs, ys = d[:, 0].astype(np.int64), d[:, 1].astype(np.int64), d[:, 2], d[:, 3], d[:, 4]
        on = np.array([row[5] for row in self.dwells], dtype=bool)

        idx = np.maximum(np.searchsorted(starts, times, side="right") - 1, 0)
        nxt = np.minimum(idx + 1, len(starts) - 1)
        in_dwell = times < ends[idx]
        gap = starts[nxt] - ends[idx]
        frac = np.where(gap > 0, (times - ends[idx]) / np.maximum(gap, 1), 1.0)
        smooth = (pages[idx] == pages[nxt]) & on[idx] & on[nxt]

        px = np.where(in_dwell, xs[idx], np.where(smooth, xs[idx] + frac * (xs[nxt] - xs[idx]), xs[nxt]))
        py = np.where(in_dwell, ys[idx], np.where(smooth, ys[idx] + frac * (ys[nxt] - ys[idx]), ys[nxt]))
        visible = np.where(in_dwell, on[idx], on[nxt])

        scroll_t = np.array([e.t for e in self.scrolls], dtype=np.int64)
        scroll_y = np.array([e.scroll_y for e in self.scrolls], dtype=np.float64)
        active = np.maximum(np.searchsorted(scroll_t, times, side="right") - 1, 0)

        jitter = self.rng.normal(0.0, self.cfg.gaze_jitter_px, size=(2, n))
        sx = np.where(visible, px + jitter[0], px)
        sy = np.where(visible, py - scroll_y[active] + jitter[1], py)
        sx, sy = np.round(sx, 2), np.round(sy, 2)
        return [GazeSample(int(t), float(x), float(y)) for t, x, y in zip(times, sx, sy)]


def _grid(t: int) -> int:
    return -(-t // FRAME_MS) * FRAME_MS


def synthesize_envelope(
    notes: Sequence[VoiceNote], end: int, cfg: SimulatorConfig, rng: np.random.Generator
) -> Envelope:
    """quiet room noise with speech-level frames inside every utterance.

    an utterance gets up to one pause per 3 s. each pause sits in its own
    slot of the utterance, so pauses never touch and each stays shorter
    than the note merge gap.
    """
    times = np.arange(end // FRAME_MS + 1, dtype=np.int64) * FRAME_MS
    levels = NOISE_DB + rng.normal(0.0, 1.5, size=len(times))
    for note in notes:
        inside = (times >= note.start) & (times < note.end)
        levels[inside] = SPEECH_DB + rng.normal(0.0, 2.0, size=int(inside.sum()))
        n_pauses = int(rng.integers(0, note.duration // 3000 + 1))
        usable = note.duration - 2 * PAUSE_EDGE_MS
        if n_pauses == 0 or usable <= 0:
            continue
        slot = usable // n_pauses
        for k in range(n_pauses):
            length = int(rng.integers(MIN_PAUSE_MS // FRAME_MS, MAX_PAUSE_MS // FRAME_MS + 1)) * FRAME_MS
            room = slot - length - PAUSE_SPACING_MS
            if room <= 0:
                continue
            at = _grid(note.start + PAUSE_EDGE_MS + k * slot + int(rng.integers(0, room)))
            pause = (times >= at) & (times < at + length)
            levels[pause] = NOISE_DB + rng.normal(0.0, 1.5, size=int(pause.sum()))
    return Envelope(times=times, levels=levels)


def synthesize_waveform(env: Envelope, rate_hz: int, rng: np.random.Generator) -> np.ndarray:
    """16-bit mono PCM whose frame RMS follows the envelope levels."""
    frame_len = rate_hz * FRAME_MS // 1000
    amplitude = np.repeat(10.0 ** (env.levels / 20.0), frame_len)
    signal = rng.standard_normal(len(amplitude)) * amplitude
    return np.clip(np.round(signal * 32767.0), -32768, 32767).astype(np.int16)


def simulate_participant(
    layout: PageLayout,
    cfg: SimulatorConfig = SimulatorConfig(),
    n_notes: Optional[int] = None,
    seed: int = 0,
    participant_id: str = "P01",
) -> SimulatedParticipant:
    """generate one labelled reading session with `n_notes` voice notes.

    Args:
        layout (PageLayout): document to read, at least two passages
        cfg (SimulatorConfig): behavior profile and display sizes
        n_notes (Optional[int]): notes to take, default cfg.notes_per_participant
        seed (int): seed of this participant's generator
        participant_id (str): id written into the session

    Returns:
        SimulatedParticipant: session, injected notes and fixation count

    Raises:
        LayoutTooSmallError: fewer than two passages
    """
    n_notes = cfg.notes_per_participant if n_notes is None else n_notes
    if n_notes < 1:
        raise ValueError("n_notes must be at least 1")
    order = sorted(layout.iter_passages(), key=lambda p: (p.page, p.y, p.x))
    if len(order) < 2:
        raise LayoutTooSmallError(f"layout has {len(order)} passages, need at least 2")

    rng = np.random.default_rng(seed)
    viewport = Viewport(cfg.viewport_w, cfg.viewport_h)
    reader = _Reader(layout, viewport, cfg, rng)

    type_names = list(cfg.type_mix)
    weights = np.array([cfg.type_mix[name] for name in type_names])
    drawn = rng.choice(len(type_names), size=n_notes, p=weights / weights.sum())

    notes: List[VoiceNote] = []
    truth: Dict[int, FrozenSet[int]] = {}
    tags: Dict[int, NoteType] = {}
    away: List[int] = []
    cursor = 0
    for note_id, type_index in enumerate(drawn):
        note_type = NoteType(type_names[type_index])
        n_targets = int(rng.integers(2, 4)) if note_type is NoteType.SUMMARY else 1
        n_targets = min(n_targets, len(order))
        n_plain = min(int(rng.integers(1, 3)), len(order) - n_targets)
        if cursor + n_plain + n_targets > len(order):
            cursor = 0

        plain = order[cursor : cursor + n_plain]
        targets = order[cursor + n_plain : cursor + n_plain + n_targets]
        cursor += n_plain + n_targets

        for passage in plain:
            reader.read_lines(passage, SKIM_LINES, careful=False)
        for passage in targets:
            reader.read_lines(passage, CAREFUL_LINES, careful=True)

        lo, hi = cfg.note_length_ms[note_type.value]
        start = _grid(reader.t)
        end = start + _grid(int(rng.integers(lo, hi + 1)))
        target_ids = frozenset(p.passage_id for p in targets)
        away.append(reader.speak(targets, cfg.adherence[note_type.value], end))

        notes.append(VoiceNote(note_id, start, end))
        truth[note_id] = target_ids
        tags[note_id] = note_type

    # trailing silence after the last note
    tail = order[cursor % len(order)]
    reader.read_line(tail, 0, max_fixations=8)
    end = _grid(reader.t + 500)

    envelope = synthesize_envelope(notes, end, cfg, rng)
    session = build_session(
        participant_id=participant_id,
        gaze=reader.samples(end),
        scrolls=reader.scrolls,
        layout=layout,
        viewport=viewport,
        audio=envelope,
        ground_truth=truth,
        note_types=tags,
    )
    injected = sum(1 for row in reader.dwells if row[5])
    logger.debug(
        "%s: %d notes, %d fixations, %d ms", participant_id, len(notes), injected, end
    )
    return SimulatedParticipant(session, tuple(notes), injected, tuple(away))


def participant_id(index: int) -> str:
    return f"P{index + 1:02d}"


def simulate_corpus(
    cfg: SimulatorConfig = SimulatorConfig(),
    layout: Optional[PageLayout] = None,
    n_jobs: int = 1,
) -> SimCorpus:
    """cfg.n_participants sessions on one shared document.

    participant i draws from derive_seed(cfg.seed, i), so any participant can
    be regenerated alone.

    Raises:
        TooFewParticipantsError: fewer than two participants
    """
    if cfg.n_participants < 2:
        raise TooFewParticipantsError(f"need at least 2 participants, got {cfg.n_participants}")
    layout = layout or generate_layout(pages_for(cfg.notes_per_participant, cfg), cfg)
    participants = Parallel(n_jobs=n_jobs)(
        delayed(simulate_participant)(
            layout, cfg, cfg.notes_per_participant, derive_seed(cfg.seed, i), participant_id(i)
        )
        for i in range(cfg.n_participants)
    )
    corpus = SimCorpus(tuple(participants), cfg.seed)
    logger.info("simulated %d participants, %d notes", len(participants), corpus.n_notes)
    return corpus


def write_corpus(corpus: SimCorpus, out_dir: Path, cfg: SimulatorConfig = SimulatorConfig()) -> List[Path]:
    """one session directory per participant; audio.wav instead of
    envelope.csv when cfg.waveform is set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for index, participant in enumerate(corpus.participants):
        session = participant.session
        target = out_dir / session.participant_id
        target.mkdir(parents=True, exist_ok=True)
        if cfg.waveform:
            rng = np.random.default_rng([corpus.seed, index, 1])
            wav = target / "audio.wav"
            wavfile.write(wav, cfg.waveform_rate_hz, synthesize_waveform(session.audio, cfg.waveform_rate_hz, rng))
            stale = target / "envelope.csv"
            if stale.exists():
                stale.unlink()
            session = replace(session, audio=wav)
        save_session(session, target)
        written.append(target)
    logger.info("wrote %d sessions to %s", len(written), out_dir)
    return written
