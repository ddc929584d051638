import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from scipy.io import wavfile

from config import AudioConfig
from errors import EmptyAudioError, MissingFileError
from models.notes import Envelope, RegionOfAnalysis, VoiceNote
from models.session import Session

logger = logging.getLogger(__name__)

SILENCE_FLOOR_DB = -120.0
NOTE_COLUMNS = ["note_id", "start_ms", "end_ms"]


def compute_envelope(samples: np.ndarray, sample_rate: float, frame_ms: int = 10) -> Envelope:
    """frame-wise RMS level in dBFS.

    integer PCM is scaled by its full-scale value; float PCM is taken as
    already normalized to [-1, 1]. a trailing partial frame still yields a point.

    Args:
        samples (np.ndarray): mono PCM samples
        sample_rate (float): samples per second
        frame_ms (int): frame length, hop equals frame

    Returns:
        Envelope: one point per frame, floored at -120 dBFS

    Raises:
        EmptyAudioError: no samples
    """
    if frame_ms <= 0:
        raise ValueError("frame_ms must be positive")
    samples = np.asarray(samples)
    if samples.size == 0:
        raise EmptyAudioError("no audio samples")

    if np.issubdtype(samples.dtype, np.integer):
        full_scale = float(2 ** (8 * samples.dtype.itemsize - 1))
        signal = samples.astype(np.float64) / full_scale
    else:
        signal = samples.astype(np.float64)

    frame_len = max(1, int(round(sample_rate * frame_ms / 1000.0)))
    n_frames = -(-len(signal) // frame_len)
    padded_sq = np.zeros(n_frames * frame_len)
    padded_sq[: len(signal)] = signal**2
    counts = np.full(n_frames, frame_len, dtype=np.float64)
    counts[-1] = len(signal) - (n_frames - 1) * frame_len

    rms = np.sqrt(padded_sq.reshape(n_frames, frame_len).sum(axis=1) / counts)
    with np.errstate(divide="ignore"):
        levels = 20.0 * np.log10(rms)
    levels = np.maximum(np.nan_to_num(levels, neginf=SILENCE_FLOOR_DB), SILENCE_FLOOR_DB)

    times = np.arange(n_frames, dtype=np.int64) * frame_ms
    return Envelope(times=times, levels=levels)


def read_wav(path: Path) -> Tuple[np.ndarray, int]:
    if not Path(path).is_file():
        raise MissingFileError(path)
    rate, data = wavfile.read(path)
    if data.ndim > 1:
        data = data[:, 0]
    return data, int(rate)


def session_envelope(session: Session, cfg: AudioConfig = AudioConfig()) -> Envelope:
    """inline envelopes pass through; WAV audio is framed here."""
    if isinstance(session.audio, Envelope):
        return session.audio
    data, rate = read_wav(session.audio)
    return compute_envelope(data, rate, cfg.frame_ms)


def threshold_for(env: Envelope, cfg: AudioConfig) -> float:
    if cfg.threshold_db_abs is not None:
        return cfg.threshold_db_abs
    floor = float(np.percentile(env.levels, cfg.floor_percentile))
    return floor + cfg.threshold_db_rel


def _frame_step(env: Envelope, cfg: AudioConfig) -> int:
    if len(env) < 2:
        return cfg.frame_ms
    return max(1, int(np.median(np.diff(env.times))))


def extract_voice_notes(env: Envelope, cfg: AudioConfig = AudioConfig()) -> List[VoiceNote]:
    """find utterances as runs of frames at or above the threshold.

    runs separated by less than `merge_gap_ms` are merged first, then runs
    shorter than `min_note_ms` are discarded.

    Args:
        env (Envelope): levels sorted by time
        cfg (AudioConfig): threshold, merge and minimum-length settings

    Returns:
        List[VoiceNote]: notes in time order with sequential ids
    """
    if len(env) == 0:
        return []

    step = _frame_step(env, cfg)
    voiced = env.levels >= threshold_for(env, cfg)
    if not voiced.any():
        return []

    # run boundaries from the 0/1 edges
    edges = np.diff(np.concatenate(([0], voiced.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1

    runs: List[List[int]] = []
    for i, j in zip(starts, stops):
        start = int(env.times[i])
        end = int(env.times[j]) + step
        if runs and start - runs[-1][1] < cfg.merge_gap_ms:
            runs[-1][1] = end
        else:
            runs.append([start, end])

    notes = [
        VoiceNote(note_id, start, end)
        for note_id, (start, end) in enumerate(
            (s, e) for s, e in runs if e - s >= cfg.min_note_ms
        )
    ]
    logger.debug("extracted %d voice notes from %d voiced runs", len(notes), len(runs))
    return notes


def compute_roas(notes: List[VoiceNote], session_start: int = 0) -> List[RegionOfAnalysis]:
    """one region per note, from the previous note's end to this note's end."""
    roas: List[RegionOfAnalysis] = []
    previous_end = session_start
    for note in notes:
        roas.append(RegionOfAnalysis(note.note_id, previous_end, note.end))
        previous_end = note.end
    return roas


def write_notes(notes: List[VoiceNote], path: Path) -> None:
    pd.DataFrame(
        [(n.note_id, n.start, n.end) for n in notes], columns=NOTE_COLUMNS
    ).to_csv(path, index=False)
    logger.info("wrote %d notes to %s", len(notes), path)
