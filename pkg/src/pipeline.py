import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from audio_notes import compute_roas, extract_voice_notes, session_envelope
from baselines import fixation_baseline, position_baseline
from config import PipelineConfig
from ensemble import TrainedForest, predict_proba
from errors import MissingFileError, NoVisiblePassagesError
from gaze_events import passage_events, window, write_fixations
from layout_map import map_gaze_to_document, scroll_state_at, visible_passages
from models.features import Label, PassageFeatureVector
from models.gaze import DocGazeSample
from models.notes import RegionOfAnalysis, VoiceNote
from models.prediction import AnchorPrediction, Strategy
from models.session import Session
from passage_features import candidate_passages, featurize_roa
from session_io import load_session, validate_session

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SessionAnalysis:
    """everything the strategies need from one session.

    Attributes:
        session (Session): the loaded session
        doc_gaze (Tuple[DocGazeSample, ...]): gaze in document coordinates
        notes (Tuple[VoiceNote, ...]): extracted utterances
        roas (Tuple[RegionOfAnalysis, ...]): one region per note
        rows (Tuple[PassageFeatureVector, ...]): feature rows of every note
    """

    session: Session
    doc_gaze: Tuple[DocGazeSample, ...]
    notes: Tuple[VoiceNote, ...]
    roas: Tuple[RegionOfAnalysis, ...]
    rows: Tuple[PassageFeatureVector, ...]

    @property
    def participant_id(self) -> str:
        return self.session.participant_id

    def candidates(self, note_id: int) -> List[int]:
        return [r.passage_id for r in self.rows if r.note_id == note_id]


def analyze_session(session: Session, cfg: PipelineConfig = PipelineConfig()) -> SessionAnalysis:
    """segment notes and featurize every note's region of analysis."""
    validate_session(session, cfg.session)
    doc_gaze = map_gaze_to_document(session.gaze, session.scrolls, session.viewport, session.layout)
    notes = extract_voice_notes(session_envelope(session, cfg.audio), cfg.audio)
    roas = compute_roas(notes)

    rows: List[PassageFeatureVector] = []
    for note, roa in zip(notes, roas):
        fixations, saccades = passage_events(
            doc_gaze, session.layout, cfg.gaze.pipeline_idt, roa.roa_start, roa.roa_end
        )
        at_start = visible_passages(
            session.layout, scroll_state_at(session.scrolls, note.start), session.viewport
        )
        candidates = candidate_passages(
            window(doc_gaze, roa.roa_start, roa.roa_end), fixations, session.layout, at_start
        )
        rows.extend(
            featurize_roa(
                roa,
                note.start,
                fixations,
                saccades,
                session.layout,
                candidates=candidates,
                participant_id=session.participant_id,
                true_passages=set(session.true_passages(note.note_id)) if session.has_labels else None,
                note_type=(session.note_types or {}).get(note.note_id),
            )
        )
        logger.debug(
            "%s note %d: %d fixations, %d candidates",
            session.participant_id,
            note.note_id,
            len(fixations),
            len(candidates),
        )

    if session.has_labels:
        extracted = {n.note_id for n in notes}
        never_extracted = set(session.ground_truth) - extracted
        if never_extracted:
            logger.warning(
                "%s: labels name %d notes the audio did not yield: %s",
                session.participant_id,
                len(never_extracted),
                sorted(never_extracted),
            )
        unlabelled = extracted - set(session.ground_truth)
        if unlabelled:
            logger.warning(
                "%s: %d extracted notes have no labels and train nothing: %s",
                session.participant_id,
                len(unlabelled),
                sorted(unlabelled),
            )

    logger.info("%s: %d notes, %d feature rows", session.participant_id, len(notes), len(rows))
    return SessionAnalysis(session, tuple(doc_gaze), tuple(notes), tuple(roas), tuple(rows))


def session_dirs(root: Path) -> List[Path]:
    """a session directory itself, or its session subdirectories by name."""
    root = Path(root)
    if (root / "meta.json").is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / "meta.json").is_file()) if root.is_dir() else []
    if not dirs:
        raise MissingFileError(root / "meta.json")
    return dirs


def _load_and_analyze(path: Path, cfg: PipelineConfig) -> SessionAnalysis:
    return analyze_session(load_session(path), cfg)


def analyze_corpus(root: Path, cfg: PipelineConfig = PipelineConfig(), n_jobs: int = 1) -> List[SessionAnalysis]:
    return Parallel(n_jobs=n_jobs)(delayed(_load_and_analyze)(p, cfg) for p in session_dirs(root))


def learned_predictions(
    model: TrainedForest, rows: Sequence[PassageFeatureVector], threshold: float = 0.5
) -> List[AnchorPrediction]:
    scores = predict_proba(model, list(rows)) if rows else np.zeros(0)
    return [
        AnchorPrediction(
            strategy=Strategy.LEARNED,
            participant_id=r.participant_id,
            note_id=r.note_id,
            passage_id=r.passage_id,
            score=float(s),
            label=Label.ANNOTATED if s >= threshold else Label.NOT_ANNOTATED,
        )
        for r, s in zip(rows, scores)
    ]


def baseline_predictions(
    analysis: SessionAnalysis, strategy: Strategy, cfg: PipelineConfig = PipelineConfig()
) -> List[AnchorPrediction]:
    """run a comparison strategy over every note of an analyzed session.

    notes with nothing on screen at their start get no position rows.
    """
    session = analysis.session
    out: List[AnchorPrediction] = []
    for note in analysis.notes:
        if strategy is Strategy.POSITION:
            try:
                out.extend(
                    position_baseline(
                        note, session.scrolls, session.layout, session.viewport, session.participant_id
                    )
                )
            except NoVisiblePassagesError as e:
                logger.warning("%s: %s", session.participant_id, e)
        elif strategy is Strategy.FIXATION:
            out.extend(
                fixation_baseline(
                    note,
                    analysis.doc_gaze,
                    session.layout,
                    cfg.gaze.baseline_idt,
                    candidates=analysis.candidates(note.note_id),
                    participant_id=session.participant_id,
                )
            )
        else:
            raise ValueError(f"{strategy.value} is not a baseline strategy")
    return out


def all_rows(analyses: Sequence[SessionAnalysis]) -> List[PassageFeatureVector]:
    return [r for a in analyses for r in a.rows]


def dump_fixations(analysis: SessionAnalysis, path: Path, cfg: PipelineConfig = PipelineConfig()) -> int:
    """write every pipeline fixation of the session, not just those inside notes."""
    gaze = analysis.doc_gaze
    if not gaze:
        write_fixations([], path)
        return 0
    fixations, _ = passage_events(gaze, analysis.session.layout, cfg.gaze.pipeline_idt, gaze[0].t, gaze[-1].t)
    write_fixations(fixations, path)
    return len(fixations)


def passage_sizes(analyses: Sequence[SessionAnalysis]) -> Dict[Tuple[str, int], Tuple[float, float]]:
    """(participant, passage) -> (width, height) over every analysed session."""
    return {
        (a.participant_id, p.passage_id): (p.w, p.h)
        for a in analyses
        for p in a.session.layout.iter_passages()
    }
