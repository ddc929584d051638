import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.stats import rankdata

from config import EvalConfig, ForestConfig
from ensemble import predict_proba, train_forest
from errors import (
    DataValidationError,
    LengthMismatchError,
    MissingFileError,
    SingleClassError,
    TooFewNotesError,
    TooFewParticipantsError,
    UnknownTagError,
    read_utf8,
)
from models.features import Label, PassageFeatureVector
from models.notes import NoteType
from models.prediction import AnchorPrediction

logger = logging.getLogger(__name__)

METRICS = ("precision", "recall", "f1", "auc", "hit_rate")


def precision_recall_f1(preds: Sequence[int], truth: Sequence[int]) -> Tuple[float, float, float]:
    """precision, recall and F1 of the positive class; 0 where undefined."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise LengthMismatchError(f"{len(preds)} predictions for {len(truth)} labels")

    tp = int(np.sum((preds == 1) & (truth == 1)))
    fp = int(np.sum((preds == 1) & (truth == 0)))
    fn = int(np.sum((preds == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def roc_auc(scores: Sequence[float], truth: Sequence[int]) -> float:
    """area under the ROC curve through the rank-sum statistic.

    equals the share of (positive, negative) pairs ranked correctly, with
    tied scores counting one half.

    Raises:
        LengthMismatchError: scores and labels differ in length
        SingleClassError: only one class present
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.shape != truth.shape:
        raise LengthMismatchError(f"{len(scores)} scores for {len(truth)} labels")

    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs both classes")

    ranks = rankdata(scores)
    return float((ranks[truth == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class ScoredRows:
    """aligned truth, score and decision per (participant, note, passage) row."""

    participant_ids: np.ndarray
    note_ids: np.ndarray
    passage_ids: np.ndarray
    truth: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    note_types: Tuple[Optional[NoteType], ...]

    def __len__(self) -> int:
        return len(self.truth)

    def subset(self, mask: np.ndarray) -> "ScoredRows":
        return ScoredRows(
            self.participant_ids[mask],
            self.note_ids[mask],
            self.passage_ids[mask],
            self.truth[mask],
            self.scores[mask],
            self.labels[mask],
            tuple(t for t, keep in zip(self.note_types, mask) if keep),
        )

    @classmethod
    def from_rows(
        cls, rows: Sequence[PassageFeatureVector], scores: Sequence[float], labels: Sequence[int]
    ) -> "ScoredRows":
        return cls(
            np.array([r.participant_id for r in rows], dtype=object),
            np.array([r.note_id for r in rows], dtype=np.int64),
            np.array([r.passage_id for r in rows], dtype=np.int64),
            np.array([r.label.as_int for r in rows], dtype=np.int64),
            np.asarray(scores, dtype=np.float64).reshape(len(rows)),
            np.asarray(labels, dtype=np.int64).reshape(len(rows)),
            tuple(r.note_type for r in rows),
        )

    @classmethod
    def concat(cls, parts: Sequence["ScoredRows"]) -> "ScoredRows":
        if not parts:
            return cls.from_rows([], [], [])
        return cls(
            *(np.concatenate([getattr(p, f) for p in parts]) for f in
              ("participant_ids", "note_ids", "passage_ids", "truth", "scores", "labels")),
            tuple(t for p in parts for t in p.note_types),
        )


def hit_rate(scored: ScoredRows) -> float:
    """share of notes whose top-scoring passage is a true passage.

    ties on the top score go to the lowest passage id.
    """
    if len(scored) == 0:
        return 0.0
    order = np.lexsort((scored.passage_ids, -scored.scores, scored.note_ids, scored.participant_ids.astype(str)))
    keys = list(zip(scored.participant_ids[order], scored.note_ids[order]))
    hits, notes, previous = 0, 0, None
    for key, truth in zip(keys, scored.truth[order]):
        if key != previous:
            notes += 1
            hits += int(truth == 1)
            previous = key
    return hits / notes


def _note_count(scored: ScoredRows) -> int:
    return len(set(zip(scored.participant_ids.tolist(), scored.note_ids.tolist())))


class MetricSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    hit_rate: float
    n_rows: int
    n_notes: int

    def get(self, metric: str) -> Optional[float]:
        return getattr(self, metric)


def score_metrics(scored: ScoredRows) -> MetricSet:
    """all metrics on one set of rows; AUC is None when a class is missing."""
    precision, recall, f1 = precision_recall_f1(scored.labels, scored.truth)
    try:
        auc = roc_auc(scored.scores, scored.truth)
    except SingleClassError:
        auc = None
    return MetricSet(
        precision=precision,
        recall=recall,
        f1=f1,
        auc=auc,
        hit_rate=hit_rate(scored),
        n_rows=len(scored),
        n_notes=_note_count(scored),
    )


PassageSizes = Mapping[Tuple[str, int], Tuple[float, float]]


class SizeStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    mean_w: Optional[float]
    sd_w: Optional[float]
    mean_h: Optional[float]
    sd_h: Optional[float]


class PassageSizeReport(BaseModel):
    """bounding-box sizes of annotated passages a strategy found and missed."""

    model_config = ConfigDict(frozen=True)

    found: SizeStats
    missed: SizeStats


def _size_stats(dims: np.ndarray) -> SizeStats:
    if len(dims) == 0:
        return SizeStats(n=0, mean_w=None, sd_w=None, mean_h=None, sd_h=None)
    sd = dims.std(axis=0, ddof=1) if len(dims) > 1 else np.zeros(2)
    mean = dims.mean(axis=0)
    return SizeStats(
        n=len(dims), mean_w=float(mean[0]), sd_w=float(sd[0]), mean_h=float(mean[1]), sd_h=float(sd[1])
    )


def passage_size_breakdown(scored: ScoredRows, sizes: PassageSizes) -> PassageSizeReport:
    """width and height of annotated passages, split by whether they were labelled Annotated.

    Args:
        scored (ScoredRows): held-out rows with decisions
        sizes (PassageSizes): (participant, passage) -> (width, height) in px

    Raises:
        DataValidationError: an annotated row's passage has no known size
    """
    positive = np.flatnonzero(scored.truth == 1)
    dims = np.zeros((len(positive), 2), dtype=np.float64)
    for k, i in enumerate(positive):
        key = (str(scored.participant_ids[i]), int(scored.passage_ids[i]))
        if key not in sizes:
            raise DataValidationError(f"no size for passage {key[1]} of {key[0]}")
        dims[k] = sizes[key]
    found = scored.labels[positive] == 1
    return PassageSizeReport(found=_size_stats(dims[found]), missed=_size_stats(dims[~found]))


class EvalReport(BaseModel):
    """metrics of one strategy under one protocol.

    `mean` and `sd` are taken across participants (sample SD, 0 for a single
    participant); AUC leaves out held-out units with one class, counted in
    `auc_skipped`. `pooled` scores all held-out rows together.
    """

    model_config = ConfigDict(frozen=True)

    strategy: str
    protocol: str
    per_participant: Dict[str, MetricSet]
    mean: Dict[str, Optional[float]]
    sd: Dict[str, Optional[float]]
    pooled: MetricSet
    folds: int
    folds_skipped: int = 0
    auc_skipped: int = 0
    per_note_type: Dict[str, MetricSet] = {}
    by_passage_size: Optional[PassageSizeReport] = None


def summarize(
    strategy: str,
    protocol: str,
    scored: ScoredRows,
    folds: int,
    folds_skipped: int = 0,
    with_types: bool = True,
    sizes: Optional[PassageSizes] = None,
) -> EvalReport:
    per_participant = {
        pid: score_metrics(scored.subset(scored.participant_ids == pid))
        for pid in sorted(set(scored.participant_ids.tolist()))
    }

    mean: Dict[str, Optional[float]] = {}
    sd: Dict[str, Optional[float]] = {}
    auc_skipped = 0
    for metric in METRICS:
        values = [m.get(metric) for m in per_participant.values()]
        present = np.array([v for v in values if v is not None], dtype=np.float64)
        if metric == "auc":
            auc_skipped = len(values) - len(present)
        mean[metric] = float(present.mean()) if len(present) else None
        sd[metric] = float(present.std(ddof=1)) if len(present) > 1 else (0.0 if len(present) else None)

    if auc_skipped:
        logger.warning("%s/%s: AUC skipped for %d single-class units", strategy, protocol, auc_skipped)

    per_type: Dict[str, MetricSet] = {}
    if with_types and len(scored):
        untagged = sum(1 for t in scored.note_types if t is None)
        if untagged == 0:
            per_type = per_note_type_report(scored)
        elif untagged < len(scored):
            logger.warning(
                "%s/%s: per-type table dropped, %d of %d rows carry no note type",
                strategy,
                protocol,
                untagged,
                len(scored),
            )

    return EvalReport(
        strategy=strategy,
        protocol=protocol,
        per_participant=per_participant,
        mean=mean,
        sd=sd,
        pooled=score_metrics(scored),
        folds=folds,
        folds_skipped=folds_skipped,
        auc_skipped=auc_skipped,
        per_note_type=per_type,
        by_passage_size=passage_size_breakdown(scored, sizes) if sizes is not None else None,
    )


def per_note_type_report(
    scored: ScoredRows, tags: Optional[Mapping[Tuple[str, int], Union[str, NoteType]]] = None
) -> Dict[str, MetricSet]:
    """pooled metrics restricted to each note type's rows.

    `tags` maps (participant, note) to a type and overrides the types carried
    by the rows. types without rows are left out with a warning.

    Raises:
        UnknownTagError: a row's note has no tag or a tag is not a known type
    """
    known = {t.value: t for t in NoteType}
    types: List[NoteType] = []
    for pid, note_id, carried in zip(scored.participant_ids, scored.note_ids, scored.note_types):
        tag = tags.get((pid, int(note_id))) if tags is not None else carried
        if isinstance(tag, str):
            if tag not in known:
                raise UnknownTagError(f"unknown note type {tag!r} for {pid} note {note_id}")
            tag = known[tag]
        if tag is None:
            raise UnknownTagError(f"{pid} note {note_id} has no note type")
        types.append(tag)

    type_values = np.array([t.value for t in types], dtype=object)
    table: Dict[str, MetricSet] = {}
    for note_type in NoteType:
        mask = type_values == note_type.value
        if not mask.any():
            logger.warning("no %s notes, leaving the row out", note_type.value)
            continue
        table[note_type.value] = score_metrics(scored.subset(mask))
    return table


def _labelled(rows: Sequence[PassageFeatureVector]) -> List[PassageFeatureVector]:
    return [r for r in rows if r.label is not Label.UNKNOWN]


def _fold(
    train: Sequence[PassageFeatureVector],
    test: Sequence[PassageFeatureVector],
    cfg: ForestConfig,
    threshold: float,
    name: Hashable,
) -> Optional[ScoredRows]:
    if len({r.label for r in train}) < 2:
        logger.warning("fold %s: training rows hold a single class, skipped", name)
        return None
    model = train_forest(train, cfg)
    scores = predict_proba(model, list(test))
    return ScoredRows.from_rows(test, scores, (scores >= threshold).astype(np.int64))


def leave_one_group_out(
    rows: Sequence[PassageFeatureVector],
    group: Callable[[PassageFeatureVector], Hashable],
    forest: ForestConfig,
    threshold: float = 0.5,
    n_jobs: int = 1,
    within: Optional[Callable[[PassageFeatureVector], Hashable]] = None,
) -> Tuple[ScoredRows, int, int]:
    """train on all groups but one, score the held-out group, for every group.

    with `within`, training rows are further restricted to the held-out
    group's `within` key (leave-one-note-out inside each participant).

    Returns:
        Tuple[ScoredRows, int, int]: held-out scores, folds run, folds skipped
    """
    groups = sorted({group(r) for r in rows})
    if n_jobs != 1:
        forest = forest.model_copy(update={"n_jobs": 1})

    def split(g):
        test = [r for r in rows if group(r) == g]
        train = [r for r in rows if group(r) != g]
        if within is not None:
            scope = within(test[0])
            train = [r for r in train if within(r) == scope]
        return train, test

    parts = Parallel(n_jobs=n_jobs)(
        delayed(_fold)(*split(g), forest, threshold, g) for g in groups
    )
    kept = [p for p in parts if p is not None]
    return ScoredRows.concat(kept), len(kept), len(parts) - len(kept)


def loo_note_cv(
    rows: Sequence[PassageFeatureVector],
    forest: ForestConfig = ForestConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    n_jobs: int = 1,
    sizes: Optional[PassageSizes] = None,
) -> EvalReport:
    """person-dependent evaluation of one participant, one fold per note.

    Raises:
        TooFewNotesError: fewer than two notes
        SingleClassError: the participant's rows hold a single class
    """
    rows = _labelled(rows)
    notes = {r.note_id for r in rows}
    if len(notes) < 2:
        raise TooFewNotesError(f"leave-one-note-out needs 2 notes, got {len(notes)}")
    if len({r.label for r in rows}) < 2:
        raise SingleClassError("participant rows hold a single class")

    scored, folds, skipped = leave_one_group_out(
        rows, lambda r: r.note_id, forest, eval_cfg.decision_threshold, n_jobs
    )
    return summarize("learned", "loo-note", scored, folds, skipped, sizes=sizes)


def person_dependent_cv(
    rows: Sequence[PassageFeatureVector],
    forest: ForestConfig = ForestConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    n_jobs: int = 1,
    sizes: Optional[PassageSizes] = None,
) -> EvalReport:
    """leave-one-note-out inside every participant, aggregated over the cohort.

    participants with fewer than two notes or a single class are skipped.
    """
    usable: List[PassageFeatureVector] = []
    by_participant: Dict[str, List[PassageFeatureVector]] = {}
    for r in _labelled(rows):
        by_participant.setdefault(r.participant_id, []).append(r)
    for pid, own in sorted(by_participant.items()):
        if len({r.note_id for r in own}) < 2 or len({r.label for r in own}) < 2:
            logger.warning("%s: not enough notes or classes for leave-one-note-out, skipped", pid)
            continue
        usable.extend(own)
    if not usable:
        raise TooFewNotesError("no participant has two notes with both classes")

    scored, folds, skipped = leave_one_group_out(
        usable,
        lambda r: (r.participant_id, r.note_id),
        forest,
        eval_cfg.decision_threshold,
        n_jobs,
        within=lambda r: r.participant_id,
    )
    return summarize("learned", "loo-note", scored, folds, skipped, sizes=sizes)


def lopo_cv(
    rows: Sequence[PassageFeatureVector],
    forest: ForestConfig = ForestConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    n_jobs: int = 1,
    sizes: Optional[PassageSizes] = None,
) -> EvalReport:
    """person-independent evaluation, one fold per held-out participant.

    Raises:
        TooFewParticipantsError: fewer than two participants
    """
    rows = _labelled(rows)
    participants = {r.participant_id for r in rows}
    if len(participants) < 2:
        raise TooFewParticipantsError(
            f"leave-one-participant-out needs 2 participants, got {len(participants)}"
        )
    scored, folds, skipped = leave_one_group_out(
        rows, lambda r: r.participant_id, forest, eval_cfg.decision_threshold, n_jobs
    )
    return summarize("learned", "lopo", scored, folds, skipped, sizes=sizes)


def align(
    rows: Sequence[PassageFeatureVector], predictions: Sequence[AnchorPrediction]
) -> ScoredRows:
    """score labelled rows with a strategy's predictions.

    rows the strategy did not emit score 0 and count as NotAnnotated.
    """
    rows = _labelled(rows)
    by_key = {p.key: p for p in predictions}
    scores, labels = [], []
    for r in rows:
        p = by_key.get((r.participant_id, r.note_id, r.passage_id))
        scores.append(p.score if p is not None else 0.0)
        labels.append(1 if p is not None and p.label is Label.ANNOTATED else 0)
    return ScoredRows.from_rows(rows, scores, labels)


def evaluate_predictions(
    rows: Sequence[PassageFeatureVector],
    predictions: Sequence[AnchorPrediction],
    strategy: str,
    protocol: str = "lopo",
    sizes: Optional[PassageSizes] = None,
) -> EvalReport:
    """metrics of a training-free strategy on the learned model's rows."""
    scored = align(rows, predictions)
    if len(scored) == 0:
        raise DataValidationError("no labelled rows to evaluate")
    participants = len(set(scored.participant_ids.tolist()))
    return summarize(strategy, protocol, scored, folds=participants, sizes=sizes)


class ReportFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reports: List[EvalReport]


def write_report(reports: Sequence[EvalReport], path: Path) -> None:
    document = ReportFile(reports=list(reports)).model_dump(mode="json")
    Path(path).write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %d reports to %s", len(reports), path)


def read_report(path: Path) -> List[EvalReport]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    try:
        return ReportFile.model_validate_json(read_utf8(path)).reports
    except ValidationError as e:
        raise DataValidationError(f"{path}: {e}") from e


def _cell(mean: Optional[float], sd: Optional[float]) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.2f} ± {sd:.2f}"


def _value(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def print_report(reports: Sequence[EvalReport], metrics: Sequence[str] = METRICS) -> None:
    """print a comparison table of strategies, then per-type tables."""
    print("\n" + "=" * 70)
    print("ANCHORING RESULTS")
    print("=" * 70)

    for protocol in sorted({r.protocol for r in reports}):
        group = [r for r in reports if r.protocol == protocol]
        print(f"\nProtocol: {protocol} ({group[0].folds} folds)")
        print("-" * 70)
        print(f"{'strategy':<10}" + "".join(f"{m:>14}" for m in metrics))
        for report in group:
            cells = "".join(f"{_cell(report.mean[m], report.sd[m]):>14}" for m in metrics)
            print(f"{report.strategy:<10}{cells}")
        print(f"{'(pooled)':<10}")
        for report in group:
            cells = "".join(f"{_value(report.pooled.get(m)):>14}" for m in metrics)
            print(f"{report.strategy:<10}{cells}")

        skipped = [r for r in group if r.folds_skipped or r.auc_skipped]
        for report in skipped:
            print(
                f"  {report.strategy}: {report.folds_skipped} folds skipped, "
                f"AUC skipped for {report.auc_skipped} participants"
            )

    typed = [r for r in reports if r.per_note_type]
    if typed:
        print("\n" + "-" * 70)
        print("RESULTS BY NOTE TYPE (pooled)")
        print("-" * 70)
        for report in typed:
            print(f"\n{report.strategy} / {report.protocol}:")
            for note_type, m in report.per_note_type.items():
                cells = "  ".join(f"{name}={_value(m.get(name))}" for name in metrics)
                print(f"  {note_type:<11} notes={m.n_notes:<5} {cells}")

    sized = [r for r in reports if r.by_passage_size is not None]
    if sized:
        print("\n" + "-" * 70)
        print("ANNOTATED PASSAGE SIZES (px, mean ± sd)")
        print("-" * 70)
        for report in sized:
            print(f"\n{report.strategy} / {report.protocol}:")
            for name, stats in (("found", report.by_passage_size.found), ("missed", report.by_passage_size.missed)):
                print(
                    f"  {name:<7} n={stats.n:<5} width={_cell(stats.mean_w, stats.sd_w)}"
                    f"  height={_cell(stats.mean_h, stats.sd_h)}"
                )

    print("\n" + "=" * 70)
