import logging
import os
import sys

import numpy as np
import pytest

# Add src to path
sys.path.append(os.path.join(os.path.dirname(__file__), "../src"))

import evaluation
from config import EvalConfig, ForestConfig, SimulatorConfig
from errors import (
    DataValidationError,
    LengthMismatchError,
    SingleClassError,
    TooFewNotesError,
    TooFewParticipantsError,
    UnknownTagError,
)
from evaluation import (
    ScoredRows,
    evaluate_predictions,
    hit_rate,
    lopo_cv,
    loo_note_cv,
    passage_size_breakdown,
    per_note_type_report,
    person_dependent_cv,
    precision_recall_f1,
    print_report,
    read_report,
    roc_auc,
    score_metrics,
    write_report,
)
from models.features import N_FEATURES, GazeFeatures, Label, PassageFeatureVector
from models.notes import NoteType
from models.prediction import AnchorPrediction, Strategy
from pipeline import analyze_session
from simulator import generate_layout, pages_for, simulate_participant

FAST = ForestConfig(n_trees=5, seed=1)


def row(pid, note, passage, annotated, signal=None, note_type=None, rng=None):
    """feature 0 carries the label signal, the rest is noise."""
    rng = rng or np.random.default_rng([sum(map(ord, pid)), note, passage])
    values = rng.uniform(0, 1, N_FEATURES)
    values[0] = (0.8 if annotated else 0.2) if signal is None else signal
    label = Label.ANNOTATED if annotated else Label.NOT_ANNOTATED
    return PassageFeatureVector(pid, note, passage, GazeFeatures.from_values(values), label, note_type)


def cohort(participants=3, notes=4, per_note=3):
    """each note has one annotated passage among `per_note` candidates."""
    return [
        row(f"P{p:02d}", n, k, k == 0)
        for p in range(1, participants + 1)
        for n in range(notes)
        for k in range(per_note)
    ]


def brute_auc(scores, truth):
    """share of (positive, negative) pairs ordered correctly, ties counting half."""
    scores, truth = np.asarray(scores), np.asarray(truth)
    pos, neg = scores[truth == 1][:, None], scores[truth == 0][None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return wins / (pos.size * neg.size)


def test_prf_examples():
    assert precision_recall_f1([1, 0, 1], [1, 0, 1]) == (1.0, 1.0, 1.0)
    p, r, f = precision_recall_f1([1, 1, 1, 0, 0], [1, 1, 0, 1, 0])
    assert (p, r, f) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
    assert precision_recall_f1([0, 0, 0], [1, 0, 1]) == (0.0, 0.0, 0.0)


def test_prf_order_independent():
    rng = np.random.default_rng(4)
    preds, truth = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    perm = rng.permutation(50)
    assert precision_recall_f1(preds, truth) == precision_recall_f1(preds[perm], truth[perm])


def test_prf_length_mismatch():
    with pytest.raises(LengthMismatchError):
        precision_recall_f1([1, 0], [1])


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)


def test_auc_matches_all_pairs():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 500))
        truth = rng.integers(0, 2, n)
        if truth.min() == truth.max():
            continue
        checked += 1
        # coarse scores to force ties
        scores = np.round(rng.uniform(0, 1, n), int(rng.integers(1, 4)))
        assert roc_auc(scores, truth) == pytest.approx(brute_auc(scores, truth), abs=1e-9)


def test_auc_negation():
    rng = np.random.default_rng(1)
    scores = rng.permutation(100) / 100.0
    truth = rng.integers(0, 2, 100)
    assert roc_auc(scores, truth) + roc_auc(-scores, truth) == pytest.approx(1.0)


def test_auc_errors():
    with pytest.raises(SingleClassError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(LengthMismatchError):
        roc_auc([0.1, 0.2, 0.3], [1, 0])


def test_hit_rate_tie_goes_to_lowest_passage():
    rows = [row("P01", 0, 2, True), row("P01", 0, 5, False), row("P01", 1, 1, False), row("P01", 1, 3, True)]
    scored = ScoredRows.from_rows(rows, [0.7, 0.7, 0.9, 0.4], [1, 1, 1, 0])
    assert hit_rate(scored) == 0.5, "note 0 hits through the tie, note 1 misses"


def test_loo_note_trains_once_per_note(monkeypatch):
    trained = []
    real = evaluation.train_forest

    def counting(train, cfg):
        trained.append({r.note_id for r in train})
        return real(train, cfg)

    monkeypatch.setattr(evaluation, "train_forest", counting)
    rows = cohort(participants=1, notes=15)
    report = loo_note_cv(rows, FAST)

    assert len(trained) == report.folds == 15
    held_out = [set(range(15)) - notes for notes in trained]
    assert sorted(h.pop() for h in held_out) == list(range(15)), "each note held out exactly once"
    assert report.pooled.n_rows == len(rows)
    assert report.protocol == "loo-note"


def test_loo_note_errors():
    with pytest.raises(TooFewNotesError):
        loo_note_cv(cohort(participants=1, notes=1), FAST)
    with pytest.raises(SingleClassError):
        loo_note_cv([row("P01", n, 0, False) for n in range(3)], FAST)


def test_lopo_never_trains_on_held_out(monkeypatch):
    seen = []
    real = evaluation.train_forest

    def recording(train, cfg):
        seen.append({r.participant_id for r in train})
        return real(train, cfg)

    monkeypatch.setattr(evaluation, "train_forest", recording)
    report = lopo_cv(cohort(participants=4), FAST)

    assert report.folds == 4 and len(seen) == 4
    everyone = {"P01", "P02", "P03", "P04"}
    assert sorted((everyone - s).pop() for s in seen) == sorted(everyone)
    assert set(report.per_participant) == everyone


def test_lopo_needs_two_participants():
    with pytest.raises(TooFewParticipantsError):
        lopo_cv(cohort(participants=1), FAST)


def test_single_class_fold_is_skipped(caplog):
    # every positive belongs to P01, so the P01 fold trains on negatives only
    rows = [row("P01", n, k, k == 0) for n in range(3) for k in range(3)]
    rows += [row(pid, n, k, False) for pid in ("P02", "P03") for n in range(3) for k in range(3)]
    with caplog.at_level(logging.WARNING):
        report = lopo_cv(rows, FAST)

    assert (report.folds, report.folds_skipped) == (2, 1)
    assert report.auc_skipped == 2, "held-out participants with negatives only"
    assert "single class" in caplog.text


def test_person_dependent_covers_cohort():
    report = person_dependent_cv(cohort(participants=3, notes=4), FAST)
    assert report.folds == 12
    assert set(report.per_participant) == {"P01", "P02", "P03"}


def test_mean_and_sample_sd():
    scored = ScoredRows.from_rows(
        [row("A", 0, 0, True), row("A", 0, 1, False), row("B", 0, 0, True), row("B", 0, 1, False)],
        [0.9, 0.1, 0.9, 0.1],
        [1, 0, 0, 0],
    )
    report = evaluation.summarize("learned", "lopo", scored, folds=2)

    assert report.mean["recall"] == 0.5
    assert report.sd["recall"] == pytest.approx(np.std([1.0, 0.0], ddof=1))
    assert report.mean["auc"] == 1.0 and report.sd["auc"] == 0.0


def test_single_type_table_equals_overall():
    rows = [row("P01", n, k, k == 0, note_type=NoteType.SHORT) for n in range(3) for k in range(3)]
    scored = ScoredRows.from_rows(rows, np.linspace(0, 1, 9), [1, 0, 0] * 3)

    table = per_note_type_report(scored)
    assert list(table) == ["short"], "empty types are omitted"
    assert table["short"] == score_metrics(scored)


def test_empty_type_warns(caplog):
    rows = [row("P01", 0, 0, True, note_type=NoteType.SUMMARY), row("P01", 0, 1, False, note_type=NoteType.SUMMARY)]
    scored = ScoredRows.from_rows(rows, [0.9, 0.1], [1, 0])
    with caplog.at_level(logging.WARNING):
        table = per_note_type_report(scored)
    assert set(table) == {"summary"}
    assert "reflective" in caplog.text


def test_unknown_tags():
    rows = [row("P01", 0, 0, True), row("P01", 1, 0, False)]
    scored = ScoredRows.from_rows(rows, [0.9, 0.1], [1, 0])

    with pytest.raises(UnknownTagError):
        per_note_type_report(scored)
    with pytest.raises(UnknownTagError):
        per_note_type_report(scored, {("P01", 0): "short", ("P01", 1): "rant"})
    table = per_note_type_report(scored, {("P01", 0): "short", ("P01", 1): "reflective"})
    assert set(table) == {"short", "reflective"}


def test_partly_untagged_rows_drop_type_table(caplog):
    rows = [row("P01", 0, k, k == 0, note_type=NoteType.SHORT) for k in range(3)]
    rows += [row("P01", 1, k, k == 0) for k in range(3)]
    scored = ScoredRows.from_rows(rows, np.linspace(0, 1, 6), [1, 0, 0, 1, 0, 0])
    with caplog.at_level(logging.WARNING):
        report = evaluation.summarize("fixation", "lopo", scored, folds=1)

    assert report.per_note_type == {}
    assert "per-type table dropped, 3 of 6 rows" in caplog.text


def test_untagged_corpus_has_no_type_table(caplog):
    scored = ScoredRows.from_rows(cohort(participants=1, notes=2), np.linspace(0, 1, 6), [1, 0, 0, 1, 0, 0])
    with caplog.at_level(logging.WARNING):
        report = evaluation.summarize("fixation", "lopo", scored, folds=1)
    assert report.per_note_type == {}
    assert "per-type" not in caplog.text


def test_passage_size_breakdown():
    rows = [row("P01", 0, 0, True), row("P01", 0, 1, False), row("P01", 1, 2, True), row("P02", 0, 0, True)]
    scored = ScoredRows.from_rows(rows, [0.9, 0.2, 0.3, 0.8], [1, 0, 0, 1])
    sizes = {("P01", 0): (500.0, 100.0), ("P01", 1): (900.0, 900.0), ("P01", 2): (300.0, 60.0), ("P02", 0): (700.0, 140.0)}

    sized = passage_size_breakdown(scored, sizes)
    assert sized.found.n == 2 and sized.missed.n == 1
    assert (sized.found.mean_w, sized.found.mean_h) == (600.0, 120.0)
    assert sized.found.sd_w == pytest.approx(np.std([500.0, 700.0], ddof=1))
    assert (sized.missed.mean_w, sized.missed.sd_w, sized.missed.mean_h) == (300.0, 0.0, 60.0)

    report = evaluation.summarize("learned", "lopo", scored, folds=2, sizes=sizes)
    assert report.by_passage_size == sized
    assert evaluation.summarize("learned", "lopo", scored, folds=2).by_passage_size is None

    with pytest.raises(DataValidationError):
        passage_size_breakdown(scored, {("P01", 0): (1.0, 1.0)})


def test_passage_sizes_in_saved_report(tmp_path, capsys):
    rows = cohort(participants=2, notes=3)
    sizes = {(r.participant_id, r.passage_id): (400.0 + 100 * r.passage_id, 80.0) for r in rows}
    reports = [lopo_cv(rows, FAST, sizes=sizes), evaluate_predictions(rows, [], "position", sizes=sizes)]
    write_report(reports, tmp_path / "report.json")

    back = read_report(tmp_path / "report.json")
    assert back == reports
    assert back[1].by_passage_size.found.n == 0 and back[1].by_passage_size.missed.n == 6
    assert back[1].by_passage_size.missed.mean_w == 400.0

    print_report(back, ["auc"])
    assert "ANNOTATED PASSAGE SIZES" in capsys.readouterr().out


def test_baseline_alignment():
    rows = [row("P01", 0, k, k == 1) for k in range(3)] + [row("P02", 0, k, k == 2) for k in range(3)]
    predictions = [
        AnchorPrediction(Strategy.POSITION, "P01", 0, 1, 1.0, Label.ANNOTATED),
        AnchorPrediction(Strategy.POSITION, "P02", 0, 0, 1.0, Label.ANNOTATED),
        AnchorPrediction(Strategy.POSITION, "P02", 0, 9, 0.0, Label.NOT_ANNOTATED),
    ]
    report = evaluate_predictions(rows, predictions, "position")

    assert report.pooled.n_rows == 6, "rows outside the candidates are ignored"
    assert report.per_participant["P01"].f1 == 1.0
    assert report.per_participant["P02"].recall == 0.0
    assert report.pooled.hit_rate == 0.5


def test_report_round_trip(tmp_path, capsys):
    rows = cohort(participants=2)
    reports = [lopo_cv(rows, FAST), evaluate_predictions(rows, [], "fixation")]
    write_report(reports, tmp_path / "report.json")

    assert read_report(tmp_path / "report.json") == reports
    text = (tmp_path / "report.json").read_text()
    assert text.startswith('{\n  "reports"')

    print_report(reports, ["auc", "f1"])
    out = capsys.readouterr().out
    assert "learned" in out and "fixation" in out and "lopo" in out


def test_aligned_participant_is_well_ranked():
    cfg = SimulatorConfig(
        type_mix={"short": 1.0, "reflective": 0.0, "summary": 0.0},
        adherence={"short": 0.95, "reflective": 0.3, "summary": 0.6},
    )
    layout = generate_layout(pages_for(15, cfg), cfg)
    session = simulate_participant(layout, cfg, n_notes=15, seed=7).session
    rows = analyze_session(session).rows

    report = loo_note_cv(rows, ForestConfig(n_trees=50, seed=0), EvalConfig())
    assert report.folds == 15
    assert report.pooled.auc > 0.9, f"auc {report.pooled.auc:.3f}"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
