import os
import sys
from pathlib import Path

import pytest

# Add src to path
sys.path.append(os.path.join(os.path.dirname(__file__), "../src"))

from baselines import fixation_baseline, position_baseline, read_predictions, write_predictions
from errors import NoVisiblePassagesError, ParseError
from models.features import Label
from models.gaze import DocGazeSample, ScrollEvent
from models.layout import PageLayout, PageSpec, Passage
from models.notes import VoiceNote
from models.prediction import AnchorPrediction, Strategy
from models.session import Viewport
from pipeline import analyze_session, baseline_predictions
from session_io import load_session

GOLDEN = Path(__file__).parent / "fixtures" / "golden_session"


def two_passages():
    return PageLayout(
        (
            PageSpec(
                1,
                800.0,
                1000.0,
                (Passage(0, 1, 0.0, 0.0, 400.0, 200.0), Passage(1, 1, 0.0, 400.0, 400.0, 200.0)),
            ),
        )
    )


def dwell(start, end, x, y, page=1):
    return [DocGazeSample(t, page, x, y, True) for t in range(start, end + 1, 10)]


def annotated(predictions):
    return [p.passage_id for p in predictions if p.label is Label.ANNOTATED]


def test_golden_position_baseline():
    analysis = analyze_session(load_session(GOLDEN))
    predictions = baseline_predictions(analysis, Strategy.POSITION)

    by_note = {n: [p for p in predictions if p.note_id == n] for n in (0, 1)}
    assert annotated(by_note[0]) == [0]
    assert annotated(by_note[1]) == [3]
    assert [p.passage_id for p in by_note[1]] == [3, 4, 5]
    assert all(p.strategy is Strategy.POSITION and p.participant_id == "G01" for p in predictions)


def test_golden_fixation_baseline():
    analysis = analyze_session(load_session(GOLDEN))
    predictions = baseline_predictions(analysis, Strategy.FIXATION)

    by_note = {n: {p.passage_id: p for p in predictions if p.note_id == n} for n in (0, 1)}
    assert sorted(by_note[0]) == [0, 1], "rows follow the learned model's candidates"
    assert by_note[0][0].score == 1.0 and by_note[0][0].label is Label.ANNOTATED
    assert by_note[0][1].score == 0.0
    assert annotated(by_note[1].values()) == [4]
    assert by_note[1][4].score == 1.0


def test_exactly_one_position_anchor():
    layout = two_passages()
    predictions = position_baseline(
        VoiceNote(2, 500, 4000), [ScrollEvent(0, 1, 0.0)], layout, Viewport(800, 700), "P02"
    )
    assert annotated(predictions) == [0]
    assert [p.score for p in predictions] == [1.0, 0.0]
    assert predictions[0].key == ("P02", 2, 0)


def test_position_uses_state_at_note_start():
    scrolls = [ScrollEvent(0, 1, 0.0), ScrollEvent(400, 1, 350.0), ScrollEvent(900, 1, 0.0)]
    predictions = position_baseline(VoiceNote(0, 500, 4000), scrolls, two_passages(), Viewport(800, 300))
    assert annotated(predictions) == [1], "scroll 350 hides passage 0 at t=500"


def test_position_nothing_visible():
    with pytest.raises(NoVisiblePassagesError):
        position_baseline(
            VoiceNote(0, 0, 4000), [ScrollEvent(0, 1, 250.0)], two_passages(), Viewport(800, 100)
        )


def test_fixation_majority_wins():
    gaze = []
    for k in range(3):
        gaze += dwell(1000 + 400 * k, 1200 + 400 * k, 100.0 + 60 * k, 500.0)
    gaze += dwell(2200, 2400, 100.0, 100.0)
    predictions = fixation_baseline(VoiceNote(0, 1000, 3000), gaze, two_passages())

    assert annotated(predictions) == [1]
    assert {p.passage_id: p.score for p in predictions} == pytest.approx({0: 0.25, 1: 0.75})


def test_fixation_tie_goes_to_lower_id():
    gaze = dwell(1000, 1200, 100.0, 500.0) + dwell(1500, 1700, 100.0, 100.0)
    predictions = fixation_baseline(VoiceNote(0, 1000, 3000), gaze, two_passages())
    assert annotated(predictions) == [0]


def test_fixation_ignores_gaze_outside_utterance():
    gaze = dwell(0, 900, 100.0, 100.0) + dwell(1000, 1300, 100.0, 500.0)
    predictions = fixation_baseline(VoiceNote(0, 1000, 3000), gaze, two_passages())
    assert annotated(predictions) == [1]


def test_fixation_without_gaze():
    predictions = fixation_baseline(VoiceNote(0, 1000, 3000), [], two_passages(), candidates=[1])
    assert [(p.passage_id, p.score, p.label) for p in predictions] == [(1, 0.0, Label.NOT_ANNOTATED)]


def test_predictions_file_round_trip(tmp_path):
    predictions = [
        AnchorPrediction(Strategy.FIXATION, "007", 1, 4, 1 / 3, Label.ANNOTATED),
        AnchorPrediction(Strategy.POSITION, "007", 1, 5, 0.0, Label.NOT_ANNOTATED),
    ]
    write_predictions(predictions, tmp_path / "predictions.csv")
    assert read_predictions(tmp_path / "predictions.csv") == predictions

    (tmp_path / "bad.csv").write_text("strategy,participant_id,note_id,passage_id,score,label\nguess,P,0,0,0.5,Annotated\n")
    with pytest.raises(ParseError) as info:
        read_predictions(tmp_path / "bad.csv")
    assert info.value.line == 2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
