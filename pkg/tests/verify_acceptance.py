import os
import sys

import pytest

# Add src to path
sys.path.append(os.path.join(os.path.dirname(__file__), "../src"))

from config import EvalConfig, ForestConfig, PipelineConfig, SimulatorConfig
from evaluation import evaluate_predictions, lopo_cv
from models.prediction import Strategy
from pipeline import all_rows, analyze_session, baseline_predictions
from simulator import simulate_corpus

pytestmark = pytest.mark.slow

CORPUS = SimulatorConfig(n_participants=32, notes_per_participant=22, seed=1)
FOREST = ForestConfig(n_trees=200, seed=1, n_jobs=-1)


@pytest.fixture(scope="module")
def analyses():
    corpus = simulate_corpus(CORPUS, n_jobs=-1)
    return [analyze_session(p.session, PipelineConfig()) for p in corpus.participants]


@pytest.fixture(scope="module")
def reports(analyses):
    rows = all_rows(analyses)
    learned = lopo_cv(rows, FOREST, EvalConfig(), n_jobs=1)
    baselines = {
        s.value: evaluate_predictions(rows, [p for a in analyses for p in baseline_predictions(a, s)], s.value)
        for s in (Strategy.POSITION, Strategy.FIXATION)
    }
    return learned, baselines


def test_learned_model_beats_baselines(reports):
    learned, baselines = reports
    auc = learned.mean["auc"]

    assert learned.folds == 32
    assert auc >= 0.85, f"learned mean AUC {auc:.3f}"
    for name, report in baselines.items():
        assert auc - report.mean["auc"] >= 0.10, f"{name} AUC {report.mean['auc']:.3f} vs learned {auc:.3f}"


def test_short_notes_rank_at_least_as_well_as_reflective(reports):
    learned, _ = reports
    short, reflective = learned.per_note_type["short"].auc, learned.per_note_type["reflective"].auc
    assert short >= reflective, f"short {short:.3f} < reflective {reflective:.3f}"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-m", "slow"]))
