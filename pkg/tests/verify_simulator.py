import filecmp
import os
import sys

import numpy as np
import pytest

# Add src to path
sys.path.append(os.path.join(os.path.dirname(__file__), "../src"))

from audio_notes import extract_voice_notes, session_envelope
from config import IdtConfig, SimulatorConfig
from errors import LayoutTooSmallError
from gaze_events import detect_fixations, passage_events, remove_outliers
from layout_map import map_gaze_to_document
from models.layout import PageLayout, PageSpec, Passage
from models.notes import NoteType, VoiceNote
from session_io import load_session
from simulator import (
    derive_seed,
    generate_layout,
    pages_for,
    participant_id,
    simulate_corpus,
    simulate_participant,
    synthesize_envelope,
    write_corpus,
)

SMALL = SimulatorConfig(n_participants=6, notes_per_participant=5, seed=11)


def layout_for(cfg, n_notes):
    return generate_layout(pages_for(n_notes, cfg), cfg)


def test_layout_shape():
    cfg = SimulatorConfig()
    layout = generate_layout(3, cfg)

    assert len(layout) == 15
    assert [p.passage_id for p in layout.passages_on(2)] == [5, 6, 7, 8, 9]
    assert pages_for(22, cfg) == 23
    with pytest.raises(LayoutTooSmallError):
        generate_layout(1, SimulatorConfig(page_h=200))


def test_same_seed_same_session():
    layout = layout_for(SMALL, 4)
    a = simulate_participant(layout, SMALL, n_notes=4, seed=5)
    b = simulate_participant(layout, SMALL, n_notes=4, seed=5)
    c = simulate_participant(layout, SMALL, n_notes=4, seed=6)

    assert a.session == b.session
    assert a.notes == b.notes
    assert a.session != c.session


def test_written_corpus_is_reproducible(tmp_path):
    cfg = SimulatorConfig(n_participants=2, notes_per_participant=3, seed=2)
    first = write_corpus(simulate_corpus(cfg), tmp_path / "a", cfg)
    second = write_corpus(simulate_corpus(cfg, n_jobs=2), tmp_path / "b", cfg)

    for x, y in zip(first, second):
        names = sorted(p.name for p in x.iterdir())
        _, mismatch, errors = filecmp.cmpfiles(x, y, names, shallow=False)
        assert not mismatch and not errors, f"{x.name}: {mismatch} differ"


def test_participant_regenerates_alone():
    corpus = simulate_corpus(SMALL)
    layout = layout_for(SMALL, SMALL.notes_per_participant)
    alone = simulate_participant(
        layout, SMALL, SMALL.notes_per_participant, derive_seed(SMALL.seed, 4), participant_id(4)
    )

    assert corpus.participants[4].session.participant_id == "P05"
    assert alone.session == corpus.participants[4].session
    assert corpus.n_notes == 30


def test_all_notes_recovered_from_audio():
    cfg = SimulatorConfig()
    participant = simulate_participant(layout_for(cfg, 22), cfg, n_notes=22, seed=3)
    extracted = extract_voice_notes(session_envelope(participant.session))

    assert len(extracted) == 22
    assert [(n.start, n.end) for n in extracted] == [(n.start, n.end) for n in participant.notes]


def test_long_utterances_are_never_split():
    # summary-length notes carry the most pauses
    notes = [VoiceNote(k, 2000 + 45000 * k, 42000 + 45000 * k) for k in range(6)]
    for seed in range(40):
        env = synthesize_envelope(notes, 2000 + 45000 * 6, SimulatorConfig(), np.random.default_rng(seed))
        extracted = extract_voice_notes(env)
        assert [(n.start, n.end) for n in extracted] == [(n.start, n.end) for n in notes], f"seed {seed}"


def test_every_default_participant_keeps_its_notes():
    corpus = simulate_corpus(SimulatorConfig(seed=1), n_jobs=-1)
    for participant in corpus.participants:
        extracted = extract_voice_notes(session_envelope(participant.session))
        assert [(n.start, n.end) for n in extracted] == [
            (n.start, n.end) for n in participant.notes
        ], f"{participant.session.participant_id} notes differ"


def test_target_counts_by_type():
    cfg = SimulatorConfig(notes_per_participant=30)
    session = simulate_participant(layout_for(cfg, 30), cfg, seed=8).session

    assert set(session.note_types.values()) == set(NoteType), "30 draws should cover every type"
    for note_id, note_type in session.note_types.items():
        targets = session.true_passages(note_id)
        if note_type is NoteType.SUMMARY:
            assert len(targets) >= 2
        else:
            assert len(targets) == 1


def test_fixations_survive_detection():
    cfg = SimulatorConfig()
    participant = simulate_participant(layout_for(cfg, 10), cfg, n_notes=10, seed=21)
    session = participant.session
    doc = map_gaze_to_document(session.gaze, session.scrolls, session.viewport, session.layout)
    detected = detect_fixations(remove_outliers(doc), IdtConfig())

    ratio = len(detected) / participant.injected_fixations
    assert ratio >= 0.9, f"recovered {ratio:.2%} of injected fixations"


def test_adherent_short_notes_look_at_target():
    cfg = SimulatorConfig(
        type_mix={"short": 1.0, "reflective": 0.0, "summary": 0.0},
        adherence={"short": 0.95, "reflective": 0.3, "summary": 0.6},
    )
    for seed in range(10):
        participant = simulate_participant(layout_for(cfg, 12), cfg, n_notes=12, seed=seed)
        session = participant.session
        doc = map_gaze_to_document(session.gaze, session.scrolls, session.viewport, session.layout)
        for note, away in zip(participant.notes, participant.away_ms):
            assert away == pytest.approx(0.05 * note.duration, abs=1)
            fixations, _ = passage_events(doc, session.layout, IdtConfig(), note.start, note.end)
            targets = session.true_passages(note.note_id)
            on_target = sum(f.duration for f in fixations if f.passage_id in targets)
            total = sum(f.duration for f in fixations)

            assert total > 0, f"seed {seed} note {note.note_id}: no fixations while speaking"
            share = on_target / total
            assert share >= 0.8, f"seed {seed} note {note.note_id}: {share:.2%} of fixation time on target"


def test_reflective_notes_wander():
    cfg = SimulatorConfig(type_mix={"short": 0.0, "reflective": 1.0, "summary": 0.0})
    participant = simulate_participant(layout_for(cfg, 8), cfg, n_notes=8, seed=4)
    for note, away in zip(participant.notes, participant.away_ms):
        assert away == pytest.approx(0.7 * note.duration, abs=7)


def test_written_sessions_load(tmp_path):
    corpus = simulate_corpus(SimulatorConfig(n_participants=2, notes_per_participant=3, seed=4))
    paths = write_corpus(corpus, tmp_path, SimulatorConfig())

    assert [p.name for p in paths] == ["P01", "P02"]
    for path, participant in zip(paths, corpus.participants):
        loaded = load_session(path)
        assert loaded == participant.session


def test_waveform_corpus(tmp_path):
    cfg = SimulatorConfig(n_participants=2, notes_per_participant=3, seed=9, waveform=True)
    corpus = simulate_corpus(cfg)
    paths = write_corpus(corpus, tmp_path, cfg)

    assert (paths[0] / "audio.wav").is_file()
    assert not (paths[0] / "envelope.csv").exists()
    session = load_session(paths[0])
    notes = extract_voice_notes(session_envelope(session))
    assert len(notes) == len(corpus.participants[0].notes)


def test_too_few_passages():
    layout = PageLayout((PageSpec(1, 960.0, 1280.0, (Passage(0, 1, 100.0, 100.0, 700.0, 200.0),)),))
    with pytest.raises(LayoutTooSmallError):
        simulate_participant(layout, SimulatorConfig(), n_notes=2)


def test_seeds_differ_per_participant():
    seeds = {derive_seed(0, i) for i in range(32)}
    assert len(seeds) == 32
    assert derive_seed(0, 3) == derive_seed(0, 3)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
