from pathlib import Path

import pytest
from hypothesis import strategies as st

from pianoroll_gan.midi_io import (
    ChannelPressure, ControlChange, EndOfTrack, Meta, MidiFile, NoteOn, PitchBend, PolyPressure,
    ProgramChange, SysEx, Tempo, TimeSig, Track,
)

ROOT = Path(__file__).resolve().parent.parent
MIDI_FIXTURES = ROOT / "tests" / "data" / "midi"
CORPUS = ROOT / "data" / "corpus"

ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def midi_fixture_dir():
    return MIDI_FIXTURES


@pytest.fixture(scope="session")
def corpus_dir():
    return CORPUS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")


# --- random MIDI files ------------------------------------------------------

_ch = st.integers(0, 15)
_7 = st.integers(0, 127)
_reserved_meta = {0x2F, 0x51, 0x58}


def _meta(tick):
    return st.builds(Meta, st.just(tick), st.integers(0, 0x7F).filter(lambda t: t not in _reserved_meta),
                     st.binary(max_size=12))


def _event(tick):
    return st.one_of(
        st.builds(NoteOn, st.just(tick), _ch, _7, _7),
        st.builds(ControlChange, st.just(tick), _ch, _7, _7),
        st.builds(ProgramChange, st.just(tick), _ch, _7),
        st.builds(PitchBend, st.just(tick), _ch, st.integers(0, 16383)),
        st.builds(PolyPressure, st.just(tick), _ch, _7, _7),
        st.builds(ChannelPressure, st.just(tick), _ch, _7),
        st.builds(Tempo, st.just(tick), st.integers(1, 0xFFFFFF)),
        st.builds(TimeSig, st.just(tick), st.integers(0, 255), st.integers(0, 7).map(lambda e: 1 << e),
                  st.integers(0, 255), st.integers(0, 255)),
        _meta(tick),
        st.builds(SysEx, st.just(tick), st.sampled_from([0xF0, 0xF7]), st.binary(max_size=8)),
    )


@st.composite
def tracks(draw, max_events=15):
    deltas = draw(st.lists(st.integers(0, 5000) | st.integers(0, 0x0FFFFFF), max_size=max_events))
    events, tick = [], 0
    for d in deltas:
        tick += d
        events.append(draw(_event(tick)))
    events.append(EndOfTrack(tick + draw(st.integers(0, 100))))
    return Track(tuple(events))


@st.composite
def midi_files(draw):
    n = draw(st.integers(1, 3))
    fmt = 0 if n == 1 and draw(st.booleans()) else 1
    return MidiFile(fmt, draw(st.integers(1, 0x7FFF)), tuple(draw(tracks()) for _ in range(n)))
