"""MIDI event stream -> quantized 64-row note grid.

Time is kept exact: tick positions convert to :class:`fractions.Fraction`
seconds so that quantization ties are decided without float error.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .midi_io import DEFAULT_TEMPO, ControlChange, MidiFile, NoteOn, Tempo, merged_events

__all__ = [
    "N_ROWS", "LOWEST_NOTE", "HIGHEST_NOTE", "SLOT_SECONDS", "SLOT_TICKS", "NORMAL_DIVISION",
    "WINDOW_SLOTS", "SILENCE_CAP", "SUSTAIN_CAP", "MODES",
    "TempoMap", "TimedNote", "NoteGrid", "ModeMismatch",
    "build_tempo_map", "ticks_to_seconds", "resolve_sustain", "quantize", "round_half_up",
    "fold_pitch", "to_grid", "collapse_silence", "concat_grids", "segment", "midi_to_grid",
]

N_ROWS = 64
LOWEST_NOTE = 28
HIGHEST_NOTE = LOWEST_NOTE + N_ROWS - 1  # 91
SLOT_SECONDS = Fraction(1, 8)  # a sixteenth note at 120 bpm
NORMAL_DIVISION = 120
SLOT_TICKS = 30  # one slot at division 120, tempo 500000
WINDOW_SLOTS = 192
SILENCE_CAP = 16  # one 4/4 bar of sixteenths
SUSTAIN_CAP = 3.0
SUSTAIN_CONTROLLER = 64
MODES = ("binary", "velocity")


class ModeMismatch(ValueError):
    pass


def _exact(x) -> Fraction:
    """Exact value of a user-supplied number; floats are read by their
    shortest decimal repr so that 0.125 and 3.0 stay what they look like."""
    if isinstance(x, float):
        if math.isinf(x):
            raise ValueError("infinite value has no exact form")
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class TempoMap:
    """Piecewise-constant tempo: ``segments`` holds ``(start_tick, usec_per_quarter)``."""

    segments: tuple
    division: int
    _starts: tuple = field(init=False, repr=False, compare=False)
    _offsets: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.division <= 0:
            raise ValueError("division must be positive")
        if not self.segments or self.segments[0][0] != 0:
            raise ValueError("first tempo segment must start at tick 0")
        starts = tuple(s for s, _ in self.segments)
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        # exact seconds at each segment start, times division * 1e6
        offsets = [0]
        for (s0, us), (s1, _) in zip(self.segments, self.segments[1:]):
            offsets.append(offsets[-1] + (s1 - s0) * us)
        object.__setattr__(self, "_starts", starts)
        object.__setattr__(self, "_offsets", tuple(offsets))

    def seconds(self, tick: int) -> Fraction:
        """Exact time of ``tick`` in seconds."""
        if tick < 0:
            raise ValueError("tick must be non-negative")
        i = bisect.bisect_right(self._starts, tick) - 1
        start, us = self.segments[i]
        return Fraction(self._offsets[i] + (tick - start) * us, self.division * 1_000_000)


def build_tempo_map(midi: MidiFile) -> TempoMap:
    """Collect Tempo events from every track; at a repeated tick the last one wins."""
    by_tick = {0: DEFAULT_TEMPO}
    for ev in merged_events(midi):
        if isinstance(ev, Tempo) and ev.usec_per_quarter > 0:
            by_tick[ev.tick] = ev.usec_per_quarter
    return TempoMap(tuple(sorted(by_tick.items())), midi.division)


def ticks_to_seconds(tempo_map: TempoMap, tick: int) -> float:
    return float(tempo_map.seconds(tick))


@dataclass(frozen=True)
class TimedNote:
    onset_s: Fraction
    release_s: Fraction
    pitch: int
    velocity: int

    def __post_init__(self):
        if not self.release_s > self.onset_s:
            raise ValueError(f"release {self.release_s} must follow onset {self.onset_s}")


def resolve_sustain(events: Sequence, tempo_map: TempoMap, cap_s=SUSTAIN_CAP) -> list:
    """Pair note-ons with note-offs, stretching releases under the sustain pedal.

    A pedal press holds for at most ``cap_s`` seconds; after that it is treated
    as lifted even if no pedal-up event ever arrives. Pass ``cap_s=math.inf``
    for an uncapped pedal. Notes are returned sorted by (onset, pitch).
    """
    cap = None if cap_s is None or cap_s == math.inf else _exact(cap_s)
    if cap is not None and cap < 0:
        raise ValueError("cap_s must be non-negative")

    held = {}        # (ch, pitch) -> (onset_tick, velocity): key still down
    sustained = {}   # (ch, pitch) -> (onset_tick, velocity, key_off): pedal keeps it sounding
    pedal_down = {}  # ch -> time the pedal went down
    out = []
    last_time = Fraction(0)

    def emit(onset_tick, release, pitch, velocity):
        onset = tempo_map.seconds(onset_tick)
        if release <= onset:
            # on/off at the same tick: keep the note one tick long
            release = tempo_map.seconds(onset_tick + 1)
        out.append(TimedNote(onset, release, pitch, velocity))

    def pedal_limit(ch):
        down = pedal_down.get(ch)
        return None if down is None or cap is None else down + cap

    for ev in events:
        t = tempo_map.seconds(ev.tick)
        last_time = max(last_time, t)
        if isinstance(ev, ControlChange) and ev.controller == SUSTAIN_CONTROLLER:
            ch = ev.channel
            if ev.value >= 64:
                pedal_down.setdefault(ch, t)
            elif ch in pedal_down:
                limit = pedal_limit(ch)
                until = t if limit is None else min(t, limit)
                for key in [k for k in sustained if k[0] == ch]:
                    onset_tick, vel, key_off = sustained.pop(key)
                    emit(onset_tick, max(key_off, until), key[1], vel)
                del pedal_down[ch]
            continue
        if not isinstance(ev, NoteOn):
            continue
        key = (ev.channel, ev.note)
        if ev.velocity > 0:
            if key in held:
                onset_tick, vel = held.pop(key)
                emit(onset_tick, t, ev.note, vel)
            if key in sustained:
                onset_tick, vel, key_off = sustained.pop(key)
                limit = pedal_limit(ev.channel)
                emit(onset_tick, t if limit is None else max(key_off, min(t, limit)), ev.note, vel)
            held[key] = (ev.tick, ev.velocity)
        elif key in held:
            onset_tick, vel = held.pop(key)
            limit = pedal_limit(ev.channel)
            if ev.channel in pedal_down and (limit is None or t < limit):
                sustained[key] = (onset_tick, vel, t)
            else:
                emit(onset_tick, t, ev.note, vel)

    for (ch, pitch), (onset_tick, vel, key_off) in sustained.items():
        limit = pedal_limit(ch)
        emit(onset_tick, max(key_off, last_time if limit is None else limit), pitch, vel)
    for (ch, pitch), (onset_tick, vel) in held.items():
        emit(onset_tick, last_time, pitch, vel)
    out.sort(key=lambda n: (n.onset_s, n.pitch, n.release_s))
    return out


def round_half_up(x) -> int:
    """Nearest integer with ties going up; exact for Fractions and ints."""
    return math.floor(Fraction(x) + Fraction(1, 2))


def quantize(notes: Iterable[TimedNote], slot_s=SLOT_SECONDS) -> list:
    """``(onset_slot, offset_slot)`` per note; every note keeps at least one slot."""
    slot = _exact(slot_s)
    if slot <= 0:
        raise ValueError("slot_s must be positive")
    out = []
    for n in notes:
        on = round_half_up(Fraction(n.onset_s) / slot)
        off = round_half_up(Fraction(n.release_s) / slot)
        out.append((on, max(off, on + 1)))
    return out


def fold_pitch(note: int) -> int:
    """Grid row of a MIDI note, moving out-of-range notes by whole octaves."""
    if not 0 <= note <= 127:
        raise ValueError(f"MIDI note {note} outside 0..127")
    while note < LOWEST_NOTE:
        note += 12
    while note > HIGHEST_NOTE:
        note -= 12
    return note - LOWEST_NOTE


@dataclass
class NoteGrid:
    """64 pitch rows by T sixteenth-note slots; cells hold velocity 0..127."""

    cells: np.ndarray
    mode: str = "binary"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] != N_ROWS:
            raise ValueError(f"grid must have shape (64, T), got {cells.shape}")
        if cells.size and (cells.min() < 0 or cells.max() > 127):
            raise ValueError("grid cells must lie in 0..127")
        self.cells = cells.astype(np.uint8, copy=False)

    @property
    def n_slots(self) -> int:
        return self.cells.shape[1]

    @classmethod
    def empty(cls, n_slots: int = 0, mode: str = "binary") -> "NoteGrid":
        return cls(np.zeros((N_ROWS, n_slots), dtype=np.uint8), mode)

    def active(self) -> np.ndarray:
        return self.cells != 0

    def __eq__(self, other):
        if not isinstance(other, NoteGrid):
            return NotImplemented
        return self.mode == other.mode and np.array_equal(self.cells, other.cells)


def to_grid(notes: Sequence[TimedNote], slots: Sequence[tuple], mode: str = "binary") -> NoteGrid:
    """Paint notes into a grid; overlapping notes keep the larger velocity."""
    if len(notes) != len(slots):
        raise ValueError("notes and slots must have equal length")
    n_slots = max((off for _, off in slots), default=0)
    grid = NoteGrid.empty(n_slots, mode)
    cells = grid.cells
    for note, (on, off) in zip(notes, slots):
        if off <= on:
            raise ValueError("offset slot must exceed onset slot")
        level = 127 if mode == "binary" else note.velocity
        row = cells[fold_pitch(note.pitch)]
        np.maximum(row[on:off], level, out=row[on:off])
    return grid


def collapse_silence(grid: NoteGrid, cap: int = SILENCE_CAP) -> NoteGrid:
    """Trim silent edges and shorten internal silent runs to ``cap`` slots."""
    sounding = grid.cells.any(axis=0)
    idx = np.flatnonzero(sounding)
    if idx.size == 0:
        return NoteGrid.empty(0, grid.mode)
    keep = np.zeros(grid.n_slots, dtype=bool)
    keep[idx[0]:idx[-1] + 1] = True
    run = 0
    for s in range(idx[0], idx[-1] + 1):
        if sounding[s]:
            run = 0
        else:
            run += 1
            if run > cap:
                keep[s] = False
    return NoteGrid(grid.cells[:, keep], grid.mode)


def concat_grids(grids: Sequence[NoteGrid], mode: str | None = None) -> NoteGrid:
    modes = {g.mode for g in grids}
    if mode is not None:
        modes.add(mode)
    if len(modes) > 1:
        raise ModeMismatch(f"cannot concatenate grids of modes {sorted(modes)}")
    if not grids:
        return NoteGrid.empty(0, mode or "binary")
    return NoteGrid(np.concatenate([g.cells for g in grids], axis=1), grids[0].mode)


def segment(grid: NoteGrid, window_slots: int = WINDOW_SLOTS) -> list:
    """Consecutive non-overlapping windows; a trailing partial window is dropped."""
    if window_slots <= 0:
        raise ValueError("window_slots must be positive")
    n = grid.n_slots // window_slots
    return [NoteGrid(grid.cells[:, i * window_slots:(i + 1) * window_slots].copy(), grid.mode)
            for i in range(n)]


def midi_to_grid(midi: MidiFile, mode: str = "binary", cap_s=SUSTAIN_CAP,
                 slot_s=SLOT_SECONDS) -> NoteGrid:
    """Tempo map, sustain resolution, quantization and painting for one file."""
    tempo_map = build_tempo_map(midi)
    notes = resolve_sustain(merged_events(midi), tempo_map, cap_s)
    return to_grid(notes, quantize(notes, slot_s), mode)
