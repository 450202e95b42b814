"""Simple musical statistics for comparing generated grids with training data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .preprocess import LOWEST_NOTE, NoteGrid

__all__ = ["AnalysisReport", "analyze", "onset_matrix", "chord_quality", "rhythm_score", "TRIADS"]

TRIADS = (
    ("major", frozenset({0, 4, 7})),
    ("minor", frozenset({0, 3, 7})),
    ("quartal", frozenset({0, 5, 10})),
)
MAX_LAG = 96
PITCH_CLASS_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


@dataclass
class AnalysisReport:
    pitch_class_histogram: list = field(default_factory=lambda: [0] * 12)
    note_density: float = 0.0
    chord_events: list = field(default_factory=list)
    repeated_rhythm_score: float = 0.0
    n_slots: int = 0

    @property
    def n_onsets(self) -> int:
        return sum(self.pitch_class_histogram)

    def chord_counts(self) -> dict:
        counts = {"major": 0, "minor": 0, "quartal": 0, "other": 0}
        for _, quality in self.chord_events:
            counts[quality] += 1
        return counts

    def as_dict(self) -> dict:
        return {
            "n_slots": self.n_slots,
            "n_onsets": self.n_onsets,
            "pitch_class_histogram": dict(zip(PITCH_CLASS_NAMES, self.pitch_class_histogram)),
            "note_density": self.note_density,
            "chord_counts": self.chord_counts(),
            "repeated_rhythm_score": self.repeated_rhythm_score,
        }


def onset_matrix(cells: np.ndarray) -> np.ndarray:
    """True where a maximal run of sounding cells starts."""
    active = cells != 0
    prev = np.zeros_like(active)
    prev[:, 1:] = active[:, :-1]
    return active & ~prev


def chord_quality(pitch_classes) -> str | None:
    """Quality of a sounding pitch-class set, or None below three classes.

    A set counts as a triad quality when some transposition of that triad is
    contained in it; major is tried first, then minor, then quartal.
    """
    pcs = frozenset(pitch_classes)
    if len(pcs) < 3:
        return None
    for name, shape in TRIADS:
        for root in range(12):
            if {(root + i) % 12 for i in shape} <= pcs:
                return name
    return "other"


def rhythm_score(series: np.ndarray, max_lag: int = MAX_LAG) -> float:
    """Largest lagged Pearson correlation of ``series`` with itself, clipped to [0, 1]."""
    x = np.asarray(series, dtype=np.float64)
    if x.size < 3 or np.all(x == x[0]):
        return 0.0
    best = 0.0
    for lag in range(1, min(max_lag, x.size - 2) + 1):
        a, b = x[:-lag], x[lag:]
        a = a - a.mean()
        b = b - b.mean()
        denom = np.sqrt((a * a).sum() * (b * b).sum())
        if denom == 0:
            continue
        best = max(best, float((a * b).sum() / denom))
    return min(1.0, max(0.0, best))


def analyze(grid: NoteGrid) -> AnalysisReport:
    cells = grid.cells
    n_slots = cells.shape[1]
    if n_slots == 0:
        return AnalysisReport()
    onsets = onset_matrix(cells)
    rows = np.arange(cells.shape[0])
    pcs_of_row = (rows + LOWEST_NOTE) % 12
    hist = np.bincount(pcs_of_row, weights=onsets.sum(axis=1), minlength=12).astype(int)

    chords = []
    sounding = cells != 0
    for slot in np.flatnonzero(sounding.sum(axis=0) >= 3):
        quality = chord_quality(pcs_of_row[sounding[:, slot]].tolist())
        if quality is not None:
            chords.append((int(slot), quality))

    n_onsets = int(hist.sum())
    return AnalysisReport(
        pitch_class_histogram=hist.tolist(),
        note_density=n_onsets / n_slots,
        chord_events=chords,
        repeated_rhythm_score=rhythm_score(onsets.sum(axis=0)),
        n_slots=n_slots,
    )
