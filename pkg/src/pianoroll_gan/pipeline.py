"""End-to-end helpers shared by the CLI and the estimators."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .midi_io import MidiError, parse_smf, read_midi, write_smf
from .pianoroll import decode_image, encode_window, window_to_midi
from .preprocess import (
    SILENCE_CAP, SUSTAIN_CAP, WINDOW_SLOTS, NoteGrid, collapse_silence, concat_grids, midi_to_grid,
    segment,
)

__all__ = [
    "MANIFEST_SCHEMA_VERSION", "NoValidInputs", "SourceResult", "find_midi_files", "grid_from_path",
    "build_dataset", "RoundtripResult", "roundtrip_check", "pad_window",
]

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
MIDI_SUFFIXES = (".mid", ".midi", ".smf")


class NoValidInputs(ValueError):
    pass


def find_midi_files(directory) -> list:
    """MIDI files directly inside ``directory``, sorted by file name."""
    directory = Path(directory)
    files = [p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in MIDI_SUFFIXES]
    return sorted(files, key=lambda p: p.name)


@dataclass
class SourceResult:
    file: str
    grid: NoteGrid | None
    error: str | None = None


def grid_from_path(path, mode: str = "binary", cap_s=SUSTAIN_CAP) -> SourceResult:
    try:
        return SourceResult(Path(path).name, midi_to_grid(read_midi(path), mode, cap_s))
    except (MidiError, OSError) as exc:
        return SourceResult(Path(path).name, None, f"{type(exc).__name__}: {exc}")


def _grid_job(args):
    return grid_from_path(*args)


def build_dataset(paths, mode: str = "binary", cap_s=SUSTAIN_CAP, silence_cap: int = SILENCE_CAP,
                  jobs: int = 1):
    """Turn MIDI files into piano-roll images.

    Files are processed in the order given (callers pass them sorted), joined
    into one grid, stripped of long silences and cut into 192-slot windows.
    Unparseable files are skipped with a warning. Returns ``(images, manifest)``.
    """
    paths = list(paths)
    work = [(p, mode, cap_s) for p in paths]
    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_job, work))  # map keeps input order
    else:
        results = [_grid_job(w) for w in work]

    good = []
    sources = []
    for res in results:
        if res.grid is None:
            logger.warning("skipping %s: %s", res.file, res.error)
            sources.append({"file": res.file, "status": "skipped", "error": res.error})
        else:
            good.append(res.grid)
            sources.append({"file": res.file, "status": "ok", "slots": res.grid.n_slots})
    if not good:
        raise NoValidInputs("no parseable MIDI files among the inputs")

    corpus = collapse_silence(concat_grids(good, mode), silence_cap)
    windows = segment(corpus, WINDOW_SLOTS)
    images = (np.stack([encode_window(w) for w in windows]) if windows
              else np.zeros((0, 64, 64, 3), dtype=np.uint8))
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "mode": mode,
        "settings": {"sustain_cap_s": cap_s, "silence_cap_slots": silence_cap,
                     "window_slots": WINDOW_SLOTS, "slot_seconds": 0.125},
        "sources": sources,
        "counts": {"files": len(paths), "parsed": len(good), "skipped": len(paths) - len(good),
                   "slots": corpus.n_slots, "images": len(windows),
                   "dropped_slots": corpus.n_slots - len(windows) * WINDOW_SLOTS},
        "images": [f"{i:06d}.png" for i in range(len(windows))],
    }
    return images, manifest


def pad_window(grid: NoteGrid, n_slots: int = WINDOW_SLOTS) -> NoteGrid:
    if grid.n_slots > n_slots:
        raise ValueError(f"grid of {grid.n_slots} slots does not fit in {n_slots}")
    cells = np.zeros((grid.cells.shape[0], n_slots), dtype=np.uint8)
    cells[:, :grid.n_slots] = grid.cells
    return NoteGrid(cells, grid.mode)


@dataclass
class RoundtripResult:
    file: str
    ok: bool
    windows: int = 0
    message: str = ""


def roundtrip_check(path, mode: str = "binary", cap_s=SUSTAIN_CAP) -> RoundtripResult:
    """preprocess -> encode -> decode -> MIDI -> preprocess, comparing activity bitmaps.

    Every window is checked, including a zero-padded trailing partial one.
    """
    name = Path(path).name
    res = grid_from_path(path, mode, cap_s)
    if res.grid is None:
        return RoundtripResult(name, False, 0, res.error)
    grid = collapse_silence(res.grid)
    n_full = grid.n_slots // WINDOW_SLOTS
    windows = segment(grid)
    if grid.n_slots % WINDOW_SLOTS:
        windows.append(pad_window(NoteGrid(grid.cells[:, n_full * WINDOW_SLOTS:], mode)))
    for i, window in enumerate(windows):
        decoded = decode_image(encode_window(window), mode)
        if not np.array_equal(decoded.active(), window.active()):
            return RoundtripResult(name, False, len(windows), f"window {i}: image codec changed activity")
        midi = parse_smf(write_smf(window_to_midi(decoded, mode)))
        again = midi_to_grid(midi, mode)
        if again.n_slots > WINDOW_SLOTS:
            return RoundtripResult(name, False, len(windows), f"window {i}: MIDI grew to {again.n_slots} slots")
        if not np.array_equal(pad_window(again).active(), window.active()):
            diff = int((pad_window(again).active() != window.active()).sum())
            return RoundtripResult(name, False, len(windows), f"window {i}: {diff} cells differ after MIDI round trip")
    return RoundtripResult(name, True, len(windows))
