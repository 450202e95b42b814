"""Note windows <-> 64x64 RGB piano-roll images, PNG I/O, and grid -> MIDI.

Each image column packs three consecutive slots into the R, G and B
channels, so a note covering the first two slots of a column lights it
yellow and a note covering all three lights it white. Image row 0 is the
highest pitch row.

Images are plain ``uint8`` arrays of shape ``(64, 64, 3)``.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .midi_io import EndOfTrack, MidiFile, NoteOn, Tempo, Track
from .preprocess import LOWEST_NOTE, N_ROWS, NORMAL_DIVISION, SLOT_TICKS, WINDOW_SLOTS, NoteGrid

__all__ = [
    "IMAGE_SIZE", "BadWindowShape", "BadImageShape", "PngDecodeError", "WrongDimensions",
    "encode_window", "decode_image", "window_to_midi", "write_png", "read_png",
    "velocity_to_level", "level_to_velocity",
]

IMAGE_SIZE = 64
BINARY_THRESHOLD = 128


class BadWindowShape(ValueError):
    pass


class BadImageShape(ValueError):
    pass


class PngDecodeError(ValueError):
    pass


class WrongDimensions(PngDecodeError):
    pass


def velocity_to_level(cells: np.ndarray) -> np.ndarray:
    """0..127 -> 0..255, rounding halves up."""
    c = np.asarray(cells, dtype=np.int32)
    return ((c * 510 + 127) // 254).astype(np.uint8)


def level_to_velocity(levels: np.ndarray) -> np.ndarray:
    """0..255 -> 0..127, rounding halves up."""
    lv = np.asarray(levels, dtype=np.int32)
    return ((lv * 254 + 255) // 510).astype(np.uint8)


def encode_window(window: NoteGrid) -> np.ndarray:
    cells = window.cells
    if cells.shape != (N_ROWS, WINDOW_SLOTS):
        raise BadWindowShape(f"window must be {N_ROWS}x{WINDOW_SLOTS}, got {cells.shape}")
    if window.mode == "binary":
        levels = np.where(cells != 0, 255, 0).astype(np.uint8)
    else:
        levels = velocity_to_level(cells)
    # (row, 3x+k) -> (row, x, k), then flip so higher pitches sit on top
    return np.ascontiguousarray(levels.reshape(N_ROWS, IMAGE_SIZE, 3)[::-1])


def decode_image(image: np.ndarray, mode: str = "binary") -> NoteGrid:
    image = np.asarray(image)
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise BadImageShape(f"image must be 64x64x3, got {image.shape}")
    if image.dtype != np.uint8:
        if not np.issubdtype(image.dtype, np.integer) or image.min() < 0 or image.max() > 255:
            raise BadImageShape(f"image levels must be integers in 0..255 (dtype {image.dtype})")
        image = image.astype(np.uint8)
    levels = image[::-1].reshape(N_ROWS, WINDOW_SLOTS)
    if mode == "binary":
        cells = np.where(levels >= BINARY_THRESHOLD, 127, 0).astype(np.uint8)
    elif mode == "velocity":
        cells = level_to_velocity(levels)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return NoteGrid(cells, mode)


def _runs(row: np.ndarray):
    """(start, end) of each maximal nonzero run."""
    active = np.concatenate(([False], row != 0, [False]))
    edges = np.flatnonzero(active[1:] != active[:-1])
    return zip(edges[::2], edges[1::2])


def window_to_midi(window: NoteGrid, mode: str | None = None) -> MidiFile:
    """Render a grid as a format-0 file at division 120, 120 bpm (one slot = 30 ticks).

    Each maximal run of sounding cells in a row becomes one note. Binary grids
    play at velocity 127; velocity grids use the run's loudest cell.
    """
    mode = mode or window.mode
    notes = []
    for row in range(window.cells.shape[0]):
        cells = window.cells[row]
        for start, end in _runs(cells):
            vel = 127 if mode == "binary" else int(cells[start:end].max())
            notes.append((int(start), int(end), row + LOWEST_NOTE, vel))
    events = []
    for start, end, pitch, vel in notes:
        events.append((start * SLOT_TICKS, 1, NoteOn(start * SLOT_TICKS, 0, pitch, vel)))
        events.append((end * SLOT_TICKS, 0, NoteOn(end * SLOT_TICKS, 0, pitch, 0)))
    events.sort(key=lambda e: (e[0], e[1], e[2].note))
    body = [e[2] for e in events]
    last = body[-1].tick if body else 0
    track = Track((Tempo(0, 500_000), *body, EndOfTrack(last)))
    return MidiFile(0, NORMAL_DIVISION, (track,))


def write_png(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3) or image.dtype != np.uint8:
        raise BadImageShape(f"expected uint8 array of shape (64, 64, 3), got {image.dtype} {image.shape}")
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def read_png(data: bytes) -> np.ndarray:
    """Decode a 64x64 8-bit RGB or RGBA PNG; alpha is dropped."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise PngDecodeError(f"cannot decode PNG: {exc}") from None
    if img.format != "PNG":
        raise PngDecodeError(f"not a PNG image ({img.format})")
    if img.size != (IMAGE_SIZE, IMAGE_SIZE):
        raise WrongDimensions(f"expected 64x64 image, got {img.size[0]}x{img.size[1]}")
    if img.mode not in ("RGB", "RGBA"):
        raise PngDecodeError(f"expected 8-bit RGB or RGBA, got mode {img.mode}")
    return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
