"""Input checks used by the estimator wrappers."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .midi_io import MidiFile, parse_smf, read_midi

__all__ = ["check_images", "as_midi"]


def check_images(X, *, allow_empty: bool = False) -> np.ndarray:
    """Validate a stack of piano-roll images and return it as uint8 ``(n, 64, 64, 3)``.

    A single ``(64, 64, 3)`` image is promoted to a batch of one.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1:] != (64, 64, 3):
        raise ValueError(f"expected images of shape (n, 64, 64, 3), got {X.shape}")
    if X.shape[0] == 0 and not allow_empty:
        raise ValueError("found array with 0 images")
    if X.dtype != np.uint8:
        if not np.issubdtype(X.dtype, np.number):
            raise ValueError(f"image dtype must be numeric, got {X.dtype}")
        if X.size and (not np.all(np.isfinite(X)) or X.min() < 0 or X.max() > 255
                       or np.any(X != np.round(X))):
            raise ValueError("image levels must be integers in 0..255")
        X = X.astype(np.uint8)
    return X


def as_midi(item) -> MidiFile:
    """Accept a MidiFile, SMF bytes, or a path."""
    if isinstance(item, MidiFile):
        return item
    if isinstance(item, (bytes, bytearray, memoryview)):
        return parse_smf(bytes(item))
    if isinstance(item, (str, Path)):
        return read_midi(item)
    raise TypeError(f"cannot interpret {type(item).__name__} as a MIDI file")
