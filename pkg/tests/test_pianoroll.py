import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from pianoroll_gan.midi_io import EndOfTrack, NoteOn, Tempo, parse_smf, write_smf
from pianoroll_gan.pianoroll import (
    BadImageShape, BadWindowShape, PngDecodeError, WrongDimensions, decode_image, encode_window,
    level_to_velocity, read_png, velocity_to_level, window_to_midi, write_png,
)
from pianoroll_gan.pipeline import pad_window
from pianoroll_gan.preprocess import NoteGrid, midi_to_grid

binary_windows = arrays(np.bool_, (64, 192)).map(lambda a: NoteGrid(a.astype(np.uint8) * 127, "binary"))


def window_with(row, slots, value=127, mode="binary"):
    cells = np.zeros((64, 192), np.uint8)
    cells[row, slots] = value
    return NoteGrid(cells, mode)


# --- encode -------------------------------------------------------------------

def test_two_slot_note_is_yellow():
    img = encode_window(window_with(40, [0, 1]))
    assert tuple(img[63 - 40, 0]) == (255, 255, 0)


def test_three_slot_note_is_white():
    img = encode_window(window_with(40, [0, 1, 2]))
    assert tuple(img[23, 0]) == (255, 255, 255)


def test_silent_window_is_black():
    assert not encode_window(NoteGrid.empty(192)).any()


def test_bad_window_shape():
    with pytest.raises(BadWindowShape):
        encode_window(NoteGrid.empty(100))


def test_high_pitches_on_top():
    img = encode_window(window_with(63, [3]))
    assert tuple(img[0, 1]) == (255, 0, 0)


# --- decode -------------------------------------------------------------------

def test_yellow_pixel_decodes_to_two_slots():
    img = np.zeros((64, 64, 3), np.uint8)
    img[23, 0] = (255, 255, 0)
    cells = decode_image(img).cells
    assert cells[40, 0] == cells[40, 1] == 127 and cells[40, 2] == 0
    assert cells.sum() == 2 * 127


def test_binary_threshold():
    img = np.zeros((64, 64, 3), np.uint8)
    img[0, 0] = (128, 127, 0)
    cells = decode_image(img).cells
    assert cells[63, 0] == 127 and cells[63, 1] == 0


def test_bad_image_shape():
    with pytest.raises(BadImageShape):
        decode_image(np.zeros((32, 32, 3), np.uint8))


@given(binary_windows)
@settings(max_examples=200, deadline=None)
def test_binary_round_trip(window):
    assert decode_image(encode_window(window)) == window


@given(binary_windows, binary_windows)
@settings(max_examples=100, deadline=None)
def test_encode_is_injective(a, b):
    if a != b:
        assert not np.array_equal(encode_window(a), encode_window(b))


def test_velocity_round_trip_exhaustive():
    v = np.arange(128)
    assert np.array_equal(level_to_velocity(velocity_to_level(v)), v)
    assert velocity_to_level(np.array([0, 127]))[1] == 255
    cells = np.zeros((64, 192), np.uint8)
    cells[:, :128] = v
    w = NoteGrid(cells, "velocity")
    assert decode_image(encode_window(w), "velocity") == w


def test_velocity_level_rounding():
    # 1 * 255/127 = 2.007 -> 2; 64 * 255/127 = 128.5 -> 129
    assert velocity_to_level(np.array([1, 64])).tolist() == [2, 129]


# --- window -> MIDI ------------------------------------------------------------

def test_run_becomes_one_note():
    midi = window_to_midi(window_with(32, [0, 1, 2, 3]))
    assert midi.format == 0 and midi.division == 120
    assert midi.tracks[0].events == (Tempo(0, 500_000), NoteOn(0, 0, 60, 127), NoteOn(120, 0, 60, 0),
                                     EndOfTrack(120))


def test_empty_window_midi():
    midi = window_to_midi(NoteGrid.empty(192))
    assert midi.tracks[0].events == (Tempo(0, 500_000), EndOfTrack(0))


def test_gap_splits_runs():
    midi = window_to_midi(window_with(32, [0, 1, 3]))
    ons = [e for e in midi.tracks[0].events if isinstance(e, NoteOn) and e.velocity]
    assert [e.tick for e in ons] == [0, 90]


def test_velocity_run_uses_max():
    cells = np.zeros((64, 192), np.uint8)
    cells[10, 5:8] = [30, 90, 60]
    ons = [e for e in window_to_midi(NoteGrid(cells, "velocity")).tracks[0].events
           if isinstance(e, NoteOn) and e.velocity]
    assert [(e.note, e.velocity) for e in ons] == [(38, 90)]


@given(binary_windows)
@settings(max_examples=60, deadline=None)
def test_midi_round_trip_reproduces_activity(window):
    again = midi_to_grid(parse_smf(write_smf(window_to_midi(window))))
    assert np.array_equal(pad_window(again).active(), window.active())


# --- PNG ----------------------------------------------------------------------

def test_png_round_trip_black_and_random():
    black = np.zeros((64, 64, 3), np.uint8)
    assert np.array_equal(read_png(write_png(black)), black)
    noise = np.random.default_rng(1).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    assert np.array_equal(read_png(write_png(noise)), noise)


def _png(img, mode):
    buf = io.BytesIO()
    Image.fromarray(img, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def test_png_wrong_dimensions():
    with pytest.raises(WrongDimensions):
        read_png(_png(np.zeros((32, 32, 3), np.uint8), "RGB"))


def test_png_rgba_alpha_dropped():
    rgba = np.random.default_rng(2).integers(0, 256, (64, 64, 4), dtype=np.uint8)
    rgba[..., 3] = 255
    assert np.array_equal(read_png(_png(rgba, "RGBA")), rgba[..., :3])


def test_png_garbage_and_grayscale_rejected():
    with pytest.raises(PngDecodeError):
        read_png(b"not a png")
    with pytest.raises(PngDecodeError):
        read_png(_png(np.zeros((64, 64), np.uint8), "L"))
