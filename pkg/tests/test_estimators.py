import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pianoroll_gan import PianoRollEncoder, PianoRollGAN
from pianoroll_gan.midi_io import NoteOn, parse_smf, write_smf
from pianoroll_gan.pianoroll import decode_image
from pianoroll_gan.pipeline import pad_window
from pianoroll_gan.preprocess import midi_to_grid
from pianoroll_gan.validation import as_midi, check_images

from conftest import MIDI_FIXTURES

SMALL = dict(latent_dim=16, g_channels=(32, 16, 8, 8), batch_size=4)


def fixture_paths(n=3):
    return sorted(MIDI_FIXTURES.glob("*.mid"))[:n]


def random_images(n, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.random((n, 64, 64, 3)) < 0.1).astype(np.uint8) * 255


def test_get_params_and_clone():
    enc = PianoRollEncoder(mode="velocity", silence_cap=8)
    assert enc.get_params() == {"mode": "velocity", "sustain_cap": 3.0, "silence_cap": 8}
    assert clone(enc).get_params() == enc.get_params()
    gan = PianoRollGAN(n_iter=5, **SMALL)
    copy = clone(gan)
    assert copy.get_params() == gan.get_params() and copy is not gan


def test_encoder_transform_shapes():
    enc = PianoRollEncoder().fit(fixture_paths())
    assert enc.n_files_in_ == 3
    images = enc.transform(fixture_paths())
    assert images.ndim == 4 and images.shape[1:] == (64, 64, 3) and images.dtype == np.uint8
    assert set(np.unique(images)) <= {0, 255}


def test_encoder_accepts_objects_bytes_and_paths():
    path = fixture_paths(1)[0]
    data = path.read_bytes()
    enc = PianoRollEncoder().fit([path])
    a, b, c = enc.transform([path]), enc.transform([data]), enc.transform([parse_smf(data)])
    assert np.array_equal(a, b) and np.array_equal(b, c)


def test_encoder_inverse_transform():
    enc = PianoRollEncoder().fit(fixture_paths())
    images = enc.transform(fixture_paths())
    midis = enc.inverse_transform(images)
    assert len(midis) == len(images)
    for midi in midis:
        assert parse_smf(write_smf(midi)) == midi
    for img, midi in zip(images, midis):
        assert np.array_equal(pad_window(midi_to_grid(midi)).active(), decode_image(img).active())


def test_encoder_errors():
    with pytest.raises(NotFittedError):
        PianoRollEncoder().transform(fixture_paths(1))
    with pytest.raises(ValueError):
        PianoRollEncoder(mode="color").fit([])
    with pytest.raises(TypeError):
        PianoRollEncoder().fit([1]).transform([1])


def test_check_images():
    assert check_images(np.zeros((64, 64, 3))).shape == (1, 64, 64, 3)
    with pytest.raises(ValueError):
        check_images(np.zeros((2, 32, 32, 3)))
    with pytest.raises(ValueError):
        check_images(np.full((1, 64, 64, 3), 300))
    with pytest.raises(ValueError):
        check_images(np.zeros((0, 64, 64, 3)))
    assert check_images(np.zeros((0, 64, 64, 3)), allow_empty=True).shape[0] == 0


def test_as_midi_rejects_other_types():
    with pytest.raises(TypeError):
        as_midi(3.5)


def test_gan_fit_sample_and_partial_fit_equivalence(tmp_path):
    X = random_images(6)
    full = PianoRollGAN(n_iter=6, random_state=3, **SMALL).fit(X)
    assert full.n_iter_ == 6 and len(full.g_loss_curve_) == 6
    split = PianoRollGAN(n_iter=6, random_state=3, **SMALL).partial_fit(X, n_iter=2).partial_fit(X, n_iter=4)
    assert split.g_loss_curve_ == full.g_loss_curve_
    assert np.array_equal(full.sample(5, random_state=1), split.sample(5, random_state=1))

    path = tmp_path / "model.pgan"
    full.save(path)
    loaded = PianoRollGAN.load(path)
    assert loaded.n_iter_ == 6 and loaded.get_params()["g_channels"] == (32, 16, 8, 8)
    assert np.array_equal(loaded.sample(3, random_state=2), full.sample(3, random_state=2))

    scores = full.decision_function(X)
    assert scores.shape == (6,) and np.all((scores > 0) & (scores < 1))


def test_gan_sample_midi():
    gan = PianoRollGAN(n_iter=1, **SMALL).fit(random_images(4))
    midis = gan.sample_midi(2, random_state=0)
    assert len(midis) == 2
    for midi in midis:
        assert midi.format == 0 and parse_smf(write_smf(midi)) == midi
        assert all(0 <= e.note - 28 < 64 for e in midi.tracks[0].events if isinstance(e, NoteOn))


def test_gan_requires_fit():
    with pytest.raises(NotFittedError):
        PianoRollGAN().sample(1)
