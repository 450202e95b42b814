"""scikit-learn style wrappers around the codec and the GAN.

``PianoRollEncoder`` is a transformer from MIDI files to image stacks (and
back via ``inverse_transform``); ``PianoRollGAN`` fits the adversarial pair
on an image stack and samples new images. Both follow the usual estimator
contract: constructor arguments are stored verbatim, learned state ends in
an underscore, and ``get_params``/``set_params``/``clone`` work.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dcgan
from .pianoroll import decode_image, encode_window, window_to_midi
from .preprocess import MODES, SILENCE_CAP, SUSTAIN_CAP, collapse_silence, concat_grids, midi_to_grid, segment
from .validation import as_midi, check_images

__all__ = ["PianoRollEncoder", "PianoRollGAN"]


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


class PianoRollEncoder(TransformerMixin, BaseEstimator):
    """MIDI corpus -> stack of 64x64 RGB piano-roll images.

    Parameters
    ----------
    mode : {"binary", "velocity"}
        Binary clamps every note to full level; velocity keeps dynamics.
    sustain_cap : float
        Seconds after which a held sustain pedal is treated as released.
    silence_cap : int
        Longest internal silence kept, in sixteenth-note slots.
    """

    def __init__(self, mode="binary", sustain_cap=SUSTAIN_CAP, silence_cap=SILENCE_CAP):
        self.mode = mode
        self.sustain_cap = sustain_cap
        self.silence_cap = silence_cap

    def fit(self, X, y=None):
        _check_mode(self.mode)
        if self.silence_cap < 0:
            raise ValueError("silence_cap must be non-negative")
        self.n_files_in_ = len(X)
        return self

    def transform(self, X):
        """Encode a sequence of MIDI files (objects, bytes or paths) as one corpus."""
        check_is_fitted(self, "n_files_in_")
        grids = [midi_to_grid(as_midi(item), self.mode, self.sustain_cap) for item in X]
        corpus = collapse_silence(concat_grids(grids, self.mode), self.silence_cap)
        windows = segment(corpus)
        if not windows:
            return np.zeros((0, 64, 64, 3), dtype=np.uint8)
        return np.stack([encode_window(w) for w in windows])

    def inverse_transform(self, X):
        """Decode images back into format-0 MIDI files, one per image."""
        X = check_images(X, allow_empty=True)
        return [window_to_midi(decode_image(img, self.mode)) for img in X]


class PianoRollGAN(BaseEstimator):
    """DCGAN fitted on piano-roll images.

    ``n_iter`` counts adversarial steps (one discriminator plus one generator
    update), not epochs. Calling :meth:`partial_fit` continues from the
    current state exactly as if training had never stopped.
    """

    def __init__(self, n_iter=50_000, batch_size=64, learning_rate=2e-4, beta1=0.5, beta2=0.999,
                 latent_dim=100, g_channels=(512, 256, 128, 64), checkpoint_every=0,
                 checkpoint_dir=None, mode="binary", random_state=0):
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.latent_dim = latent_dim
        self.g_channels = g_channels
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.mode = mode
        self.random_state = random_state

    def _config(self) -> dcgan.GanConfig:
        _check_mode(self.mode)
        seed = 0 if self.random_state is None else int(self.random_state)
        return dcgan.GanConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate, beta1=self.beta1,
            beta2=self.beta2, total_iterations=self.n_iter, seed=seed,
            checkpoint_every=self.checkpoint_every, mode=self.mode,
            latent_dim=self.latent_dim, g_channels=tuple(self.g_channels))

    def _record(self, report):
        self.state_ = report.state
        self.d_loss_curve_ = getattr(self, "d_loss_curve_", []) + report.d_losses
        self.g_loss_curve_ = getattr(self, "g_loss_curve_", []) + report.g_losses
        self.checkpoints_ = getattr(self, "checkpoints_", []) + report.checkpoints
        self.n_iter_ = self.state_.iteration

    def fit(self, X, y=None):
        X = check_images(X)
        for attr in ("d_loss_curve_", "g_loss_curve_", "checkpoints_"):
            self.__dict__.pop(attr, None)
        config = self._config()
        report = dcgan.train(config, X, checkpoint_dir=self.checkpoint_dir)
        self._record(report)
        return self

    def partial_fit(self, X, y=None, n_iter=None):
        """Train ``n_iter`` more steps (default: one)."""
        X = check_images(X)
        if not hasattr(self, "state_"):
            self.state_ = dcgan.init_state(self._config())
        report = dcgan.train(self.state_.config, X, state=self.state_,
                             iterations=1 if n_iter is None else n_iter,
                             checkpoint_dir=self.checkpoint_dir)
        self._record(report)
        return self

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "state_")
        seed = 0 if random_state is None else int(random_state)
        return dcgan.sample(self.state_, n_samples, seed)

    def sample_midi(self, n_samples=1, random_state=None):
        images = self.sample(n_samples, random_state)
        return [window_to_midi(decode_image(img, self.mode)) for img in images]

    def decision_function(self, X):
        """Discriminator probability that each image is real."""
        check_is_fitted(self, "state_")
        X = check_images(X)
        return dcgan.disc_forward(self.state_.discriminator, dcgan.images_to_tensor(X)).numpy()

    def save(self, path):
        check_is_fitted(self, "state_")
        Path(path).write_bytes(dcgan.save_checkpoint(self.state_))

    @classmethod
    def load(cls, path):
        state = dcgan.load_checkpoint(Path(path).read_bytes())
        c = state.config
        est = cls(n_iter=c.total_iterations, batch_size=c.batch_size, learning_rate=c.learning_rate,
                  beta1=c.beta1, beta2=c.beta2, latent_dim=c.latent_dim, g_channels=c.g_channels,
                  checkpoint_every=c.checkpoint_every, mode=c.mode, random_state=c.seed)
        est.state_ = state
        est.n_iter_ = state.iteration
        return est
