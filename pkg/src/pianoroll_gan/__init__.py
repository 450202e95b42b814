"""MIDI piano recordings as 64x64 RGB piano-roll images, and a DCGAN trained on them."""

__version__ = "0.1.0"

from .estimators import PianoRollEncoder, PianoRollGAN  # noqa: E402

__all__ = ["PianoRollEncoder", "PianoRollGAN", "__version__"]
