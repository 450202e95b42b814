"""DCGAN over 64x64 RGB piano-roll images.

The generator lifts a 100-d latent through transposed convolutions
(100 -> 512 -> 256 -> 128 -> 64 -> 3, tanh output); the discriminator
mirrors it with strided convolutions down to one sigmoid probability.
Training alternates one discriminator and one generator Adam update per
batch using binary cross-entropy.

Everything that influences the loss series (weights, optimizer moments,
batch-norm statistics, latent RNG, data order) is captured by
:func:`save_checkpoint`, so interrupted runs resume bit-exactly.
"""
from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import math
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

__all__ = [
    "GanConfig", "Architecture", "TrainState", "TrainReport", "CheckpointRef",
    "Generator", "Discriminator",
    "ShapeMismatch", "NonFiniteLoss", "EmptyDataset", "CheckpointError", "CorruptCheckpoint",
    "VersionMismatch",
    "init_params", "init_state", "gen_forward", "disc_forward", "discriminator_loss",
    "generator_loss", "train_step", "train",
    "save_checkpoint", "load_checkpoint", "sample", "images_to_tensor", "write_loss_csv",
]

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PRGANCKP"
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


class EmptyDataset(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


@dataclass(frozen=True)
class Architecture:
    latent_dim: int = 100
    g_channels: tuple = (512, 256, 128, 64)
    image_channels: int = 3
    leak: float = 0.2

    @property
    def d_channels(self) -> tuple:
        return tuple(reversed(self.g_channels))

    @property
    def image_size(self) -> int:
        return 4 * 2 ** len(self.g_channels)

    def describe(self) -> dict:
        return {"latent_dim": self.latent_dim, "g_channels": list(self.g_channels),
                "d_channels": list(self.d_channels), "image_channels": self.image_channels,
                "image_size": self.image_size, "leak": self.leak}

    @classmethod
    def from_description(cls, desc: dict) -> "Architecture":
        return cls(desc["latent_dim"], tuple(desc["g_channels"]), desc["image_channels"], desc["leak"])


@dataclass
class GanConfig:
    batch_size: int = 64
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    total_iterations: int = 50_000
    seed: int = 0
    checkpoint_every: int = 5_000
    mode: str = "binary"
    dataset: str | None = None
    latent_dim: int = 100
    g_channels: tuple = (512, 256, 128, 64)
    single_thread: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        self.g_channels = tuple(self.g_channels)

    @property
    def architecture(self) -> Architecture:
        return Architecture(self.latent_dim, self.g_channels)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["g_channels"] = list(self.g_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Generator(nn.Module):
    def __init__(self, arch: Architecture = Architecture()):
        super().__init__()
        self.arch = arch
        chans = arch.g_channels
        layers = [nn.ConvTranspose2d(arch.latent_dim, chans[0], 4, 1, 0, bias=False),
                  nn.BatchNorm2d(chans[0]), nn.ReLU(True)]
        for c_in, c_out in zip(chans, chans[1:]):
            layers += [nn.ConvTranspose2d(c_in, c_out, 4, 2, 1, bias=False),
                       nn.BatchNorm2d(c_out), nn.ReLU(True)]
        layers += [nn.ConvTranspose2d(chans[-1], arch.image_channels, 4, 2, 1, bias=False), nn.Tanh()]
        self.main = nn.Sequential(*layers)

    def forward(self, z):
        return self.main(z)


class Discriminator(nn.Module):
    def __init__(self, arch: Architecture = Architecture()):
        super().__init__()
        self.arch = arch
        chans = arch.d_channels
        layers = [nn.Conv2d(arch.image_channels, chans[0], 4, 2, 1, bias=False),
                  nn.LeakyReLU(arch.leak, inplace=True)]
        for c_in, c_out in zip(chans, chans[1:]):
            layers += [nn.Conv2d(c_in, c_out, 4, 2, 1, bias=False),
                       nn.BatchNorm2d(c_out), nn.LeakyReLU(arch.leak, inplace=True)]
        layers += [nn.Conv2d(chans[-1], 1, 4, 1, 0, bias=False), nn.Sigmoid()]
        self.main = nn.Sequential(*layers)

    def forward(self, x):
        return self.main(x).view(-1)


def _weights_init(module: nn.Module, gen: torch.Generator):
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight.data, 0.0, 0.02, generator=gen)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight.data, 1.0, 0.02, generator=gen)
        nn.init.constant_(module.bias.data, 0)


def init_params(arch: Architecture = Architecture(), seed: int = 0):
    """Fresh ``(generator, discriminator)`` pair; deterministic in ``seed``."""
    gen = torch.Generator().manual_seed(seed)
    g, d = Generator(arch), Discriminator(arch)
    for net in (g, d):
        for m in net.modules():
            _weights_init(m, gen)
    return g, d


def _check_latent(z: torch.Tensor, latent_dim: int) -> torch.Tensor:
    if z.dim() == 2:
        z = z[:, :, None, None]
    if z.dim() != 4 or z.shape[1:] != (latent_dim, 1, 1) or z.shape[0] < 1:
        raise ShapeMismatch(f"latent batch must be (n, {latent_dim}, 1, 1), got {tuple(z.shape)}")
    return z


def _check_images(x: torch.Tensor, arch: Architecture) -> torch.Tensor:
    want = (arch.image_channels, arch.image_size, arch.image_size)
    if x.dim() != 4 or tuple(x.shape[1:]) != want or x.shape[0] < 1:
        raise ShapeMismatch(f"image batch must be (n, {want[0]}, {want[1]}, {want[2]}), got {tuple(x.shape)}")
    return x


@torch.no_grad()
def gen_forward(generator: Generator, z) -> torch.Tensor:
    """Inference-mode generator pass (batch-norm uses running statistics)."""
    z = _check_latent(torch.as_tensor(z, dtype=torch.float32), generator.arch.latent_dim)
    was_training = generator.training
    generator.eval()
    try:
        return generator(z)
    finally:
        generator.train(was_training)


@torch.no_grad()
def disc_forward(discriminator: Discriminator, images) -> torch.Tensor:
    x = _check_images(torch.as_tensor(images, dtype=torch.float32), discriminator.arch)
    was_training = discriminator.training
    discriminator.eval()
    try:
        return discriminator(x)
    finally:
        discriminator.train(was_training)


def images_to_tensor(images: np.ndarray) -> torch.Tensor:
    """uint8 ``(n, 64, 64, 3)`` -> float ``(n, 3, 64, 64)`` scaled to [-1, 1]."""
    x = torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2).float()
    return x / 127.5 - 1.0


def _seeds(seed: int):
    init, noise, data = np.random.SeedSequence(seed).generate_state(3)
    return int(init), int(noise), int(data)


@dataclass
class TrainState:
    """Mutable training state; :func:`train_step` updates it in place."""

    config: GanConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    noise_rng: torch.Generator
    data_rng: np.random.Generator
    iteration: int = 0
    order: np.ndarray | None = None
    cursor: int = 0

    @property
    def architecture(self) -> Architecture:
        return self.generator.arch

    def next_indices(self, n_items: int) -> np.ndarray:
        """Next batch of dataset indices, reshuffling at every epoch boundary."""
        if self.order is not None and len(self.order) != n_items:
            raise ValueError(f"data order covers {len(self.order)} items but dataset has {n_items}")
        out = []
        while len(out) < self.config.batch_size:
            if self.order is None or self.cursor >= len(self.order):
                self.order = self.data_rng.permutation(n_items)
                self.cursor = 0
            take = min(self.config.batch_size - len(out), len(self.order) - self.cursor)
            out.extend(self.order[self.cursor:self.cursor + take].tolist())
            self.cursor += take
        return np.asarray(out, dtype=np.int64)


def _adam(params, config: GanConfig):
    return torch.optim.Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2))


def init_state(config: GanConfig) -> TrainState:
    init_seed, noise_seed, data_seed = _seeds(config.seed)
    g, d = init_params(config.architecture, init_seed)
    return TrainState(
        config=config, generator=g, discriminator=d,
        opt_g=_adam(g.parameters(), config), opt_d=_adam(d.parameters(), config),
        noise_rng=torch.Generator().manual_seed(noise_seed),
        data_rng=np.random.Generator(np.random.PCG64(data_seed)),
    )


_bce = nn.BCELoss()


def discriminator_loss(out_real: torch.Tensor, out_fake: torch.Tensor) -> torch.Tensor:
    """BCE with real labelled 1 and fake labelled 0, summed over the two halves."""
    return _bce(out_real, torch.ones_like(out_real)) + _bce(out_fake, torch.zeros_like(out_fake))


def generator_loss(out_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating BCE: fakes scored against the real label."""
    return _bce(out_fake, torch.ones_like(out_fake))


def _check_finite(state: TrainState, *outputs: torch.Tensor) -> None:
    # BCE rejects NaN inputs with a generic error; report the iteration instead.
    for out in outputs:
        if not torch.isfinite(out).all():
            raise NonFiniteLoss(f"non-finite discriminator output at iteration {state.iteration + 1}")


def train_step(state: TrainState, real_batch: torch.Tensor):
    """One discriminator update then one generator update.

    ``real_batch`` holds images scaled to [-1, 1]. Returns ``(d_loss, g_loss)``.
    """
    g, d = state.generator, state.discriminator
    real = _check_images(torch.as_tensor(real_batch, dtype=torch.float32), g.arch)
    n = real.shape[0]
    g.train()
    d.train()

    state.opt_d.zero_grad()
    out_real = d(real)
    z = torch.randn(n, g.arch.latent_dim, 1, 1, generator=state.noise_rng)
    fake = g(z)
    out_fake = d(fake.detach())
    _check_finite(state, out_real, out_fake)
    d_loss = discriminator_loss(out_real, out_fake)
    d_loss.backward()
    state.opt_d.step()

    state.opt_g.zero_grad()
    out = d(fake)
    _check_finite(state, out)
    g_loss = generator_loss(out)
    g_loss.backward()
    state.opt_g.step()

    state.iteration += 1
    dl, gl = d_loss.item(), g_loss.item()
    if not (math.isfinite(dl) and math.isfinite(gl)):
        raise NonFiniteLoss(
            f"non-finite loss at iteration {state.iteration}: d_loss={dl} g_loss={gl} "
            f"(D(real) mean {out_real.mean().item():.4g}, D(fake) mean {out_fake.mean().item():.4g})")
    return dl, gl


@dataclass
class CheckpointRef:
    iteration: int
    path: str | None = None


@dataclass
class TrainReport:
    d_losses: list = field(default_factory=list)
    g_losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    start_iteration: int = 0
    wall_seconds: float = 0.0
    state: TrainState | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.g_losses)


@contextlib.contextmanager
def _single_thread(enabled: bool):
    if not enabled:
        yield
        return
    before = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(before)


def train(config: GanConfig, dataset: np.ndarray, state: TrainState | None = None,
          iterations: int | None = None, checkpoint_dir=None, on_checkpoint=None) -> TrainReport:
    """Run adversarial training over a uint8 ``(n, 64, 64, 3)`` image array.

    Without ``iterations`` the run continues until ``config.total_iterations``
    steps have been taken in total. A checkpoint is emitted every
    ``config.checkpoint_every`` steps and once at the end; each one is written
    to ``checkpoint_dir`` when given and passed to ``on_checkpoint(state)``.
    """
    dataset = np.asarray(dataset)
    if dataset.ndim != 4 or dataset.shape[0] == 0:
        raise EmptyDataset("dataset must contain at least one image")
    if state is None:
        state = init_state(config)
    size = state.architecture.image_size
    if dataset.shape[1:] != (size, size, state.architecture.image_channels):
        raise ShapeMismatch(f"dataset images must be {size}x{size}x3, got {dataset.shape[1:]}")
    if iterations is None:
        iterations = max(0, config.total_iterations - state.iteration)
    report = TrainReport(start_iteration=state.iteration, state=state)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    def emit():
        path = None
        if checkpoint_dir is not None:
            path = checkpoint_dir / f"ckpt_{state.iteration:07d}.pgan"
            _atomic_write(path, save_checkpoint(state))
            path = str(path)
        report.checkpoints.append(CheckpointRef(state.iteration, path))
        if on_checkpoint is not None:
            on_checkpoint(state)

    started = time.perf_counter()
    with _single_thread(config.single_thread):
        end = state.iteration + iterations
        while state.iteration < end:
            idx = state.next_indices(len(dataset))
            d_loss, g_loss = train_step(state, images_to_tensor(dataset[idx]))
            report.d_losses.append(d_loss)
            report.g_losses.append(g_loss)
            if config.checkpoint_every and state.iteration % config.checkpoint_every == 0 \
                    and state.iteration != end:
                emit()
            if state.iteration % 100 == 0:
                logger.info("iteration %d  d_loss %.4f  g_loss %.4f", state.iteration, d_loss, g_loss)
        emit()
    report.wall_seconds = time.perf_counter() - started
    return report


def write_loss_csv(report: TrainReport, path) -> None:
    lines = ["iteration,d_loss,g_loss"]
    for i, (dl, gl) in enumerate(zip(report.d_losses, report.g_losses), start=report.start_iteration + 1):
        lines.append(f"{i},{dl!r},{gl!r}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --- checkpoint container --------------------------------------------------
#
# MAGIC(8) | version u32 | header length u32 | header JSON | float32 LE blob | sha256(32)

def _named_tensors(state: TrainState):
    for prefix, net in (("generator", state.generator), ("discriminator", state.discriminator)):
        for name, t in net.state_dict().items():
            if t.is_floating_point():
                yield f"{prefix}/{name}", t
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for i, st in sorted(opt.state_dict()["state"].items()):
            for key in ("exp_avg", "exp_avg_sq"):
                yield f"{prefix}/{i}/{key}", st[key]


def save_checkpoint(state: TrainState) -> bytes:
    index, blobs, offset = [], [], 0
    for name, t in _named_tensors(state):
        arr = t.detach().cpu().numpy().astype("<f4", copy=False)
        raw = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    int_buffers = {}
    for prefix, net in (("generator", state.generator), ("discriminator", state.discriminator)):
        for name, t in net.state_dict().items():
            if not t.is_floating_point():
                int_buffers[f"{prefix}/{name}"] = int(t.item())
    steps = {prefix: {str(i): float(st["step"]) for i, st in opt.state_dict()["state"].items()}
             for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d))}
    header = {
        "architecture": state.architecture.describe(),
        "config": state.config.to_dict(),
        "iteration": state.iteration,
        "tensors": index,
        "int_buffers": int_buffers,
        "adam_steps": steps,
        "rng": {"noise": state.noise_rng.get_state().numpy().tobytes().hex(),
                "data": state.data_rng.bit_generator.state},
        "order": None if state.order is None else state.order.tolist(),
        "cursor": state.cursor,
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(head)) + head + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def load_checkpoint(data: bytes, architecture: Architecture | None = None) -> TrainState:
    """Rebuild a :class:`TrainState` from :func:`save_checkpoint` bytes.

    Raises :class:`VersionMismatch` when the container version or the stored
    architecture differs from ``architecture`` (if given), and
    :class:`CorruptCheckpoint` on truncation or checksum failure.
    """
    data = bytes(data)
    if len(data) < 16 + 32 or data[:8] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic or too short)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint("checksum mismatch (file truncated or damaged)")
    version, head_len = struct.unpack("<II", body[8:16])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    try:
        header = json.loads(body[16:16 + head_len])
    except ValueError as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None
    blob = body[16 + head_len:]

    arch = Architecture.from_description(header["architecture"])
    if architecture is not None and arch != architecture:
        raise VersionMismatch(f"checkpoint architecture {arch} does not match {architecture}")
    config = GanConfig.from_dict(header["config"])
    state = init_state(config)
    if state.architecture != arch:
        raise CorruptCheckpoint("stored config disagrees with stored architecture")

    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 4 * count > len(blob):
            raise CorruptCheckpoint(f"tensor {entry['name']} runs past end of data")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(np.float32))

    for prefix, net in (("generator", state.generator), ("discriminator", state.discriminator)):
        sd = {}
        for name, t in net.state_dict().items():
            key = f"{prefix}/{name}"
            if t.is_floating_point():
                if key not in tensors or tuple(tensors[key].shape) != tuple(t.shape):
                    raise VersionMismatch(f"tensor {key} missing or misshapen")
                sd[name] = tensors[key]
            else:
                sd[name] = torch.tensor(header["int_buffers"][key], dtype=t.dtype)
        net.load_state_dict(sd)

    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        sd = opt.state_dict()
        sd["state"] = {
            int(i): {"step": torch.tensor(step),
                     "exp_avg": tensors[f"{prefix}/{i}/exp_avg"],
                     "exp_avg_sq": tensors[f"{prefix}/{i}/exp_avg_sq"]}
            for i, step in header["adam_steps"][prefix].items()}
        opt.load_state_dict(sd)

    noise = np.frombuffer(bytes.fromhex(header["rng"]["noise"]), dtype=np.uint8)
    state.noise_rng.set_state(torch.from_numpy(noise.copy()))
    state.data_rng.bit_generator.state = header["rng"]["data"]
    state.order = None if header["order"] is None else np.asarray(header["order"], dtype=np.int64)
    state.cursor = header["cursor"]
    state.iteration = header["iteration"]
    return state


def sample(source, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` images as uint8 ``(n, 64, 64, 3)`` from standard-normal latents.

    ``source`` is a :class:`TrainState`, a :class:`Generator`, or checkpoint bytes.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(source, (bytes, bytearray)):
        source = load_checkpoint(source)
    g = source.generator if isinstance(source, TrainState) else source
    z = torch.randn(n, g.arch.latent_dim, 1, 1, generator=torch.Generator().manual_seed(seed))
    x = gen_forward(g, z).double()
    levels = torch.floor((x + 1.0) * 127.5 + 0.5).clamp(0, 255).to(torch.uint8)
    return levels.permute(0, 2, 3, 1).contiguous().numpy()
