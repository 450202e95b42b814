"""Command line front end: ``pianoroll-gan <command> ...``.

Every command exits 0 on success and otherwise prints one line
``pianoroll-gan: error: <Kind>: <message>`` to stderr. Outputs are staged
in a temporary location and moved into place only when complete; set
``PIANOROLL_GAN_TMPDIR`` to choose where staging happens.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import analyze
from .dcgan import (
    GanConfig, NonFiniteLoss, init_state, load_checkpoint, sample, train, write_loss_csv,
)
from .midi_io import MidiError, from_mtx, parse_smf, to_mtx, write_smf
from .pianoroll import decode_image, read_png, window_to_midi, write_png
from .pipeline import build_dataset, find_midi_files, roundtrip_check
from .preprocess import SUSTAIN_CAP, concat_grids, midi_to_grid

logger = logging.getLogger("pianoroll_gan")

PROG = "pianoroll-gan"
TMP_ENV = "PIANOROLL_GAN_TMPDIR"

PRESETS = {
    "base": {"mode": "binary", "iterations": 50_000},
    "extra-iterations": {"mode": "binary", "extra_iterations": 20_000},
    "small-corpus": {"mode": "binary", "iterations": 50_000},
    "full-dynamics": {"mode": "velocity", "iterations": 50_000},
}


class CliError(Exception):
    pass


def _staging_dir(near: Path) -> Path:
    base = os.environ.get(TMP_ENV) or str(near.parent)
    Path(base).mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=".pianoroll-gan-", dir=base))


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    stage = _staging_dir(path)
    try:
        tmp = stage / path.name
        tmp.write_bytes(data)
        shutil.move(str(tmp), str(path))
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _publish_dir(stage: Path, out_dir: Path) -> None:
    if out_dir.exists():
        if any(out_dir.iterdir()):
            raise CliError(f"output directory {out_dir} is not empty")
        out_dir.rmdir()
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    shutil.move(str(stage), str(out_dir))


def _preset(name):
    if name is None:
        return {}
    return PRESETS[name]


def _load_images(dataset_dir: Path) -> np.ndarray:
    files = sorted(p for p in dataset_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise CliError(f"no PNG images in {dataset_dir}")
    return np.stack([read_png(p.read_bytes()) for p in files])


# --- commands ---------------------------------------------------------------

def cmd_convert(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    direction = args.to or ("midi" if src.suffix.lower() in (".mtx", ".txt") else "mtx")
    data = src.read_bytes()
    if direction == "mtx":
        out = to_mtx(parse_smf(data)).encode("utf-8")
    else:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CliError(f"{src} is not UTF-8 text: {exc}") from None
        out = write_smf(from_mtx(text))
    _write_atomic(dst, out)
    return 0


def cmd_build_dataset(args) -> int:
    mode = args.mode or _preset(args.preset).get("mode", "binary")
    midi_dir, out_dir = Path(args.midi_dir), Path(args.out_dir)
    files = find_midi_files(midi_dir)
    images, manifest = build_dataset(files, mode, args.sustain_cap, jobs=args.jobs)
    manifest["source_dir"] = midi_dir.name
    if args.preset:
        manifest["preset"] = args.preset
    stage = _staging_dir(out_dir)
    try:
        for name, img in zip(manifest["images"], images):
            (stage / name).write_bytes(write_png(img))
        (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        _publish_dir(stage, out_dir)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    c = manifest["counts"]
    print(f"{c['images']} images from {c['parsed']} files ({c['skipped']} skipped) -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    preset = _preset(args.preset)
    dataset_dir, out_dir = Path(args.dataset_dir), Path(args.out_dir)
    manifest_path = dataset_dir / "manifest.json"
    data_mode = json.loads(manifest_path.read_text())["mode"] if manifest_path.exists() else None
    mode = args.mode or preset.get("mode") or data_mode or "binary"
    if data_mode is not None and data_mode != mode:
        raise CliError(f"dataset was built in {data_mode} mode but training requested {mode} mode")
    images = _load_images(dataset_dir)

    if "extra_iterations" in preset and not args.resume:
        raise CliError("preset extra-iterations needs --resume <base checkpoint>")
    if args.resume:
        state = load_checkpoint(Path(args.resume).read_bytes())
        config = state.config
        config.mode = mode
        if args.checkpoint_every is not None:
            config.checkpoint_every = args.checkpoint_every
        if args.iterations is not None:
            total = state.iteration + args.iterations
        elif "extra_iterations" in preset:
            total = state.iteration + preset["extra_iterations"]
        else:
            total = config.total_iterations
        config.total_iterations = total
    else:
        config = GanConfig(
            batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed, mode=mode,
            total_iterations=args.iterations if args.iterations is not None else preset.get("iterations", 50_000),
            checkpoint_every=args.checkpoint_every if args.checkpoint_every is not None else 5_000,
            dataset=str(dataset_dir))
        state = init_state(config)
    if args.batch_size != config.batch_size and args.resume:
        logger.warning("--batch-size ignored when resuming (checkpoint uses %d)", config.batch_size)

    report = train(config, images, state=state, checkpoint_dir=out_dir)
    write_loss_csv(report, out_dir / "losses.csv")
    last = report.checkpoints[-1]
    print(f"trained {report.iterations} iterations (now at {state.iteration}); final checkpoint {last.path}")
    return 0


def cmd_generate(args) -> int:
    state = load_checkpoint(Path(args.checkpoint).read_bytes())
    mode = args.mode or state.config.mode
    out_dir = Path(args.out_dir)
    images = sample(state, args.n, args.seed)
    stage = _staging_dir(out_dir)
    try:
        for i, img in enumerate(images):
            (stage / f"sample_{i:06d}.png").write_bytes(write_png(img))
            (stage / f"sample_{i:06d}.mid").write_bytes(write_smf(window_to_midi(decode_image(img, mode))))
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(stage.iterdir()):
            shutil.move(str(f), str(out_dir / f.name))
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    print(f"wrote {len(images)} images and MIDI files to {out_dir}")
    return 0


def cmd_roundtrip_check(args) -> int:
    files = find_midi_files(args.midi_dir)
    if not files:
        raise CliError(f"no MIDI files in {args.midi_dir}")
    failed = 0
    for path in files:
        res = roundtrip_check(path, args.mode, args.sustain_cap)
        if res.ok:
            print(f"PASS {res.file} ({res.windows} windows)")
        else:
            failed += 1
            print(f"FAIL {res.file}: {res.message}")
    print(f"{len(files) - failed}/{len(files)} files passed")
    return 0 if failed == 0 else 1


def _grid_of(paths, mode):
    grids = []
    for p in paths:
        p = Path(p)
        items = sorted(p.iterdir()) if p.is_dir() else [p]
        for item in items:
            suffix = item.suffix.lower()
            if suffix == ".png":
                grids.append(decode_image(read_png(item.read_bytes()), mode))
            elif suffix in (".mid", ".midi", ".smf"):
                grids.append(midi_to_grid(parse_smf(item.read_bytes()), mode))
    if not grids:
        raise CliError(f"no MIDI or PNG inputs among {', '.join(map(str, paths))}")
    return concat_grids(grids, mode)


def cmd_analyze(args) -> int:
    first = analyze(_grid_of(args.paths, args.mode)).as_dict()
    result = {"inputs": first}
    if args.against:
        second = analyze(_grid_of(args.against, args.mode)).as_dict()
        result["against"] = second
        h1 = np.array(list(first["pitch_class_histogram"].values()), dtype=float)
        h2 = np.array(list(second["pitch_class_histogram"].values()), dtype=float)
        p1 = h1 / h1.sum() if h1.sum() else h1
        p2 = h2 / h2.sum() if h2.sum() else h2
        result["diff"] = {
            "note_density": first["note_density"] - second["note_density"],
            "repeated_rhythm_score": first["repeated_rhythm_score"] - second["repeated_rhythm_score"],
            "pitch_class_l1": float(np.abs(p1 - p2).sum()),
        }
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        for label, rep in result.items():
            print(f"[{label}]")
            for key, value in rep.items():
                if isinstance(value, dict):
                    print(f"  {key}: " + " ".join(f"{k}={v}" for k, v in value.items()))
                elif isinstance(value, float):
                    print(f"  {key}: {value:.4f}")
                else:
                    print(f"  {key}: {value}")
    return 0


# --- parser -----------------------------------------------------------------

def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="MIDI piano rolls as images, and a DCGAN over them.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="MIDI <-> MTX text")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--to", choices=("mtx", "midi"), help="default: inferred from the input suffix")
    p.set_defaults(func=cmd_convert)

    mode_kw = dict(choices=("binary", "velocity"), default=None)
    preset_kw = dict(choices=sorted(PRESETS), default=None)

    p = sub.add_parser("build-dataset", help="MIDI directory -> numbered PNGs + manifest.json")
    p.add_argument("midi_dir")
    p.add_argument("out_dir")
    p.add_argument("--mode", **mode_kw)
    p.add_argument("--preset", **preset_kw)
    p.add_argument("--sustain-cap", type=float, default=SUSTAIN_CAP)
    p.add_argument("--jobs", type=_positive, default=1)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train the DCGAN on a dataset directory")
    p.add_argument("dataset_dir")
    p.add_argument("out_dir")
    p.add_argument("--preset", **preset_kw)
    p.add_argument("--mode", **mode_kw)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=_positive, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--resume", metavar="CHECKPOINT")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images and MIDI files from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("out_dir")
    p.add_argument("-n", type=_positive, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", **mode_kw)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("roundtrip-check", help="verify the image codec on every MIDI file of a directory")
    p.add_argument("midi_dir")
    p.add_argument("--mode", choices=("binary", "velocity"), default="binary")
    p.add_argument("--sustain-cap", type=float, default=SUSTAIN_CAP)
    p.set_defaults(func=cmd_roundtrip_check)

    p = sub.add_parser("analyze", help="pitch, chord and rhythm statistics")
    p.add_argument("paths", nargs="+", help="MIDI files, PNG images, or directories of them")
    p.add_argument("--against", nargs="+", help="second set to compare with")
    p.add_argument("--mode", choices=("binary", "velocity"), default="binary")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, MidiError, NonFiniteLoss, ValueError, OSError) as exc:
        print(f"{PROG}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
