"""Regenerate the bundled MIDI corpus from the music21 score corpus.

Not part of the package; music21 is only needed when re-running this script.

    python tools/make_corpus.py data/corpus
"""
import sys
from pathlib import Path

from music21 import corpus

TARGET = 100
EXTRA = ["joplin", "chopin", "schubert", "handel", "cpebach", "mozart", "beethoven", "haydn"]


def candidates():
    for name in EXTRA:
        for p in sorted(str(p) for p in corpus.getComposer(name))[:4]:
            yield name, p
    for p in sorted(str(p) for p in corpus.getComposer("bach") if "bwv" in str(p)):
        yield "bach", p


def main(dest):
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    written = sorted(dest.glob("*.mid"))
    for composer, path in candidates():
        if len(written) >= TARGET:
            break
        stem = Path(path).name.rsplit(".", 1)[0].replace(".", "_")
        target = dest / f"{composer}_{stem}.mid"
        if target.exists():
            continue
        try:
            corpus.parse(path).write("midi", fp=str(target))
        except Exception as exc:  # badly formed repeats etc.
            print(f"skip {path}: {exc}", file=sys.stderr)
            target.unlink(missing_ok=True)
            continue
        written.append(target)
        print(target)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/corpus")
