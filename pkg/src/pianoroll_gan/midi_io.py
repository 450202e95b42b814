"""Standard MIDI File (SMF) and MTX text codecs.

Only the event classes the piano-roll pipeline cares about get their own
types; everything else survives as an opaque :class:`Meta` or :class:`SysEx`
so that files round-trip without loss.

Channels are 0-based internally and 1-based in MTX text (``ch=1`` is
channel 0). A NoteOff status byte is normalized to ``NoteOn`` with velocity 0
at parse time; release velocity is discarded.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from typing import Iterator, Union

__all__ = [
    "NoteOn", "ControlChange", "ProgramChange", "PitchBend", "PolyPressure",
    "ChannelPressure", "Tempo", "TimeSig", "Meta", "SysEx", "EndOfTrack",
    "Event", "Track", "MidiFile",
    "MidiError", "MalformedHeader", "TruncatedChunk", "SmpteDivisionUnsupported",
    "BadVarint", "MalformedEvent", "TickOverflow", "UnsortedEvents",
    "MtxSyntaxError", "ValueOutOfRange",
    "parse_smf", "write_smf", "to_mtx", "from_mtx", "read_midi", "merged_events",
    "DEFAULT_TEMPO",
]

DEFAULT_TEMPO = 500_000
MAX_VARINT = 0x0FFF_FFFF


class MidiError(ValueError):
    """Base class for every structured codec error."""


class MalformedHeader(MidiError):
    pass


class TruncatedChunk(MidiError):
    pass


class SmpteDivisionUnsupported(MidiError):
    pass


class BadVarint(MidiError):
    pass


class MalformedEvent(MidiError):
    pass


class TickOverflow(MidiError):
    pass


class UnsortedEvents(MidiError):
    pass


class MtxSyntaxError(MidiError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ValueOutOfRange(MtxSyntaxError):
    pass


# --- event types -----------------------------------------------------------

@dataclass(frozen=True)
class NoteOn:
    tick: int
    channel: int
    note: int
    velocity: int


@dataclass(frozen=True)
class ControlChange:
    tick: int
    channel: int
    controller: int
    value: int


@dataclass(frozen=True)
class ProgramChange:
    tick: int
    channel: int
    program: int


@dataclass(frozen=True)
class PitchBend:
    tick: int
    channel: int
    value: int  # 0..16383, 8192 = center


@dataclass(frozen=True)
class PolyPressure:
    tick: int
    channel: int
    note: int
    value: int


@dataclass(frozen=True)
class ChannelPressure:
    tick: int
    channel: int
    value: int


@dataclass(frozen=True)
class Tempo:
    tick: int
    usec_per_quarter: int


@dataclass(frozen=True)
class TimeSig:
    tick: int
    numerator: int
    denominator: int  # actual denominator, a power of two
    clocks: int
    notated32: int


@dataclass(frozen=True)
class Meta:
    tick: int
    type: int
    data: bytes


@dataclass(frozen=True)
class SysEx:
    tick: int
    status: int  # 0xF0 or 0xF7
    data: bytes


@dataclass(frozen=True)
class EndOfTrack:
    tick: int


Event = Union[NoteOn, ControlChange, ProgramChange, PitchBend, PolyPressure,
              ChannelPressure, Tempo, TimeSig, Meta, SysEx, EndOfTrack]


@dataclass(frozen=True)
class Track:
    events: tuple = ()

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class MidiFile:
    format: int = 1
    division: int = 480
    tracks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        tracks = tuple(t if isinstance(t, Track) else Track(tuple(t)) for t in self.tracks)
        object.__setattr__(self, "tracks", tracks)
        if self.format not in (0, 1):
            raise MalformedHeader(f"unsupported SMF format {self.format}")
        if not isinstance(self.division, int) or self.division <= 0:
            raise MalformedHeader(f"division must be a positive tick count, got {self.division!r}")
        if self.division > 0x7FFF:
            raise MalformedHeader(f"division {self.division} does not fit in 15 bits")
        if self.format == 0 and len(self.tracks) != 1:
            raise MalformedHeader(f"format 0 requires exactly one track, got {len(self.tracks)}")


def merged_events(midi: MidiFile) -> list:
    """All events of all tracks in one tick-sorted list.

    Ties keep track order, then file order (``sorted`` is stable).
    """
    flat = [ev for track in midi.tracks for ev in track.events]
    return sorted(flat, key=lambda ev: ev.tick)


# --- binary parsing --------------------------------------------------------

class _Reader:
    __slots__ = ("buf", "pos", "end")

    def __init__(self, buf: bytes, pos: int = 0, end: int | None = None):
        self.buf = buf
        self.pos = pos
        self.end = len(buf) if end is None else end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise TruncatedChunk(f"unexpected end of data at offset {self.pos}")
        b = self.buf[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedChunk(f"need {n} bytes at offset {self.pos}, chunk ends at {self.end}")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def varint(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise BadVarint(f"variable-length quantity longer than 4 bytes at offset {self.pos}")


_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


def _channel_event(tick: int, status: int, data: bytes) -> Event:
    kind, ch = status >> 4, status & 0x0F
    if kind == 0x8:
        return NoteOn(tick, ch, data[0], 0)
    if kind == 0x9:
        return NoteOn(tick, ch, data[0], data[1])
    if kind == 0xA:
        return PolyPressure(tick, ch, data[0], data[1])
    if kind == 0xB:
        return ControlChange(tick, ch, data[0], data[1])
    if kind == 0xC:
        return ProgramChange(tick, ch, data[0])
    if kind == 0xD:
        return ChannelPressure(tick, ch, data[0])
    return PitchBend(tick, ch, data[0] | (data[1] << 7))


def _meta_event(tick: int, mtype: int, data: bytes) -> Event:
    if mtype == 0x2F:
        return EndOfTrack(tick)
    if mtype == 0x51 and len(data) == 3:
        return Tempo(tick, int.from_bytes(data, "big"))
    if mtype == 0x58 and len(data) == 4:
        return TimeSig(tick, data[0], 1 << data[1], data[2], data[3])
    return Meta(tick, mtype, data)


def _parse_track(r: _Reader) -> Track:
    events = []
    tick = 0
    running = None
    while r.pos < r.end:
        tick += r.varint()
        status = r.byte()
        if status < 0x80:
            if running is None:
                raise MalformedEvent(f"data byte 0x{status:02X} without running status at offset {r.pos - 1}")
            r.pos -= 1
            status = running
        if status < 0xF0:
            running = status
            data = r.take(_DATA_LEN[status >> 4])
            if any(b & 0x80 for b in data):
                raise MalformedEvent(f"status byte inside channel message at offset {r.pos - len(data)}")
            events.append(_channel_event(tick, status, data))
        elif status == 0xFF:
            mtype = r.byte()
            data = r.take(r.varint())
            ev = _meta_event(tick, mtype, data)
            events.append(ev)
            if isinstance(ev, EndOfTrack):
                break  # bytes after EndOfTrack are ignored
        elif status in (0xF0, 0xF7):
            events.append(SysEx(tick, status, r.take(r.varint())))
        else:
            raise MalformedEvent(f"unexpected status 0x{status:02X} at offset {r.pos - 1}")
    return Track(tuple(events))


def parse_smf(data: bytes) -> MidiFile:
    """Parse a Standard MIDI File into absolute-tick events.

    Raises a :class:`MidiError` subclass for any malformed input.
    """
    data = bytes(data)
    if len(data) < 8 or data[:4] != b"MThd":
        raise MalformedHeader("missing MThd signature")
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6:
        raise MalformedHeader(f"header length {hlen} < 6")
    if len(data) < 8 + hlen:
        raise TruncatedChunk("header chunk is truncated")
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if division & 0x8000:
        raise SmpteDivisionUnsupported("SMPTE time division is not supported")
    if division == 0:
        raise MalformedHeader("division is zero")
    if fmt not in (0, 1):
        raise MalformedHeader(f"unsupported SMF format {fmt}")
    if fmt == 0 and ntrks != 1:
        raise MalformedHeader(f"format 0 file declares {ntrks} tracks")

    pos = 8 + hlen
    tracks = []
    while len(tracks) < ntrks:
        if pos + 8 > len(data):
            raise TruncatedChunk(f"expected {ntrks} tracks, found {len(tracks)}")
        cid = data[pos:pos + 4]
        clen = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        start = pos + 8
        if start + clen > len(data):
            raise TruncatedChunk(f"chunk {cid!r} at offset {pos} runs past end of file")
        if cid == b"MTrk":
            tracks.append(_parse_track(_Reader(data, start, start + clen)))
        pos = start + clen
    return MidiFile(fmt, division, tuple(tracks))


def read_midi(path) -> MidiFile:
    with open(path, "rb") as fh:
        return parse_smf(fh.read())


# --- binary writing --------------------------------------------------------

def _varint(value: int) -> bytes:
    if value < 0 or value > MAX_VARINT:
        raise TickOverflow(f"value {value} outside variable-length range")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _channel_bytes(ev, status: int, *data: int) -> bytes:
    if not 0 <= ev.channel <= 15 or any(not 0 <= b <= 127 for b in data):
        raise MalformedEvent(f"value out of range in {ev!r}")
    return bytes((status | ev.channel, *data))


def _encode_event(ev: Event) -> bytes:
    if isinstance(ev, NoteOn):
        return _channel_bytes(ev, 0x90, ev.note, ev.velocity)
    if isinstance(ev, ControlChange):
        return _channel_bytes(ev, 0xB0, ev.controller, ev.value)
    if isinstance(ev, ProgramChange):
        return _channel_bytes(ev, 0xC0, ev.program)
    if isinstance(ev, PitchBend):
        if not 0 <= ev.value <= 0x3FFF:
            raise MalformedEvent(f"pitch bend out of range in {ev!r}")
        return _channel_bytes(ev, 0xE0, ev.value & 0x7F, ev.value >> 7)
    if isinstance(ev, PolyPressure):
        return _channel_bytes(ev, 0xA0, ev.note, ev.value)
    if isinstance(ev, ChannelPressure):
        return _channel_bytes(ev, 0xD0, ev.value)
    if isinstance(ev, Tempo):
        return b"\xff\x51\x03" + ev.usec_per_quarter.to_bytes(3, "big")
    if isinstance(ev, TimeSig):
        dd = ev.denominator.bit_length() - 1
        if ev.denominator <= 0 or 1 << dd != ev.denominator:
            raise MalformedEvent(f"time signature denominator {ev.denominator} is not a power of two")
        return b"\xff\x58\x04" + bytes((ev.numerator, dd, ev.clocks, ev.notated32))
    if isinstance(ev, Meta):
        return bytes((0xFF, ev.type)) + _varint(len(ev.data)) + ev.data
    if isinstance(ev, SysEx):
        return bytes((ev.status,)) + _varint(len(ev.data)) + ev.data
    if isinstance(ev, EndOfTrack):
        return b"\xff\x2f\x00"
    raise TypeError(f"not a MIDI event: {ev!r}")


def _encode_track(track: Track) -> bytes:
    out = bytearray()
    last = 0
    events = list(track.events)
    if not events or not isinstance(events[-1], EndOfTrack):
        events.append(EndOfTrack(events[-1].tick if events else 0))
    for ev in events:
        delta = ev.tick - last
        if delta < 0:
            raise UnsortedEvents(f"event at tick {ev.tick} follows tick {last}")
        if delta > MAX_VARINT:
            raise TickOverflow(f"delta {delta} exceeds the 28-bit varint range")
        out += _varint(delta)
        try:
            out += _encode_event(ev)
        except (OverflowError, ValueError) as exc:
            if isinstance(exc, MidiError):
                raise
            raise MalformedEvent(f"cannot encode {ev!r}: {exc}") from None
        last = ev.tick
        if isinstance(ev, EndOfTrack):
            break
    return b"MTrk" + struct.pack(">I", len(out)) + bytes(out)


def write_smf(midi: MidiFile) -> bytes:
    """Serialize to SMF bytes. Events are written in the given order without
    running status; an EndOfTrack is appended to any track lacking one."""
    header = b"MThd" + struct.pack(">IHHH", 6, midi.format, len(midi.tracks), midi.division)
    return header + b"".join(_encode_track(t) for t in midi.tracks)


# --- MTX text --------------------------------------------------------------

_TEXT_META = {
    0x01: "Text", 0x02: "Copyright", 0x03: "SeqName", 0x04: "TrkName",
    0x05: "Lyric", 0x06: "Marker", 0x07: "Cue",
}
_TEXT_META_BY_NAME = {v: k for k, v in _TEXT_META.items()}


def _quote(data: bytes) -> str:
    out = ['"']
    for b in data:
        ch = chr(b)
        if ch in '"\\':
            out.append("\\" + ch)
        elif 0x20 <= b < 0x7F:
            out.append(ch)
        else:
            out.append(f"\\x{b:02x}")
    out.append('"')
    return "".join(out)


def _unquote(text: str, lineno: int) -> bytes:
    if len(text) < 2 or text[0] != '"' or text[-1] != '"':
        raise MtxSyntaxError(lineno, f"expected quoted string, got {text!r}")
    body = text[1:-1]
    out = bytearray()
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            nxt = body[i + 1:i + 2]
            if nxt in ('"', "\\"):
                out.append(ord(nxt))
                i += 2
            elif nxt == "x" and re.fullmatch(r"[0-9a-fA-F]{2}", body[i + 2:i + 4]):
                out.append(int(body[i + 2:i + 4], 16))
                i += 4
            else:
                raise MtxSyntaxError(lineno, "bad escape in string")
        elif ch == '"':
            raise MtxSyntaxError(lineno, "unescaped quote in string")
        else:
            if ord(ch) > 0xFF:
                raise MtxSyntaxError(lineno, "non-latin-1 character in string")
            out.append(ord(ch))
            i += 1
    return bytes(out)


def _event_line(ev: Event) -> str:
    t = ev.tick
    if isinstance(ev, NoteOn):
        return f"{t} On ch={ev.channel + 1} n={ev.note} v={ev.velocity}"
    if isinstance(ev, ControlChange):
        return f"{t} Par ch={ev.channel + 1} c={ev.controller} v={ev.value}"
    if isinstance(ev, ProgramChange):
        return f"{t} PrCh ch={ev.channel + 1} p={ev.program}"
    if isinstance(ev, PitchBend):
        return f"{t} Pb ch={ev.channel + 1} v={ev.value}"
    if isinstance(ev, PolyPressure):
        return f"{t} PoPr ch={ev.channel + 1} n={ev.note} v={ev.value}"
    if isinstance(ev, ChannelPressure):
        return f"{t} ChPr ch={ev.channel + 1} v={ev.value}"
    if isinstance(ev, Tempo):
        return f"{t} Tempo {ev.usec_per_quarter}"
    if isinstance(ev, TimeSig):
        return f"{t} TimeSig {ev.numerator}/{ev.denominator} {ev.clocks} {ev.notated32}"
    if isinstance(ev, EndOfTrack):
        return f"{t} Meta TrkEnd"
    if isinstance(ev, SysEx):
        tag = "SysEx" if ev.status == 0xF0 else "Arb"
        return f"{t} {tag} {ev.data.hex(' ')}".rstrip()
    if isinstance(ev, Meta):
        if ev.type in _TEXT_META:
            return f"{t} Meta {_TEXT_META[ev.type]} {_quote(ev.data)}"
        if ev.type == 0x59 and len(ev.data) == 2:
            sf = ev.data[0] - 256 if ev.data[0] > 127 else ev.data[0]
            mode = {0: "major", 1: "minor"}.get(ev.data[1])
            if mode is not None:
                return f"{t} KeySig {sf} {mode}"
        return f"{t} Meta 0x{ev.type:02x} {ev.data.hex(' ')}".rstrip()
    raise TypeError(f"not a MIDI event: {ev!r}")


def to_mtx(midi: MidiFile) -> str:
    """Render the line-oriented MTX text form (LF line endings)."""
    lines = [f"MFile {midi.format} {len(midi.tracks)} {midi.division}"]
    for track in midi.tracks:
        lines.append("MTrk")
        lines.extend(_event_line(ev) for ev in track.events)
        lines.append("TrkEnd")
    return "\n".join(lines) + "\n"


_KV = re.compile(r"^([a-z]+)=(-?\d+)$")


def _ranged(lineno: int, name: str, value: int, hi: int, lo: int = 0) -> int:
    if not lo <= value <= hi:
        raise ValueOutOfRange(lineno, f"{name}={value} outside {lo}..{hi}")
    return value


def _fields(lineno: int, parts: list, names: tuple) -> dict:
    if len(parts) != len(names):
        raise MtxSyntaxError(lineno, f"expected fields {' '.join(names)}")
    out = {}
    for part, name in zip(parts, names):
        m = _KV.match(part)
        if not m or m.group(1) != name:
            raise MtxSyntaxError(lineno, f"expected {name}=<int>, got {part!r}")
        out[name] = int(m.group(2))
    return out


def _int(lineno: int, text: str) -> int:
    if not re.fullmatch(r"-?\d+", text):
        raise MtxSyntaxError(lineno, f"expected integer, got {text!r}")
    return int(text)


def _hexbytes(lineno: int, parts: list) -> bytes:
    try:
        return bytes.fromhex(" ".join(parts))
    except ValueError:
        raise MtxSyntaxError(lineno, "bad hex payload") from None


def _parse_event(lineno: int, line: str) -> Event:
    head, _, rest = line.partition(" ")
    if not re.fullmatch(r"\d+", head) or not rest:
        raise MtxSyntaxError(lineno, f"unrecognized line {line!r}")
    tick = int(head)
    kind, _, args = rest.partition(" ")
    parts = args.split()
    ch = lambda f: _ranged(lineno, "ch", f["ch"], 16, 1) - 1  # noqa: E731
    seven = lambda f, k: _ranged(lineno, k, f[k], 127)  # noqa: E731

    if kind == "On":
        f = _fields(lineno, parts, ("ch", "n", "v"))
        return NoteOn(tick, ch(f), seven(f, "n"), seven(f, "v"))
    if kind == "Par":
        f = _fields(lineno, parts, ("ch", "c", "v"))
        return ControlChange(tick, ch(f), seven(f, "c"), seven(f, "v"))
    if kind == "PrCh":
        f = _fields(lineno, parts, ("ch", "p"))
        return ProgramChange(tick, ch(f), seven(f, "p"))
    if kind == "Pb":
        f = _fields(lineno, parts, ("ch", "v"))
        return PitchBend(tick, ch(f), _ranged(lineno, "v", f["v"], 16383))
    if kind == "PoPr":
        f = _fields(lineno, parts, ("ch", "n", "v"))
        return PolyPressure(tick, ch(f), seven(f, "n"), seven(f, "v"))
    if kind == "ChPr":
        f = _fields(lineno, parts, ("ch", "v"))
        return ChannelPressure(tick, ch(f), seven(f, "v"))
    if kind == "Tempo":
        if len(parts) != 1:
            raise MtxSyntaxError(lineno, "Tempo takes one value")
        return Tempo(tick, _ranged(lineno, "tempo", _int(lineno, parts[0]), 0xFFFFFF))
    if kind == "TimeSig":
        if len(parts) != 3 or not re.fullmatch(r"\d+/\d+", parts[0]):
            raise MtxSyntaxError(lineno, "TimeSig expects <n>/<d> <clocks> <n32>")
        num, den = (int(x) for x in parts[0].split("/"))
        if den <= 0 or den & (den - 1):
            raise ValueOutOfRange(lineno, f"denominator {den} is not a power of two")
        _ranged(lineno, "numerator", num, 255)
        _ranged(lineno, "denominator exponent", den.bit_length() - 1, 255)
        return TimeSig(tick, num, den,
                       _ranged(lineno, "clocks", _int(lineno, parts[1]), 255),
                       _ranged(lineno, "notated32", _int(lineno, parts[2]), 255))
    if kind == "KeySig":
        if len(parts) != 2 or parts[1] not in ("major", "minor"):
            raise MtxSyntaxError(lineno, "KeySig expects <sharps> major|minor")
        sf = _ranged(lineno, "sharps", _int(lineno, parts[0]), 127, -128)
        return Meta(tick, 0x59, bytes((sf & 0xFF, 0 if parts[1] == "major" else 1)))
    if kind in ("SysEx", "Arb"):
        return SysEx(tick, 0xF0 if kind == "SysEx" else 0xF7, _hexbytes(lineno, parts))
    if kind == "Meta":
        if args == "TrkEnd":
            return EndOfTrack(tick)
        name, _, payload = args.partition(" ")
        if name in _TEXT_META_BY_NAME:
            return Meta(tick, _TEXT_META_BY_NAME[name], _unquote(payload, lineno))
        if re.fullmatch(r"0x[0-9a-fA-F]{2}", name):
            return Meta(tick, int(name, 16), _hexbytes(lineno, payload.split()))
        raise MtxSyntaxError(lineno, f"unknown meta {name!r}")
    raise MtxSyntaxError(lineno, f"unknown event kind {kind!r}")


def from_mtx(text: str) -> MidiFile:
    """Parse MTX text produced by :func:`to_mtx`. Unrecognized lines raise
    :class:`MtxSyntaxError` carrying the 1-based line number."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MtxSyntaxError(1, "empty input")
    m = re.fullmatch(r"MFile (\d+) (\d+) (\d+)", lines[0].rstrip("\r"))
    if not m:
        raise MtxSyntaxError(1, "expected 'MFile <format> <ntrks> <division>'")
    fmt, ntrks, division = (int(g) for g in m.groups())
    tracks = []
    current = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\r")
        if line == "MTrk":
            if current is not None:
                raise MtxSyntaxError(lineno, "MTrk inside an open track")
            current = []
        elif line == "TrkEnd":
            if current is None:
                raise MtxSyntaxError(lineno, "TrkEnd without MTrk")
            tracks.append(Track(tuple(current)))
            current = None
        elif current is None:
            raise MtxSyntaxError(lineno, f"event outside a track: {line!r}")
        else:
            ev = _parse_event(lineno, line)
            if current and ev.tick < current[-1].tick:
                raise MtxSyntaxError(lineno, "ticks must not decrease within a track")
            current.append(ev)
    if current is not None:
        raise MtxSyntaxError(len(lines), "missing TrkEnd")
    if len(tracks) != ntrks:
        raise MtxSyntaxError(1, f"header declares {ntrks} tracks, found {len(tracks)}")
    try:
        return MidiFile(fmt, division, tuple(tracks))
    except MidiError as exc:
        raise MtxSyntaxError(1, str(exc)) from None
