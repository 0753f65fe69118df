"""Intersection-to-vehicle messages: SPaT, ICA occupancy and the static map.

Wire format (see docs/wire.md)::

    CGW1 <TYPE> <length>\\n<body>

``<length>`` is the byte length of ``<body>``. The body is UTF-8 ``key=value``
lines in a fixed order and ends with an empty line. Repeated records (one per
movement, blind zone or polygon) use the same key on consecutive lines and are
sorted by id, so equal messages always encode to identical bytes.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Optional

from .signal import PED_INDICATIONS, VEHICLE_INDICATIONS, PhaseState, SpatEstimate

log = logging.getLogger(__name__)

MAGIC = "CGW1"
DEFAULT_PORT = 47831
TICK_MS = 100
STALE_MS = 3 * TICK_MS
ICA_STATUSES = ("clear", "occupied", "unknown")
INDICATIONS = VEHICLE_INDICATIONS + PED_INDICATIONS
MAX_DATAGRAM = 65507


class WireError(ValueError):
    """Malformed message or datagram."""


def _check_token(name: str, value: str) -> str:
    if not isinstance(value, str) or not value or any(c.isspace() for c in value) or "=" in value:
        raise WireError(f"{name} must be a non-empty token without spaces or '=': {value!r}")
    return value


def _check_uint(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise WireError(f"{name} must be a non-negative integer, got {value!r}")
    return value


def _unique(name: str, ids: Iterable[str]) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise WireError(f"duplicate {name} {i!r}")
        seen.add(i)


@dataclass(frozen=True)
class SpatMessage:
    intersection_id: str
    seq: int
    timestamp_ms: int
    indications: tuple          # ((movement_id, indication), ...), sorted by id
    current_phase_id: str
    expected_remaining_ms: int
    quantile_remaining_ms: tuple  # (p10, p50, p90)
    next_phase_id: Optional[str] = None

    TYPE = "SPAT"

    def __post_init__(self):
        _check_token("intersection_id", self.intersection_id)
        _check_uint("seq", self.seq)
        _check_uint("timestamp_ms", self.timestamp_ms)
        _check_token("current_phase_id", self.current_phase_id)
        _check_uint("expected_remaining_ms", self.expected_remaining_ms)
        if len(self.quantile_remaining_ms) != 3:
            raise WireError("quantile_remaining_ms needs p10, p50, p90")
        for q in self.quantile_remaining_ms:
            _check_uint("quantile_remaining_ms", q)
        if self.next_phase_id is not None:
            _check_token("next_phase_id", self.next_phase_id)
        ind = tuple(sorted((str(m), str(i)) for m, i in self.indications))
        _unique("movement", (m for m, _ in ind))
        for m, i in ind:
            _check_token("movement id", m)
            if i not in INDICATIONS:
                raise WireError(f"bad indication {i!r} for {m}")
        object.__setattr__(self, "indications", ind)
        object.__setattr__(self, "quantile_remaining_ms", tuple(self.quantile_remaining_ms))

    def phase_state(self) -> PhaseState:
        return PhaseState(self.current_phase_id, dict(self.indications), self.timestamp_ms / 1000)

    def estimate(self) -> SpatEstimate:
        q = dict(zip((0.1, 0.5, 0.9), (v / 1000 for v in self.quantile_remaining_ms)))
        return SpatEstimate(self.current_phase_id, float("nan"), self.expected_remaining_ms / 1000,
                            q, self.next_phase_id)


@dataclass(frozen=True)
class IcaMessage:
    intersection_id: str
    seq: int
    timestamp_ms: int
    entries: tuple  # ((blind_zone_id, status), ...), sorted by id

    TYPE = "ICA"

    def __post_init__(self):
        _check_token("intersection_id", self.intersection_id)
        _check_uint("seq", self.seq)
        _check_uint("timestamp_ms", self.timestamp_ms)
        ent = tuple(sorted((str(b), str(s)) for b, s in self.entries))
        _unique("blind zone", (b for b, _ in ent))
        for b, s in ent:
            _check_token("blind zone id", b)
            if s not in ICA_STATUSES:
                raise WireError(f"bad ICA status {s!r} for {b}")
        object.__setattr__(self, "entries", ent)

    def as_dict(self) -> dict:
        return dict(self.entries)


def _round_coords(coords) -> tuple:
    return tuple((round(float(x), 3) + 0.0, round(float(y), 3) + 0.0) for x, y in coords)


@dataclass(frozen=True)
class MapMessage:
    """Static geometry: ids and outline polygons, rounded to 1/1000 ft."""

    intersection_id: str
    schema_version: int
    guideways: tuple    # ((id, ((x, y), ...)), ...)
    zones: tuple
    blind_zones: tuple

    TYPE = "MAP"

    def __post_init__(self):
        _check_token("intersection_id", self.intersection_id)
        _check_uint("schema_version", self.schema_version)
        for name in ("guideways", "zones", "blind_zones"):
            recs = tuple(sorted((str(i), _round_coords(c)) for i, c in getattr(self, name)))
            _unique(name, (i for i, _ in recs))
            for i, _ in recs:
                _check_token(name, i)
            object.__setattr__(self, name, recs)

    @classmethod
    def from_compiled(cls, compiled) -> "MapMessage":
        def outline(poly):
            return () if poly.is_empty else tuple(poly.exterior.coords)
        return cls(compiled.id, 1,
                   tuple((g.id, outline(g.polygon)) for g in compiled.guideways),
                   tuple((z.id, outline(z.polygon)) for z in compiled.zones),
                   tuple((b.id, outline(b.polygon)) for b in compiled.blind_zones))


# ---------------------------------------------------------------- codec

def _fmt_coords(coords) -> str:
    return ";".join(f"{x:.3f},{y:.3f}" for x, y in coords) or "-"


def _parse_coords(text: str) -> tuple:
    if text == "-":
        return ()
    out = []
    for pair in text.split(";"):
        x, y = pair.split(",")
        out.append((float(x), float(y)))
    return tuple(out)


def _body_lines(msg) -> list[tuple[str, str]]:
    if isinstance(msg, SpatMessage):
        rows = [("intersection", msg.intersection_id), ("seq", str(msg.seq)),
                ("t_ms", str(msg.timestamp_ms)), ("phase", msg.current_phase_id),
                ("remaining_ms", str(msg.expected_remaining_ms)),
                ("p10_ms", str(msg.quantile_remaining_ms[0])),
                ("p50_ms", str(msg.quantile_remaining_ms[1])),
                ("p90_ms", str(msg.quantile_remaining_ms[2])),
                ("next_phase", msg.next_phase_id or "-")]
        rows += [("ind", f"{m} {i}") for m, i in msg.indications]
    elif isinstance(msg, IcaMessage):
        rows = [("intersection", msg.intersection_id), ("seq", str(msg.seq)),
                ("t_ms", str(msg.timestamp_ms))]
        rows += [("bz", f"{b} {s}") for b, s in msg.entries]
    elif isinstance(msg, MapMessage):
        rows = [("intersection", msg.intersection_id), ("schema", str(msg.schema_version))]
        for key, recs in (("gw", msg.guideways), ("cz", msg.zones), ("bzone", msg.blind_zones)):
            rows += [(key, f"{i} {_fmt_coords(c)}") for i, c in recs]
    else:
        raise WireError(f"cannot encode {type(msg).__name__}")
    return rows


def encode(msg) -> bytes:
    body = "".join(f"{k}={v}\n" for k, v in _body_lines(msg)) + "\n"
    raw = body.encode("utf-8")
    return f"{MAGIC} {msg.TYPE} {len(raw)}\n".encode("ascii") + raw


_FIXED = {
    "SPAT": ("intersection", "seq", "t_ms", "phase", "remaining_ms", "p10_ms", "p50_ms",
             "p90_ms", "next_phase"),
    "ICA": ("intersection", "seq", "t_ms"),
    "MAP": ("intersection", "schema"),
}
_REPEAT = {"SPAT": ("ind",), "ICA": ("bz",), "MAP": ("gw", "cz", "bzone")}


def _int(text: str, key: str) -> int:
    if not text.isdigit():
        raise WireError(f"{key} is not a decimal integer: {text!r}")
    return int(text)


def _pair(text: str, key: str) -> tuple[str, str]:
    parts = text.split(" ")
    if len(parts) != 2:
        raise WireError(f"{key} record needs '<id> <value>': {text!r}")
    return parts[0], parts[1]


def decode(data: bytes):
    """Parse one datagram. Raises WireError on anything but a well-formed message."""
    head, sep, raw = bytes(data).partition(b"\n")
    if not sep:
        raise WireError("missing header line")
    try:
        magic, mtype, length = head.decode("ascii").split(" ")
    except (UnicodeDecodeError, ValueError):
        raise WireError(f"bad header {head[:40]!r}") from None
    if magic != MAGIC:
        raise WireError(f"unknown version {magic!r}")
    if mtype not in _FIXED:
        raise WireError(f"unknown message type {mtype!r}")
    n = _int(length, "length")
    if len(raw) < n:
        raise WireError(f"truncated payload: {len(raw)} of {n} bytes")
    if len(raw) > n:
        raise WireError(f"{len(raw) - n} trailing bytes after payload")
    try:
        body = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise WireError(f"payload is not UTF-8: {e}") from None
    if not body.endswith("\n\n"):
        raise WireError("payload does not end with a blank line")
    lines = body[:-2].split("\n") if len(body) > 2 else []
    rows = []
    for ln in lines:
        k, eq, v = ln.partition("=")
        if not eq:
            raise WireError(f"line without '=': {ln!r}")
        rows.append((k, v))

    fixed = _FIXED[mtype]
    if [k for k, _ in rows[:len(fixed)]] != list(fixed):
        raise WireError(f"{mtype} fields must start with {', '.join(fixed)}")
    vals = dict(rows[:len(fixed)])
    reps = {k: [] for k in _REPEAT[mtype]}
    order = list(_REPEAT[mtype])
    pos = 0
    for k, v in rows[len(fixed):]:
        if k not in reps:
            raise WireError(f"unexpected key {k!r} in {mtype}")
        idx = order.index(k)
        if idx < pos:
            raise WireError(f"key {k!r} out of order")
        pos = idx
        reps[k].append(v)

    try:
        if mtype == "SPAT":
            return SpatMessage(
                vals["intersection"], _int(vals["seq"], "seq"), _int(vals["t_ms"], "t_ms"),
                tuple(_pair(v, "ind") for v in reps["ind"]), vals["phase"],
                _int(vals["remaining_ms"], "remaining_ms"),
                tuple(_int(vals[k], k) for k in ("p10_ms", "p50_ms", "p90_ms")),
                None if vals["next_phase"] == "-" else vals["next_phase"])
        if mtype == "ICA":
            return IcaMessage(vals["intersection"], _int(vals["seq"], "seq"),
                              _int(vals["t_ms"], "t_ms"),
                              tuple(_pair(v, "bz") for v in reps["bz"]))

        def polys(key):
            out = []
            for v in reps[key]:
                i, c = _pair(v, key)
                out.append((i, _parse_coords(c)))
            return tuple(out)
        return MapMessage(vals["intersection"], _int(vals["schema"], "schema"),
                          polys("gw"), polys("cz"), polys("bzone"))
    except ValueError as e:
        if isinstance(e, WireError):
            raise
        raise WireError(str(e)) from None


def canonical_check(data: bytes) -> None:
    """Raise unless `data` is the canonical encoding of what it decodes to."""
    if encode(decode(data)) != bytes(data):
        raise WireError("non-canonical encoding")


# ---------------------------------------------------------------- builders

def _ms(seconds: float) -> int:
    return max(int(round(seconds * 1000)), 0)


def make_spat(intersection_id: str, seq: int, timestamp_ms: int, state: PhaseState,
              estimate: SpatEstimate) -> SpatMessage:
    q = estimate.quantile_remaining
    return SpatMessage(intersection_id, seq, timestamp_ms, tuple(state.indications.items()),
                       state.id, _ms(estimate.expected_remaining),
                       (_ms(q[0.1]), _ms(q[0.5]), _ms(q[0.9])), estimate.next_phase_id)


def make_ica(intersection_id: str, seq: int, timestamp_ms: int,
             statuses: Mapping[str, str]) -> IcaMessage:
    return IcaMessage(intersection_id, seq, timestamp_ms, tuple(statuses.items()))


# ---------------------------------------------------------------- transport

class SimClock:
    """Manual millisecond clock for deterministic runs."""

    def __init__(self, start_ms: int = 0):
        self.ms = int(start_ms)

    def __call__(self) -> int:
        return self.ms

    def advance(self, ms: int) -> None:
        self.ms += int(ms)


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


class Bus:
    """In-process broadcast medium: every subscriber gets every datagram."""

    def __init__(self):
        self._queues: list[queue.Queue] = []
        self._lock = threading.Lock()

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._queues.append(q)
        return q

    def send(self, datagram: bytes) -> None:
        with self._lock:
            qs = list(self._queues)
        for q in qs:
            q.put(bytes(datagram))

    __call__ = send


class UdpSink:
    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        self.addr = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def __call__(self, datagram: bytes) -> None:
        if len(datagram) > MAX_DATAGRAM:
            raise WireError(f"datagram of {len(datagram)} bytes exceeds UDP limit")
        self.sock.sendto(datagram, self.addr)

    def close(self) -> None:
        self.sock.close()


def udp_datagrams(port: int = DEFAULT_PORT, host: str = "127.0.0.1", timeout: float = 1.0,
                  stop: Optional[threading.Event] = None,
                  sock: Optional[socket.socket] = None) -> Iterator[bytes]:
    """Yield datagrams received on `port` until `stop` is set or a recv times out."""
    own = sock is None
    if own:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind((host, port))
    sock.settimeout(timeout)
    try:
        while stop is None or not stop.is_set():
            try:
                data, _ = sock.recvfrom(MAX_DATAGRAM + 1)
            except socket.timeout:
                if stop is None:
                    return
                continue
            yield data
    finally:
        if own:
            sock.close()


SpatProvider = Callable[[float], tuple]          # t (s) -> (PhaseState, SpatEstimate)
OccupancyProvider = Callable[[float], Mapping]   # t (s) -> {blind_zone_id: status}


class Broadcaster:
    """Emit one SPaT and one ICA message per tick.

    A provider that raises skips that message for the tick; sequence numbers
    only advance when a message is actually sent.
    """

    def __init__(self, intersection_id: str, spat_provider: SpatProvider,
                 occupancy_provider: Optional[OccupancyProvider], sink: Callable[[bytes], None],
                 tick_ms: int = TICK_MS, clock: Callable[[], int] = wall_clock_ms):
        if tick_ms <= 0:
            raise ValueError("tick_ms must be positive")
        self.intersection_id = intersection_id
        self.spat_provider = spat_provider
        self.occupancy_provider = occupancy_provider
        self.sink = sink
        self.tick_ms = int(tick_ms)
        self.clock = clock
        self.spat_seq = 0
        self.ica_seq = 0
        self.failures = 0

    def tick(self) -> list[bytes]:
        now = self.clock()
        sent = []
        try:
            state, est = self.spat_provider(now / 1000)
            dg = encode(make_spat(self.intersection_id, self.spat_seq, now, state, est))
        except Exception:
            log.exception("SPaT provider failed at %d ms", now)
            self.failures += 1
        else:
            self.sink(dg)
            self.spat_seq += 1
            sent.append(dg)
        if self.occupancy_provider is not None:
            try:
                occ = self.occupancy_provider(now / 1000)
                dg = encode(make_ica(self.intersection_id, self.ica_seq, now, occ))
            except Exception:
                log.exception("occupancy provider failed at %d ms", now)
                self.failures += 1
            else:
                self.sink(dg)
                self.ica_seq += 1
                sent.append(dg)
        return sent

    def run_simulated(self, duration_ms: int) -> int:
        """Drive a SimClock through `duration_ms`; returns the number of ticks."""
        if not isinstance(self.clock, SimClock):
            raise TypeError("run_simulated needs a SimClock")
        ticks = 0
        end = self.clock.ms + duration_ms
        while self.clock.ms < end:
            self.tick()
            ticks += 1
            self.clock.advance(self.tick_ms)
        return ticks

    def run(self, stop: threading.Event, max_ticks: Optional[int] = None) -> int:
        """Real-time loop on a fixed schedule until `stop` is set."""
        period = self.tick_ms / 1000
        start = time.monotonic()
        ticks = 0
        while not stop.is_set() and (max_ticks is None or ticks < max_ticks):
            self.tick()
            ticks += 1
            delay = start + ticks * period - time.monotonic()
            if delay > 0:
                stop.wait(delay)
        return ticks


@dataclass(frozen=True)
class Received:
    message: object
    lag_ms: int
    stale: bool


@dataclass
class Subscriber:
    """Decode datagrams, flag stale ones, count corrupt datagrams and sequence gaps."""

    clock: Callable[[], int] = wall_clock_ms
    stale_ms: int = STALE_MS
    corrupt: int = 0
    gaps: int = 0
    reordered: int = 0
    _last: dict = field(default_factory=dict)

    def feed(self, datagram: bytes) -> Optional[Received]:
        try:
            msg = decode(datagram)
        except WireError as e:
            self.corrupt += 1
            log.debug("dropped corrupt datagram: %s", e)
            return None
        if isinstance(msg, (SpatMessage, IcaMessage)):
            key = (msg.TYPE, msg.intersection_id)
            last = self._last.get(key)
            if last is not None:
                if msg.seq > last + 1:
                    self.gaps += msg.seq - last - 1
                elif msg.seq <= last:
                    self.reordered += 1
            if last is None or msg.seq > last:
                self._last[key] = msg.seq
            lag = self.clock() - msg.timestamp_ms
        else:
            lag = 0
        return Received(msg, lag, lag > self.stale_ms)

    def stream(self, datagrams: Iterable[bytes]) -> Iterator[Received]:
        for dg in datagrams:
            r = self.feed(dg)
            if r is not None:
                yield r

    def drain(self, q: queue.Queue) -> list[Received]:
        out = []
        while True:
            try:
                dg = q.get_nowait()
            except queue.Empty:
                return out
            r = self.feed(dg)
            if r is not None:
                out.append(r)


def ica_clear_for(msg: IcaMessage, blind_zone_ids: Iterable[str]) -> dict:
    """Statuses for the requested blind zones; ids absent from the message are unknown."""
    d = msg.as_dict()
    return {b: d.get(b, "unknown") for b in blind_zone_ids}


__all__ = [
    "Broadcaster", "Bus", "DEFAULT_PORT", "IcaMessage", "MapMessage", "Received",
    "SimClock", "SpatMessage", "Subscriber", "UdpSink", "WireError", "decode", "encode",
    "ica_clear_for", "make_ica", "make_spat", "udp_datagrams",
]
