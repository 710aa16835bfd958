"""Seeded synthetic flow datasets for desk-scale experiments.

A synthetic spec is an INI document with one ``[class:<name>]`` section per
class::

    [class:SSL]
    count = 5000
    protocol = tcp                  ; tcp | udp (udp flows carry window size 0)
    server_ports = 443, 8443        ; one is drawn per flow
    client_ports = 49152-65535      ; range or list, one drawn per flow
    length = 8-20                   ; packet count, uniform over the range
    pattern = alternating           ; alternating | burst(k) | upload(k) | download | uni | random(p)
    flip = 0.05                     ; per-packet direction flip probability (never the first packet)
    iat = lognormal(-3.5, 0.6)      ; seconds; first packet is always 0
    payload = normal(700, 150)      ; source -> destination packets
    payload_reverse = normal(1200, 200)   ; optional, destination -> source packets
    window = 29200, 64240, 65535    ; window values the flow walks through
    window_mode = ramp              ; fixed | ramp | random

Distributions: ``constant(v)``, ``uniform(a, b)``, ``normal(mu, sd)``,
``lognormal(mu, sigma)``, ``exponential(scale)``, ``gamma(shape, scale)``,
``choice(v1, v2, ...)``. Draws are clipped at 0.

Packets travelling destination -> source carry swapped ports. Class ids follow
the sorted class names, matching :func:`flowaug.ingest.load_dataset`.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .flows import MAX_PACKETS, PORT_MAX, FlowRecord, Origin, PacketFeatures
from .ingest import Dataset, labels_from_names

_CALL = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")
_DISTS = {
    "constant": 1,
    "uniform": 2,
    "normal": 2,
    "lognormal": 2,
    "exponential": 1,
    "gamma": 2,
    "choice": None,
}
_PATTERNS = {"alternating": 0, "burst": 1, "upload": 1, "download": 0, "uni": 0, "random": 1}
WINDOW_MODES = ("fixed", "ramp", "random")


@dataclass(frozen=True)
class Distribution:
    name: str
    args: tuple[float, ...]

    @classmethod
    def parse(cls, text: str) -> "Distribution":
        m = _CALL.match(text)
        if not m:
            raise InvalidSpec(f"cannot parse distribution {text!r}")
        name, raw = m.group(1), m.group(2)
        if name not in _DISTS:
            raise InvalidSpec(f"unknown distribution {name!r}")
        try:
            args = tuple(float(a) for a in raw.split(",") if a.strip())
        except ValueError:
            raise InvalidSpec(f"non-numeric argument in {text!r}") from None
        arity = _DISTS[name]
        if (arity is not None and len(args) != arity) or (arity is None and not args):
            raise InvalidSpec(f"{name} takes {arity or 'one or more'} arguments, got {len(args)}")
        if name in ("normal", "lognormal", "exponential", "gamma") and args[-1] <= 0:
            raise InvalidSpec(f"{name} scale parameter must be positive in {text!r}")
        if name == "gamma" and args[0] <= 0:
            raise InvalidSpec(f"gamma shape must be positive in {text!r}")
        return cls(name, args)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        a = self.args
        if self.name == "constant":
            out = np.full(size, a[0])
        elif self.name == "uniform":
            out = rng.uniform(a[0], a[1], size)
        elif self.name == "normal":
            out = rng.normal(a[0], a[1], size)
        elif self.name == "lognormal":
            out = rng.lognormal(a[0], a[1], size)
        elif self.name == "exponential":
            out = rng.exponential(a[0], size)
        elif self.name == "gamma":
            out = rng.gamma(a[0], a[1], size)
        else:
            out = rng.choice(np.array(a), size)
        return np.maximum(out, 0.0)


@dataclass(frozen=True)
class Pattern:
    name: str
    param: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "Pattern":
        text = text.strip()
        m = _CALL.match(text)
        if m:
            name, raw = m.group(1), m.group(2)
        else:
            name, raw = text, ""
        if name not in _PATTERNS:
            raise InvalidSpec(f"unknown direction pattern {text!r}")
        if _PATTERNS[name]:
            try:
                param = float(raw)
            except ValueError:
                raise InvalidSpec(f"pattern {name} needs one numeric argument") from None
            if name in ("burst", "upload") and (param < 1 or not param.is_integer()):
                raise InvalidSpec(f"pattern {name} needs a positive integer, got {raw!r}")
            if name == "random" and not 0 <= param <= 1:
                raise InvalidSpec(f"random pattern probability must be in [0, 1], got {raw!r}")
            return cls(name, param)
        if raw.strip():
            raise InvalidSpec(f"pattern {name} takes no argument")
        return cls(name)

    def directions(self, length: int, rng: np.random.Generator) -> np.ndarray:
        j = np.arange(length)
        if self.name == "alternating":
            d = (j % 2 == 0).astype(np.int64)
        elif self.name == "burst":
            d = (j % (int(self.param) + 1) == 0).astype(np.int64)
        elif self.name == "upload":
            k = int(self.param)
            d = (j % (k + 1) != k).astype(np.int64)
        elif self.name == "download":
            d = (j == 0).astype(np.int64)
        elif self.name == "uni":
            d = np.ones(length, dtype=np.int64)
        else:
            d = (rng.random(length) < self.param).astype(np.int64)
        d[0] = 1
        return d


@dataclass(frozen=True)
class SyntheticClass:
    name: str
    count: int
    server_ports: tuple[int, ...]
    client_ports: tuple[int, int] | tuple[int, ...]
    client_is_range: bool
    length: tuple[int, int]
    pattern: Pattern
    flip: float
    iat: Distribution
    payload: Distribution
    payload_reverse: Distribution
    window: tuple[int, ...]
    window_mode: str
    protocol: str


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[SyntheticClass, ...]
    seed: int | None = None


def _int_list(text: str, key: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InvalidSpec(f"{key}: expected integers, got {text!r}") from None
    if not values:
        raise InvalidSpec(f"{key}: empty list")
    return values


def _int_range(text: str, key: str) -> tuple[int, int]:
    m = re.match(r"^\s*(\d+)\s*-\s*(\d+)\s*$", text)
    if not m:
        raise InvalidSpec(f"{key}: expected a range like 1-20, got {text!r}")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo > hi:
        raise InvalidSpec(f"{key}: empty range {text!r}")
    return lo, hi


def _check_ports(ports, key):
    for p in ports:
        if not 0 <= p <= PORT_MAX:
            raise InvalidSpec(f"{key}: port {p} outside [0, {PORT_MAX}]")


def _parse_class(name: str, sec) -> SyntheticClass:
    required = ("count", "server_ports", "client_ports", "pattern", "iat", "payload")
    missing = [k for k in required if k not in sec]
    if missing:
        raise InvalidSpec(f"class {name!r} lacks {missing}")
    known = set(required) | {"protocol", "length", "flip", "payload_reverse", "window", "window_mode"}
    unknown = set(sec) - known
    if unknown:
        raise InvalidSpec(f"class {name!r}: unknown keys {sorted(unknown)}")
    try:
        count = int(sec["count"])
        flip = float(sec.get("flip", "0"))
    except ValueError as exc:
        raise InvalidSpec(f"class {name!r}: {exc}") from None
    if count < 1:
        raise InvalidSpec(f"class {name!r}: count must be positive")
    if not 0 <= flip <= 1:
        raise InvalidSpec(f"class {name!r}: flip must be a probability")
    server = _int_list(sec["server_ports"], "server_ports")
    _check_ports(server, "server_ports")
    client_text = sec["client_ports"]
    if "-" in client_text:
        client = _int_range(client_text, "client_ports")
        is_range = True
    else:
        client = _int_list(client_text, "client_ports")
        is_range = False
    _check_ports(client, "client_ports")
    length = _int_range(sec.get("length", f"1-{MAX_PACKETS}"), "length")
    if length[0] < 1 or length[1] > MAX_PACKETS:
        raise InvalidSpec(f"class {name!r}: length must lie within 1-{MAX_PACKETS}")
    protocol = sec.get("protocol", "tcp").strip().lower()
    if protocol not in ("tcp", "udp"):
        raise InvalidSpec(f"class {name!r}: protocol must be tcp or udp")
    window = _int_list(sec.get("window", "0"), "window")
    if any(w < 0 for w in window):
        raise InvalidSpec(f"class {name!r}: negative window size")
    mode = sec.get("window_mode", "fixed").strip()
    if mode not in WINDOW_MODES:
        raise InvalidSpec(f"class {name!r}: window_mode must be one of {WINDOW_MODES}")
    payload = Distribution.parse(sec["payload"])
    return SyntheticClass(
        name=name,
        count=count,
        server_ports=server,
        client_ports=client,
        client_is_range=is_range,
        length=length,
        pattern=Pattern.parse(sec["pattern"]),
        flip=flip,
        iat=Distribution.parse(sec["iat"]),
        payload=payload,
        payload_reverse=Distribution.parse(sec["payload_reverse"]) if "payload_reverse" in sec else payload,
        window=window,
        window_mode=mode,
        protocol=protocol,
    )


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidSpec(f"malformed synthetic spec: {exc}") from None
    classes = []
    seed = None
    for section in parser.sections():
        if section.startswith("class:"):
            name = section[len("class:"):].strip()
            if not name:
                raise InvalidSpec("class section without a name")
            classes.append(_parse_class(name, parser[section]))
        elif section == "synthetic":
            if "seed" in parser[section]:
                seed = parser[section].getint("seed")
        else:
            raise InvalidSpec(f"unknown section [{section}]")
    if len(classes) < 2:
        raise InvalidSpec(f"a synthetic spec needs at least 2 classes, got {len(classes)}")
    if len({c.name for c in classes}) != len(classes):
        raise InvalidSpec("duplicate class names")
    return SyntheticSpec(tuple(classes), seed)


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"synthetic spec not found: {path}")
    return parse_synthetic_spec(path.read_text())


def _window_track(cls: SyntheticClass, length: int, rng: np.random.Generator) -> np.ndarray:
    if cls.protocol == "udp":
        return np.zeros(length, dtype=np.int64)
    values = np.array(cls.window, dtype=np.int64)
    if cls.window_mode == "fixed":
        return np.full(length, values[rng.integers(len(values))])
    if cls.window_mode == "random":
        return values[rng.integers(len(values), size=length)]
    # ramp: start near the bottom of the list and climb one step at a time
    pos = np.empty(length, dtype=np.int64)
    pos[0] = rng.integers(max(1, (len(values) + 1) // 2))
    steps = rng.random(length) < 0.35
    for j in range(1, length):
        pos[j] = min(pos[j - 1] + int(steps[j]), len(values) - 1)
    return values[pos]


def _make_flow(cls: SyntheticClass, label, rng: np.random.Generator, flow_id: str) -> FlowRecord:
    n = int(rng.integers(cls.length[0], cls.length[1] + 1))
    directions = cls.pattern.directions(n, rng)
    if cls.flip > 0 and n > 1:
        flips = rng.random(n - 1) < cls.flip
        directions[1:] = np.where(flips, 1 - directions[1:], directions[1:])
    server = int(cls.server_ports[rng.integers(len(cls.server_ports))])
    if cls.client_is_range:
        client = int(rng.integers(cls.client_ports[0], cls.client_ports[1] + 1))
    else:
        client = int(cls.client_ports[rng.integers(len(cls.client_ports))])
    iat = cls.iat.sample(rng, n)
    iat[0] = 0.0
    fwd = cls.payload.sample(rng, n)
    rev = cls.payload_reverse.sample(rng, n)
    payload = np.minimum(np.floor(np.where(directions == 1, fwd, rev) + 0.5), PORT_MAX).astype(np.int64)
    window = _window_track(cls, n, rng)
    packets = []
    for j in range(n):
        if directions[j] == 1:
            sp, dp = client, server
        else:
            sp, dp = server, client
        packets.append(
            PacketFeatures(sp, dp, float(iat[j]), int(payload[j]), int(directions[j]), int(window[j]))
        )
    return FlowRecord(tuple(packets), label, Origin.REAL, flow_id)


def synth_dataset(spec: SyntheticSpec, seed: int) -> Dataset:
    """Generate the dataset described by ``spec``; identical for identical seeds."""
    if len(spec.classes) < 2:
        raise InvalidSpec("a synthetic spec needs at least 2 classes")
    labels = labels_from_names(sorted(c.name for c in spec.classes))
    by_name = {label.name: label for label in labels}
    flows = []
    for k, cls in enumerate(spec.classes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        label = by_name[cls.name]
        flows.extend(_make_flow(cls, label, rng, f"{cls.name}-{i:06d}") for i in range(cls.count))
    order = np.random.default_rng(np.random.SeedSequence([seed, len(spec.classes)])).permutation(len(flows))
    return Dataset(tuple(flows[i] for i in order), labels, None)
