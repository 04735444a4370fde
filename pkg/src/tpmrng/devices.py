"""Random sources: simulated TPM chips, OS entropy and file replay.

Simulated chips answer in *virtual* time.  Each call's duration comes from a
closed-form latency model::

    k = min(n, max_request)
    duration = base + per_byte * k + per_chunk * ceil(k / chunk_size)
               + reseed_penalty   (when call_index % reseed_period == 0)

``call_index`` is 1-based, so with ``reseed_period=30`` calls 30, 60, ...
pay the penalty.  Nothing sleeps; a full sweep over a simulator runs in well
under a second of wall time.

The latency coefficients of the built-in profiles are synthetic.  They are
tuned to the qualitative shape of the measured chips (truncation point,
chunk discontinuities, Intel's ~500 B/s plateau, Sinosun ~30x slower than
Infineon) and can be overridden from an INI file.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import wire

__all__ = [
    "BUILTIN_PROFILES",
    "BiasedStream",
    "ChipProfile",
    "Device",
    "DeviceError",
    "DrawResult",
    "FileReplayDevice",
    "OSEntropyDevice",
    "SimulatedChip",
    "SourceExhausted",
    "UniformStream",
    "get_random",
    "load_profiles",
    "make_profile",
    "open_device",
    "submit_command",
]


class DeviceError(RuntimeError):
    pass


class SourceExhausted(DeviceError):
    pass


@dataclass(frozen=True)
class ChipProfile:
    name: str
    max_request: int
    chunk_size: int
    base_latency: float
    per_byte_latency: float
    per_chunk_latency: float
    reseed_period: int | None = None
    reseed_penalty: float = 0.0

    def __post_init__(self):
        if self.max_request < 1:
            raise ValueError(f"{self.name}: max_request must be >= 1")
        if self.chunk_size < 1:
            raise ValueError(f"{self.name}: chunk_size must be >= 1")
        for field in ("base_latency", "per_byte_latency", "per_chunk_latency", "reseed_penalty"):
            if getattr(self, field) < 0:
                raise ValueError(f"{self.name}: {field} must be >= 0")
        if self.reseed_period is not None and self.reseed_period < 1:
            raise ValueError(f"{self.name}: reseed_period must be a positive call count or never")

    def returned_size(self, n: int) -> int:
        return min(n, self.max_request)

    def is_reseed_call(self, call_index: int) -> bool:
        return self.reseed_period is not None and call_index % self.reseed_period == 0

    def latency(self, n: int, call_index: int | None = None) -> float:
        """Virtual duration in microseconds of a request for ``n`` bytes.

        ``call_index`` is the 1-based position of the call on its device;
        leave it as None for the steady-state (no reseed) cost.
        """
        k = self.returned_size(n)
        duration = (
            self.base_latency
            + self.per_byte_latency * k
            + self.per_chunk_latency * math.ceil(k / self.chunk_size)
        )
        if call_index is not None and self.is_reseed_call(call_index):
            duration += self.reseed_penalty
        return duration

    def throughput(self, n: int) -> float:
        """Steady-state bytes per second for requests of ``n`` bytes."""
        duration = self.latency(n)
        return self.returned_size(n) * 1e6 / duration if duration > 0 else math.inf

    def peak_throughput(self) -> tuple[int, float]:
        """(request size, bytes/s) of the fastest request size in 1..max_request."""
        sizes = np.arange(1, self.max_request + 1)
        durations = (
            self.base_latency
            + self.per_byte_latency * sizes
            + self.per_chunk_latency * np.ceil(sizes / self.chunk_size)
        )
        rates = sizes * 1e6 / durations
        best = int(np.argmax(rates))
        return best + 1, float(rates[best])


BUILTIN_PROFILES: dict[str, ChipProfile] = {
    # one chunk covers every legal request, so no intra-request steps; the
    # periodic reseed creates the second timing line
    "infineon": ChipProfile(
        "infineon", max_request=1259, chunk_size=1259,
        base_latency=20_000.0, per_byte_latency=50.0, per_chunk_latency=0.0,
        reseed_period=30, reseed_penalty=30_000.0,
    ),
    "intel": ChipProfile(
        "intel", max_request=1226, chunk_size=64,
        base_latency=100_000.0, per_byte_latency=1_500.0, per_chunk_latency=25_000.0,
    ),
    "atmel": ChipProfile(
        "atmel", max_request=768, chunk_size=538,
        base_latency=10_000.0, per_byte_latency=150.0, per_chunk_latency=40_000.0,
    ),
    "sinosun": ChipProfile(
        "sinosun", max_request=2048, chunk_size=20,
        base_latency=50_000.0, per_byte_latency=1_400.0, per_chunk_latency=10_000.0,
    ),
}


def make_profile(name: str) -> ChipProfile:
    try:
        return BUILTIN_PROFILES[name.lower()]
    except KeyError:
        valid = ", ".join(sorted(BUILTIN_PROFILES))
        raise ValueError(f"unknown chip profile {name!r}; valid names: {valid}") from None


_PROFILE_FIELDS = {f.name for f in dataclasses.fields(ChipProfile)}


def _parse_profile_value(key: str, raw: str):
    if key == "reseed_period":
        return None if raw.strip().lower() in ("never", "none", "") else int(raw)
    if key in ("max_request", "chunk_size"):
        return int(raw)
    return float(raw)


def load_profiles(path: str | os.PathLike, base: dict[str, ChipProfile] | None = None) -> dict[str, ChipProfile]:
    """Read profile overrides from an INI file.

    Each section names a profile; keys are ChipProfile field names.  Sections
    matching a built-in profile override only the keys they list.  Other
    sections define new profiles and must list every field.  A ``[run]``
    section, if present, is ignored here (the CLI reads it).
    """
    profiles = dict(BUILTIN_PROFILES if base is None else base)
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    for section in parser.sections():
        if section == "run":
            continue
        name = section.lower()
        values = {}
        for key, raw in parser.items(section):
            if key not in _PROFILE_FIELDS or key == "name":
                raise ValueError(f"[{section}] unknown profile key {key!r}")
            values[key] = _parse_profile_value(key, raw)
        if name in profiles:
            profiles[name] = dataclasses.replace(profiles[name], **values)
        else:
            missing = set(_PROFILE_FIELDS) - {"name", "reseed_period", "reseed_penalty"} - set(values)
            if missing:
                raise ValueError(f"[{section}] new profile is missing {sorted(missing)}")
            profiles[name] = ChipProfile(name=name, **values)
    return profiles


class UniformStream:
    """Seeded byte stream built on PCG64.

    Bytes are the little-endian serialisation of consecutive 64-bit outputs,
    so the stream does not depend on how it is sliced: ``take(a) + take(b)``
    equals ``take(a + b)`` on a fresh stream with the same seed.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        self.seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._bitgen = np.random.PCG64(self.seed_seq)
        self._spare = b""

    def spawn(self, n: int) -> list[UniformStream]:
        return [type(self)(child) for child in self.seed_seq.spawn(n)]

    def take(self, n: int) -> bytes:
        head = self._spare[:n]
        need = n - len(head)
        if need <= 0:
            self._spare = self._spare[n:]
            return head
        block = self._bitgen.random_raw(-(-need // 8)).astype("<u8", copy=False).tobytes()
        self._spare = block[need:]
        return head + block[:need]


class BiasedStream:
    """Seeded byte stream where value v has probability proportional to 1 + epsilon*v.

    Only useful as a negative control for the quality battery.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0, epsilon: float = 0.1):
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        self.epsilon = epsilon
        seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(seed_seq))
        weights = 1.0 + epsilon * np.arange(256, dtype=np.float64)
        self.probabilities = weights / weights.sum()
        self._cdf = np.cumsum(self.probabilities)
        self._cdf[-1] = 1.0

    def take(self, n: int) -> bytes:
        u = self._gen.random(n)
        values = np.searchsorted(self._cdf, u, side="right")
        return np.minimum(values, 255).astype(np.uint8).tobytes()


@dataclass(frozen=True)
class DrawResult:
    data: bytes
    duration: float  # microseconds


class Device:
    """One random source.  Not safe for concurrent use from two threads."""

    kind = "abstract"

    def __init__(self):
        self.calls = 0

    @property
    def name(self) -> str:
        return self.kind

    def get_random(self, n: int) -> DrawResult:
        if n < 1:
            raise ValueError(f"requested byte count must be >= 1, got {n}")
        result = self._draw(n)
        self.calls += 1
        return result

    def _draw(self, n: int) -> DrawResult:
        raise NotImplementedError

    def max_request(self) -> int | None:
        """Largest count a single call can return, or None when unbounded."""
        return None

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SimulatedChip(Device):
    kind = "simulated"

    def __init__(self, profile: ChipProfile, seed: int = 0, bias: float | None = None):
        super().__init__()
        self.profile = profile
        self.seed = seed
        self.bias = bias
        self.stream = UniformStream(seed) if bias is None else BiasedStream(seed, bias)

    @property
    def name(self) -> str:
        return self.profile.name

    def max_request(self) -> int:
        return self.profile.max_request

    def _draw(self, n: int) -> DrawResult:
        k = self.profile.returned_size(n)
        duration = self.profile.latency(k, self.calls + 1)
        return DrawResult(self.stream.take(k), duration)


class OSEntropyDevice(Device):
    kind = "os"

    def _draw(self, n: int) -> DrawResult:
        start = time.perf_counter_ns()
        data = os.urandom(n)
        elapsed = time.perf_counter_ns() - start
        return DrawResult(data, elapsed / 1000.0)


class FileReplayDevice(Device):
    kind = "file"

    def __init__(self, path: str | os.PathLike):
        super().__init__()
        self.path = Path(path)
        self._fh = open(self.path, "rb")
        self.cursor = 0

    @property
    def name(self) -> str:
        return f"file:{self.path}"

    def _draw(self, n: int) -> DrawResult:
        start = time.perf_counter_ns()
        data = self._fh.read(n)
        elapsed = time.perf_counter_ns() - start
        if len(data) < n:
            self._fh.seek(self.cursor)
            raise SourceExhausted(
                f"{self.path}: requested {n} bytes at offset {self.cursor}, only {len(data)} left"
            )
        self.cursor += n
        return DrawResult(data, elapsed / 1000.0)

    def close(self) -> None:
        self._fh.close()


def get_random(device: Device, n: int) -> DrawResult:
    return device.get_random(n)


def submit_command(device: Device, raw: bytes) -> bytes:
    """Service a raw command buffer the way a TPM driver would.

    Every failure comes back as an encoded failure response; nothing raises.
    """
    try:
        req = wire.decode_request(raw)
    except wire.WireError as exc:
        return wire.encode_response(wire.GetRandomResponse.failure(exc.return_code))
    try:
        result = device.get_random(req.bytes_requested)
    except DeviceError:
        return wire.encode_response(wire.GetRandomResponse.failure(wire.TPM_FAIL))
    return wire.encode_response(wire.GetRandomResponse.success(result.data))


def open_device(
    selector: str,
    seed: int = 0,
    bias: float | None = None,
    profiles: dict[str, ChipProfile] | None = None,
) -> Device:
    """Build a device from a backend selector: a profile name, ``os`` or ``file:<path>``."""
    profiles = BUILTIN_PROFILES if profiles is None else profiles
    if selector.startswith("file:"):
        return FileReplayDevice(selector[len("file:"):])
    if selector == "os":
        return OSEntropyDevice()
    name = selector.lower()
    if name not in profiles:
        valid = ", ".join([*sorted(profiles), "os", "file:<path>"])
        raise ValueError(f"unknown backend {selector!r}; valid backends: {valid}")
    return SimulatedChip(profiles[name], seed=seed, bias=bias)
