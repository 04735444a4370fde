"""Request-size sweeps and bulk collection over any Device."""
from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Iterable, TextIO

from .devices import Device, DeviceError

CSV_HEADER = ("request_size", "returned_size", "mean_duration_us", "throughput_bps")


@dataclass(frozen=True)
class SweepConfig:
    min_size: int = 1
    max_size: int = 2048
    step: int = 1
    repetitions: int = 10

    def __post_init__(self):
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError(f"need 1 <= min_size <= max_size, got {self.min_size}..{self.max_size}")
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")

    def sizes(self) -> range:
        return range(self.min_size, self.max_size + 1, self.step)


@dataclass(frozen=True)
class BenchRecord:
    request_size: int
    returned_size: int
    mean_duration: float  # microseconds
    throughput: float  # bytes per second

    @classmethod
    def from_durations(cls, request_size: int, returned_size: int, durations: list[float]) -> BenchRecord:
        mean = sum(durations) / len(durations)
        rate = returned_size * 1e6 / mean if mean > 0 else 0.0
        return cls(request_size, returned_size, mean, rate)


class SweepAborted(RuntimeError):
    """The device failed mid-sweep; ``records`` holds what completed."""

    def __init__(self, records: list[BenchRecord], failed_size: int, cause: Exception):
        self.records = records
        self.failed_size = failed_size
        super().__init__(f"sweep stopped at request size {failed_size} after {len(records)} records: {cause}")


def sweep(device: Device, config: SweepConfig = SweepConfig()) -> list[BenchRecord]:
    """Time ``config.repetitions`` consecutive calls per request size.

    Repetitions for a size run back to back before moving to the next size.
    """
    records: list[BenchRecord] = []
    for size in config.sizes():
        durations = []
        returned = None
        try:
            for _ in range(config.repetitions):
                result = device.get_random(size)
                durations.append(result.duration)
                returned = len(result.data) if returned is None else min(returned, len(result.data))
        except DeviceError as exc:
            raise SweepAborted(records, size, exc) from exc
        records.append(BenchRecord.from_durations(size, returned, durations))
    return records


def peak(records: Iterable[BenchRecord]) -> BenchRecord | None:
    return max(records, key=lambda r: r.throughput, default=None)


def write_csv(records: Iterable[BenchRecord], sink: TextIO) -> int:
    """Write the sweep table; returns the number of characters written."""
    written = 0

    class _Counting:
        def write(self, s):
            nonlocal written
            written += len(s)
            return sink.write(s)

    writer = csv.writer(_Counting(), lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow((r.request_size, r.returned_size, f"{r.mean_duration:.3f}", f"{r.throughput:.2f}"))
    return written


def read_csv(source: TextIO) -> list[BenchRecord]:
    reader = csv.reader(source)
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {header}")
    return [BenchRecord(int(a), int(b), float(c), float(d)) for a, b, c, d in reader]


# -- bulk collection ---------------------------------------------------------

COMPLETED = "completed"
ABORTED = "aborted"


@dataclass(frozen=True)
class CollectProgress:
    calls: int
    bytes_written: int
    total: int
    mean_throughput: float


@dataclass(frozen=True)
class CollectSummary:
    bytes_written: int
    mean_throughput: float  # bytes per second over summed call durations
    status: str
    calls: int = 0
    short_calls: int = 0  # calls that returned fewer bytes than requested


class CollectError(RuntimeError):
    def __init__(self, message: str, bytes_written: int):
        self.bytes_written = bytes_written
        super().__init__(f"{message} (bytes written: {bytes_written})")


@dataclass
class _Tally:
    calls: int = 0
    received: int = 0
    busy_us: float = 0.0
    short_calls: int = 0

    @property
    def throughput(self) -> float:
        return self.received * 1e6 / self.busy_us if self.busy_us > 0 else 0.0


def collect(
    device: Device,
    total: int,
    request_size: int,
    sink: BinaryIO,
    progress: Callable[[CollectProgress], None] | None = None,
    cancel: threading.Event | None = None,
    progress_every: int = 100,
) -> CollectSummary:
    """Pull ``total`` bytes from ``device`` in ``request_size`` calls into ``sink``.

    Only bytes the device actually returned are written.  When the last call
    overshoots ``total`` the surplus is dropped.  ``cancel`` is checked before
    every call; ``progress`` fires every ``progress_every`` calls with the
    running mean throughput (bytes received over summed call time).
    """
    if total < 1:
        raise ValueError("total must be >= 1")
    if request_size < 1:
        raise ValueError("request_size must be >= 1")
    if progress_every < 1:
        raise ValueError("progress_every must be >= 1")

    tally = _Tally()
    written = 0
    while written < total:
        if cancel is not None and cancel.is_set():
            return CollectSummary(written, tally.throughput, ABORTED, tally.calls, tally.short_calls)
        try:
            result = device.get_random(request_size)
        except DeviceError as exc:
            raise CollectError(f"device failed: {exc}", written) from exc
        if not result.data:
            raise CollectError("device returned no bytes", written)
        tally.calls += 1
        tally.received += len(result.data)
        tally.busy_us += result.duration
        if len(result.data) < request_size:
            tally.short_calls += 1
        chunk = result.data[: total - written]
        try:
            sink.write(chunk)
        except OSError as exc:
            raise CollectError(f"write failed: {exc}", written) from exc
        written += len(chunk)
        if progress is not None and tally.calls % progress_every == 0:
            progress(CollectProgress(tally.calls, written, total, tally.throughput))
    return CollectSummary(written, tally.throughput, COMPLETED, tally.calls, tally.short_calls)


@dataclass
class CollectJob:
    """Runs collect() on a worker thread; cancel() is the Abort button."""

    device: Device
    total: int
    request_size: int
    sink: BinaryIO
    progress: Callable[[CollectProgress], None] | None = None
    progress_every: int = 100
    cancel_event: threading.Event = field(default_factory=threading.Event)
    summary: CollectSummary | None = None
    error: BaseException | None = None

    def __post_init__(self):
        self._thread = threading.Thread(target=self._run, name="collect-worker", daemon=True)

    def _run(self):
        try:
            self.summary = collect(
                self.device, self.total, self.request_size, self.sink,
                progress=self.progress, cancel=self.cancel_event, progress_every=self.progress_every,
            )
        except BaseException as exc:  # handed to the caller through wait()
            self.error = exc

    def start(self) -> CollectJob:
        self._thread.start()
        return self

    def cancel(self) -> None:
        self.cancel_event.set()

    def wait(self, timeout: float | None = None) -> CollectSummary | None:
        self._thread.join(timeout)
        if self._thread.is_alive():
            return None
        if self.error is not None:
            raise self.error
        return self.summary
