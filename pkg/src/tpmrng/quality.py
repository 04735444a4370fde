"""Ent-style randomness metrics at byte and bit level.

Five metrics per level: Shannon entropy, chi-square (statistic and the
probability that a uniform source would exceed it), arithmetic mean, Monte
Carlo estimate of pi, and circular serial correlation.

Bits are unpacked most-significant-bit first.  The bit-level Monte Carlo
figures are copies of the byte-level ones.

:class:`EntAccumulator` is the streaming implementation behind
:func:`analyze`.  It keeps only integer counters, so results do not depend on
how the input is chunked and nothing overflows at 100 MB inputs.  The
standalone functions (:func:`entropy`, :func:`chi_square`, ...) compute the
same quantities directly from an in-memory buffer.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Union

import numpy as np

from .special import chi2_sf

BYTE = "byte"
BIT = "bit"

PASS = "pass"
SUSPECT = "suspect"
FAIL = "fail"

MC_GROUP = 6
MC_RADIUS_SQ = (2**24 - 1) ** 2
READ_BLOCK = 1 << 20

# Ent's classic chi-square display buckets (exceedance probability).
CHI_SQUARE_BUCKETS = (0.0001, 0.001, 0.01, 0.025, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.975, 0.99, 0.999, 0.9999)

# display precision per metric, in decimals
DISPLAY_DECIMALS = {
    "entropy": 2,
    "chi_square_stat": 2,
    "chi_square_exceed_prob": 4,
    "mean": 4,
    "mc_pi_estimate": 9,
    "mc_pi_error_pct": 2,
    "serial_correlation": 6,
}

_POPCOUNT = np.array([bin(v).count("1") for v in range(256)], dtype=np.int64)
# adjacent 1-1 pairs inside one byte, reading MSB to LSB
_INNER_PAIRS = np.array([bin(v & (v >> 1)).count("1") for v in range(256)], dtype=np.int64)
_VALUES = np.arange(256, dtype=np.int64)

BytesLike = Union[bytes, bytearray, memoryview, np.ndarray]


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class Histogram:
    """Symbol counts; 256 symbols for bytes, 2 for bits."""

    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def k(self) -> int:
        return len(self.counts)


def _as_array(data: BytesLike) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.astype(np.uint8, copy=False).ravel()
    return np.frombuffer(data, dtype=np.uint8)


def byte_histogram(data: BytesLike) -> Histogram:
    counts = np.bincount(_as_array(data), minlength=256)
    return Histogram(tuple(int(c) for c in counts))


def bit_histogram(data: BytesLike) -> Histogram:
    a = _as_array(data)
    ones = int(_POPCOUNT[a].sum())
    return Histogram((8 * a.size - ones, ones))


def entropy(hist: Histogram) -> float:
    """Shannon entropy in bits per symbol."""
    n = hist.total
    if n == 0:
        raise InsufficientData("entropy of an empty input")
    return max(0.0, -math.fsum((c / n) * math.log2(c / n) for c in hist.counts if c))


def chi_square(hist: Histogram) -> tuple[float, float]:
    """(statistic, exceedance probability) against a uniform distribution."""
    n, k = hist.total, hist.k
    if n == 0:
        raise InsufficientData("chi-square of an empty input")
    # sum (O - n/k)^2 / (n/k) == (k * sum O^2 - n^2) / n, exact in integers
    statistic = (k * sum(c * c for c in hist.counts) - n * n) / n
    return statistic, chi2_sf(statistic, k - 1)


def _bits(data: BytesLike) -> np.ndarray:
    return np.unpackbits(_as_array(data))


def arithmetic_mean(data: BytesLike, level: str = BYTE) -> float:
    a = _as_array(data)
    if a.size == 0:
        raise InsufficientData("mean of an empty input")
    if level == BIT:
        return int(_POPCOUNT[a].sum()) / (8 * a.size)
    return int(a.sum(dtype=np.int64)) / a.size


def _mc_counts(a: np.ndarray) -> tuple[int, int]:
    usable = a.size - a.size % MC_GROUP
    groups = a[:usable].reshape(-1, MC_GROUP).astype(np.int64)
    x = (groups[:, 0] << 16) | (groups[:, 1] << 8) | groups[:, 2]
    y = (groups[:, 3] << 16) | (groups[:, 4] << 8) | groups[:, 5]
    return groups.shape[0], int(np.count_nonzero(x * x + y * y <= MC_RADIUS_SQ))


def _mc_result(points: int, inside: int) -> tuple[float, float]:
    estimate = 4.0 * inside / points
    return estimate, 100.0 * abs(estimate - math.pi) / math.pi


def monte_carlo_pi(data: BytesLike) -> tuple[float, float]:
    """(estimate, percent error) from 24-bit coordinate pairs in 6-byte groups."""
    a = _as_array(data)
    if a.size < MC_GROUP:
        raise InsufficientData(f"Monte Carlo pi needs at least {MC_GROUP} bytes, got {a.size}")
    return _mc_result(*_mc_counts(a))


def _circular_pearson(n: int, s1: int, s2: int, s12: int) -> float | None:
    denominator = n * s2 - s1 * s1
    if denominator == 0:
        return None
    return (n * s12 - s1 * s1) / denominator


def serial_correlation(data: BytesLike, level: str = BYTE) -> float | None:
    """Correlation of each symbol with its successor, last wrapping to first.

    Returns None when the input is constant (the coefficient is undefined).
    """
    a = _bits(data) if level == BIT else _as_array(data)
    if a.size < 2:
        raise InsufficientData("serial correlation needs at least 2 symbols")
    v = a.astype(np.int64)
    s1 = int(v.sum())
    s2 = int(np.dot(v, v))
    s12 = int(np.dot(v, np.roll(v, -1)))
    return _circular_pearson(v.size, s1, s2, s12)


@dataclass(frozen=True)
class MetricSet:
    entropy: float
    chi_square_stat: float
    chi_square_exceed_prob: float
    mean: float
    mc_pi_estimate: float
    mc_pi_error_pct: float
    serial_correlation: float | None
    symbols: int

    def as_dict(self) -> dict:
        return {
            "entropy": self.entropy,
            "chi_square_stat": self.chi_square_stat,
            "chi_square_exceed_prob": self.chi_square_exceed_prob,
            "mean": self.mean,
            "mc_pi_estimate": self.mc_pi_estimate,
            "mc_pi_error_pct": self.mc_pi_error_pct,
            "serial_correlation": self.serial_correlation,
        }


@dataclass(frozen=True)
class QualityReport:
    byte_level: MetricSet
    bit_level: MetricSet
    input_length: int

    @property
    def mc_points(self) -> int:
        return self.input_length // MC_GROUP

    def levels(self) -> list[tuple[str, MetricSet]]:
        return [(BYTE, self.byte_level), (BIT, self.bit_level)]


class EntAccumulator:
    """Single-pass, chunk-order-independent accumulator for all metrics.

    Feed bytes with :meth:`update` in any chunking, then call :meth:`report`.
    """

    def __init__(self):
        self.counts = np.zeros(256, dtype=np.int64)
        self.length = 0
        self._pair_sum = 0  # sum of x[i] * x[i+1] over adjacent bytes seen so far
        self._bit_cross_pairs = 0  # LSB of byte i and MSB of byte i+1 both set
        self._first: int | None = None
        self._last: int | None = None
        self._mc_carry = np.empty(0, dtype=np.uint8)
        self._mc_points = 0
        self._mc_inside = 0

    def update(self, data: BytesLike) -> EntAccumulator:
        a = _as_array(data)
        for start in range(0, a.size, READ_BLOCK):
            self._update_block(a[start:start + READ_BLOCK])
        return self

    def _update_block(self, a: np.ndarray) -> None:
        if a.size == 0:
            return
        self.counts += np.bincount(a, minlength=256)
        self.length += a.size
        v = a.astype(np.int64)
        if self._first is None:
            self._first = int(v[0])
        else:
            self._pair_sum += self._last * int(v[0])
            self._bit_cross_pairs += (self._last & 1) & (int(v[0]) >> 7)
        self._pair_sum += int(np.dot(v[:-1], v[1:]))
        self._bit_cross_pairs += int(np.count_nonzero((a[:-1] & 1) & (a[1:] >> 7)))
        self._last = int(v[-1])

        pending = np.concatenate([self._mc_carry, a]) if self._mc_carry.size else a
        points, inside = _mc_counts(pending)
        self._mc_points += points
        self._mc_inside += inside
        self._mc_carry = pending[points * MC_GROUP:].copy()

    def byte_histogram(self) -> Histogram:
        return Histogram(tuple(int(c) for c in self.counts))

    def bit_histogram(self) -> Histogram:
        ones = int(np.dot(self.counts, _POPCOUNT))
        return Histogram((8 * self.length - ones, ones))

    def report(self) -> QualityReport:
        n = self.length
        if n < MC_GROUP:
            raise InsufficientData(f"analysis needs at least {MC_GROUP} bytes, got {n}")
        mc_estimate, mc_error = _mc_result(self._mc_points, self._mc_inside)

        hist = self.byte_histogram()
        stat, prob = chi_square(hist)
        s1 = int(np.dot(self.counts, _VALUES))
        s2 = int(np.dot(self.counts, _VALUES * _VALUES))
        s12 = self._pair_sum + self._last * self._first
        byte_level = MetricSet(
            entropy=entropy(hist),
            chi_square_stat=stat,
            chi_square_exceed_prob=prob,
            mean=s1 / n,
            mc_pi_estimate=mc_estimate,
            mc_pi_error_pct=mc_error,
            serial_correlation=_circular_pearson(n, s1, s2, s12),
            symbols=n,
        )

        bits = 8 * n
        bhist = self.bit_histogram()
        ones = bhist.counts[1]
        bit_pairs = (
            int(np.dot(self.counts, _INNER_PAIRS))
            + self._bit_cross_pairs
            + ((self._last & 1) & (self._first >> 7))
        )
        bstat, bprob = chi_square(bhist)
        bit_level = MetricSet(
            entropy=entropy(bhist),
            chi_square_stat=bstat,
            chi_square_exceed_prob=bprob,
            mean=ones / bits,
            mc_pi_estimate=mc_estimate,
            mc_pi_error_pct=mc_error,
            serial_correlation=_circular_pearson(bits, ones, ones, bit_pairs),
            symbols=bits,
        )
        return QualityReport(byte_level, bit_level, n)


def _iter_chunks(source) -> Iterable[BytesLike]:
    if hasattr(source, "read"):
        while True:
            block = source.read(READ_BLOCK)
            if not block:
                return
            yield block
    elif isinstance(source, (bytes, bytearray, memoryview, np.ndarray)):
        yield source
    else:
        yield from source


def analyze(source: BytesLike | BinaryIO | Iterable[BytesLike]) -> QualityReport:
    """Run every metric at byte and bit level in one pass.

    ``source`` may be a bytes-like object, a binary file object, or an
    iterable of bytes-like chunks.
    """
    acc = EntAccumulator()
    for chunk in _iter_chunks(source):
        acc.update(chunk)
    return acc.report()


def analyze_file(path: str | os.PathLike) -> QualityReport:
    with open(path, "rb") as fh:
        return analyze(fh)


def segment_bounds(length: int, pieces: int) -> list[tuple[int, int]]:
    """Equal contiguous segments; the remainder goes to the last one."""
    size = length // pieces
    bounds = [(i * size, (i + 1) * size) for i in range(pieces)]
    bounds[-1] = (bounds[-1][0], length)
    return bounds


def _analyze_range(path, start: int, stop: int) -> QualityReport:
    acc = EntAccumulator()
    with open(path, "rb") as fh:
        fh.seek(start)
        remaining = stop - start
        while remaining:
            block = fh.read(min(READ_BLOCK, remaining))
            if not block:
                raise OSError(f"{path}: file shrank while reading")
            acc.update(block)
            remaining -= len(block)
    return acc.report()


def split_analyze(path: str | os.PathLike, pieces: int, workers: int = 1) -> list[QualityReport]:
    """One report per contiguous segment of the file, in segment order."""
    if pieces < 1:
        raise ValueError("pieces must be >= 1")
    length = os.path.getsize(path)
    if length < MC_GROUP * pieces:
        raise InsufficientData(f"{path}: {length} bytes is too short for {pieces} pieces of >= {MC_GROUP} bytes")
    bounds = segment_bounds(length, pieces)
    if workers <= 1:
        return [_analyze_range(path, a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: _analyze_range(path, *ab), bounds))


# -- verdicts ----------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    metric: str
    p_value: float
    label: str


def label_two_sided(p: float) -> str:
    """Ent convention for chi-square: both tails are suspicious."""
    if p < 0.01 or p > 0.99:
        return FAIL
    if p < 0.05 or p > 0.95:
        return SUSPECT
    return PASS


def label_lower(p: float) -> str:
    if p < 0.01:
        return FAIL
    if p < 0.05:
        return SUSPECT
    return PASS


def chi_square_bucket(p: float) -> float:
    return min(CHI_SQUARE_BUCKETS, key=lambda b: abs(b - p))


def _normal_two_sided(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def assess(report: QualityReport, level: str) -> list[Verdict]:
    """Label each metric at one level as pass / suspect / fail.

    Every metric is turned into a p-value under the hypothesis of uniform,
    independent symbols:

    * chi-square: its exceedance probability, judged on both tails;
    * entropy: G-test, G = 2 N ln2 (log2 k - H), chi-square with k-1 df;
    * mean: normal approximation with the uniform variance;
    * Monte Carlo pi: normal approximation of the binomial hit count;
    * serial correlation: r * sqrt(N) is approximately standard normal.
    """
    metrics = report.byte_level if level == BYTE else report.bit_level
    k = 256 if level == BYTE else 2
    n = metrics.symbols

    g = 2.0 * n * math.log(2.0) * max(0.0, math.log2(k) - metrics.entropy)
    entropy_p = chi2_sf(g, k - 1)

    variance = (k * k - 1) / 12.0
    mean_p = _normal_two_sided((metrics.mean - (k - 1) / 2.0) / math.sqrt(variance / n))

    points = report.mc_points
    quarter = math.pi / 4.0
    inside = metrics.mc_pi_estimate * points / 4.0
    mc_p = _normal_two_sided((inside - points * quarter) / math.sqrt(points * quarter * (1.0 - quarter)))

    r = metrics.serial_correlation
    serial_p = 0.0 if r is None else _normal_two_sided(r * math.sqrt(n))

    chi_p = metrics.chi_square_exceed_prob
    return [
        Verdict("entropy", entropy_p, label_lower(entropy_p)),
        Verdict("chi_square", chi_p, label_two_sided(chi_p)),
        Verdict("mean", mean_p, label_lower(mean_p)),
        Verdict("monte_carlo_pi", mc_p, label_lower(mc_p)),
        Verdict("serial_correlation", serial_p, label_lower(serial_p)),
    ]


def passed(report: QualityReport) -> bool:
    return all(v.label != FAIL for level in (BYTE, BIT) for v in assess(report, level))
