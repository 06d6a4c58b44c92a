"""
Time-tag analysis: pair-delay histograms, g2, the (t, tau) coincidence map of
pulsed runs, software gating, the shifted non-overlapped reference,
background subtraction and visibility.

Delays are tau = t_B - t_A. Histogram bins are centred on k * bin for
k = -K..K; a pair falls in bin k when tau is in [(k - 1/2) bin, (k + 1/2) bin).
The kernels work on doubled integer picoseconds so bin edges are exact.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from homwb.counting import Visibility
from homwb.exceptions import InputError, NormalizationError, ParameterError, RangeError, UndefinedVisibilityError
from homwb.interference import GateWindow
from homwb.logger import logger
from homwb.montecarlo import TagStream
from homwb.types import Channel, FloatArray, G2Normalization, IntArray, PS_PER_NS, PS_PER_S

PLATEAU_FRACTION = 0.2
NS_PER_US = 1e3


@njit(cache=True)
def _pair_histogram(a, b, bin_ps, n_side):
    hist = np.zeros(2 * n_side + 1, dtype=np.int64)
    span = (2 * n_side + 1) * bin_ps
    lo = 0
    for i in range(a.size):
        ta = a[i]
        while lo < b.size and 2 * (b[lo] - ta) < -span:
            lo += 1
        j = lo
        while j < b.size:
            d2 = 2 * (b[j] - ta)
            if d2 >= span:
                break
            hist[(d2 + span) // (2 * bin_ps)] += 1
            j += 1
    return hist


@njit(cache=True)
def _pair_map(a, t_index, n_t, b, bin_ps, n_side):
    counts = np.zeros((n_t, 2 * n_side + 1), dtype=np.int64)
    span = (2 * n_side + 1) * bin_ps
    lo = 0
    for i in range(a.size):
        ta = a[i]
        while lo < b.size and 2 * (b[lo] - ta) < -span:
            lo += 1
        j = lo
        while j < b.size:
            d2 = 2 * (b[j] - ta)
            if d2 >= span:
                break
            counts[t_index[i], (d2 + span) // (2 * bin_ps)] += 1
            j += 1
    return counts


def _bin_ps(bin_ns: float) -> int:
    if not bin_ns > 0:
        raise ParameterError(f"bin width must be > 0, got {bin_ns}")
    bin_ps = int(round(bin_ns * PS_PER_NS))
    if bin_ps < 1 or abs(bin_ps - bin_ns * PS_PER_NS) > 1e-6:
        raise ParameterError(f"bin width {bin_ns} ns is not a whole number of ps")
    return bin_ps


def _n_side(tau_max_ns: float, bin_ns: float) -> int:
    if not tau_max_ns > 0:
        raise ParameterError(f"tau_max must be > 0, got {tau_max_ns}")
    return int(round(tau_max_ns / bin_ns))


def _edges(n_side: int, bin_ns: float) -> FloatArray:
    return (np.arange(-n_side, n_side + 2) - 0.5) * bin_ns


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """
    Raw pair counts plus the baseline subtracted from them and the common
    scale they were divided by: values = (raw - baseline) / scale.
    """
    edges: FloatArray
    raw_counts: FloatArray
    baseline: float = 0.0
    scale: float = 1.0
    raw_errors: Optional[FloatArray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        raw = np.asarray(self.raw_counts, dtype=np.float64)
        if edges.ndim != 1 or edges.size != raw.size + 1:
            raise ParameterError("histogram needs one more edge than bins")
        if np.any(np.diff(edges) <= 0):
            raise ParameterError("histogram edges must be strictly increasing")
        if np.any(raw < 0):
            raise ParameterError("raw counts must be >= 0")
        errors = np.sqrt(raw) if self.raw_errors is None else np.asarray(self.raw_errors, dtype=np.float64)
        if errors.shape != raw.shape or np.any(errors < 0):
            raise ParameterError("errors must be >= 0 and match the counts")
        if not self.scale > 0:
            raise NormalizationError(f"histogram scale must be > 0, got {self.scale}")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "raw_counts", raw)
        object.__setattr__(self, "raw_errors", errors)

    def __len__(self) -> int:
        return int(self.raw_counts.size)

    @property
    def centers(self) -> FloatArray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def values(self) -> FloatArray:
        return (self.raw_counts - self.baseline) / self.scale

    @property
    def errors(self) -> FloatArray:
        return self.raw_errors / self.scale

    def center_index(self) -> int:
        return int(np.argmin(np.abs(self.centers)))

    def center_slice(self, center_bins: int = 1) -> slice:
        assert isinstance(center_bins, int) and center_bins >= 1 and center_bins % 2 == 1, \
            "center_bins must be an odd positive integer"
        middle = self.center_index()
        half = center_bins // 2
        if middle - half < 0 or middle + half >= len(self):
            raise RangeError(f"{center_bins} center bins exceed the histogram")
        return slice(middle - half, middle + half + 1)

    def center_value(self, center_bins: int = 1) -> Tuple[float, float]:
        """
        Mean of the central bins and its error.
        """
        window = self.center_slice(center_bins)
        value = float(np.mean(self.values[window]))
        error = float(np.sqrt(np.sum(self.errors[window] ** 2)) / center_bins)
        return value, error

    def rebin(self, factor: int) -> 'CoincidenceHistogram':
        assert isinstance(factor, int) and factor >= 1, "factor must be a positive integer"
        n = len(self) // factor
        if n == 0:
            raise ParameterError(f"cannot rebin {len(self)} bins by {factor}")
        raw = self.raw_counts[:n * factor].reshape(n, factor).sum(axis=1)
        errors = np.sqrt((self.raw_errors[:n * factor] ** 2).reshape(n, factor).sum(axis=1))
        edges = self.edges[:n * factor + 1:factor]
        return CoincidenceHistogram(edges, raw, self.baseline * factor, self.scale, errors, dict(self.meta))

    def subtracted(self, baseline: float, scale: float) -> 'CoincidenceHistogram':
        return replace(self, baseline=float(baseline), scale=float(scale))

    def to_csv(self) -> str:
        rows = ["tau_ns,counts,err"]
        rows += [f"{t:.12g},{v:.12g},{e:.12g}" for t, v, e in zip(self.centers, self.values, self.errors)]
        return "\n".join(rows) + "\n"

    def to_json(self) -> Dict[str, Any]:
        return {
            "tau_ns": self.centers.tolist(),
            "counts": self.values.tolist(),
            "err": self.errors.tolist(),
            "raw_counts": self.raw_counts.tolist(),
            "baseline": self.baseline,
            "scale": self.scale,
            "meta": self.meta,
        }


@dataclass(frozen=True, eq=False)
class CoincidenceMap:
    t_edges: FloatArray
    tau_edges: FloatArray
    counts: IntArray
    singles: IntArray
    period: float
    singles_b: Optional[IntArray] = None

    def __post_init__(self):
        assert self.counts.shape == (self.t_edges.size - 1, self.tau_edges.size - 1), "map shape mismatch"
        if np.any(self.counts < 0):
            raise ParameterError("map counts must be >= 0")

    @property
    def t_centers(self) -> FloatArray:
        return 0.5 * (self.t_edges[:-1] + self.t_edges[1:])

    @property
    def t_bin(self) -> float:
        return float(self.t_edges[1] - self.t_edges[0])

    def projection(self) -> CoincidenceHistogram:
        return CoincidenceHistogram(self.tau_edges, self.counts.sum(axis=0))


def pair_histogram(a: IntArray, b: IntArray, tau_max: float, bin: float) -> CoincidenceHistogram:
    """
    Counts of every (a, b) pair with |t_b - t_a| within the outer bin edges.
    Inputs are sorted ps timestamps; tau_max and bin are ns.
    """
    bin_ps = _bin_ps(bin)
    n_side = _n_side(tau_max, bin)
    counts = _pair_histogram(np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64),
                             bin_ps, n_side)
    return CoincidenceHistogram(_edges(n_side, bin_ps / PS_PER_NS), counts)


def plateau_mask(hist: CoincidenceHistogram, fraction: float = PLATEAU_FRACTION) -> np.ndarray:
    """
    Bins in the outer `fraction` of the delay range on either side.
    """
    reach = np.max(np.abs(hist.centers))
    return np.abs(hist.centers) >= (1.0 - fraction) * reach


def _two_channels(stream: TagStream, channels: Tuple[Channel, Channel]) -> Tuple[IntArray, IntArray]:
    for channel in channels:
        if channel not in stream.channel_set:
            raise InputError(f"stream has no channel {channel.name}")
    return stream.times(channels[0]), stream.times(channels[1])


def g2_histogram(stream: TagStream, tau_max: float, bin: float,
                 normalization: G2Normalization = G2Normalization.PLATEAU,
                 channels: Tuple[Channel, Channel] = (Channel.A, Channel.B)) -> CoincidenceHistogram:
    """
    Normalized cross-correlation of two channels. PLATEAU divides by the mean
    of the outer 20% of the range; ANALYTIC by R_A * R_B * bin * T.
    """
    a, b = _two_channels(stream, channels)
    hist = pair_histogram(a, b, tau_max, bin)
    if normalization is G2Normalization.PLATEAU:
        scale = float(np.mean(hist.raw_counts[plateau_mask(hist)]))
    else:
        span = stream.span_s
        scale = (a.size / span) * (b.size / span) * hist.bin_width * 1e-9 * span if span > 0 else 0.0
    if not scale > 0:
        raise NormalizationError("no uncorrelated coincidences to normalize g2 by")
    meta = {"normalization": normalization.value, "singles": [int(a.size), int(b.size)], "span_s": stream.span_s}
    return CoincidenceHistogram(hist.edges, hist.raw_counts, 0.0, scale, None, meta)


@dataclass(frozen=True)
class G2Estimate:
    zero_bin: float
    zero_bin_error: float
    center_mean: float
    center_mean_error: float
    center_bins: int


def g2_zero(hist: CoincidenceHistogram, center_bins: int = 1) -> G2Estimate:
    """
    g2(0) from the tau = 0 bin and from the mean over the central bins.
    """
    zero, zero_error = hist.center_value(1)
    mean, mean_error = hist.center_value(center_bins)
    return G2Estimate(zero, zero_error, mean, mean_error, center_bins)


class StreamingCorrelator:
    """
    Accumulates an A-B pair histogram over time-ordered stream blocks,
    carrying the last tau_max of each block into the next.
    """

    def __init__(self, tau_max: float, bin: float, channels: Tuple[Channel, Channel] = (Channel.A, Channel.B)):
        self._bin_ps = _bin_ps(bin)
        self._n_side = _n_side(tau_max, bin)
        self._channels = channels
        self._counts = np.zeros(2 * self._n_side + 1, dtype=np.int64)
        self._carry_a = np.zeros(0, np.int64)
        self._carry_b = np.zeros(0, np.int64)
        self._last = None
        self._span_ps = 0

    def add(self, block: TagStream) -> None:
        if len(block) == 0:
            return
        if self._last is not None and block.timestamps[0] < self._last:
            raise InputError("stream blocks must be time ordered")
        a, b = _two_channels(block, self._channels)
        all_a = np.concatenate((self._carry_a, a))
        all_b = np.concatenate((self._carry_b, b))
        self._counts += _pair_histogram(all_a, all_b, self._bin_ps, self._n_side)
        self._counts -= _pair_histogram(self._carry_a, self._carry_b, self._bin_ps, self._n_side)

        self._last = int(block.timestamps[-1])
        horizon = self._last - (self._n_side + 1) * self._bin_ps
        self._carry_a = all_a[all_a >= horizon]
        self._carry_b = all_b[all_b >= horizon]
        self._span_ps += block.span_ps

    def histogram(self) -> CoincidenceHistogram:
        return CoincidenceHistogram(_edges(self._n_side, self._bin_ps / PS_PER_NS), self._counts.copy(),
                                    meta={"span_s": self._span_ps / PS_PER_S})


def _time_in_period(stream: TagStream, period_ps: int,
                    channel: Channel = Channel.A) -> Tuple[IntArray, IntArray]:
    """
    (channel timestamps after the first CLK, their time since the latest CLK
    modulo the period) in ps.
    """
    if Channel.CLK not in stream.channel_set:
        raise InputError("stream has no CLK channel")
    clocks = stream.times(Channel.CLK)
    if clocks.size == 0:
        raise InputError("stream holds no CLK tags")
    a = stream.times(channel)
    latest = np.searchsorted(clocks, a, side="right") - 1
    early = int(np.count_nonzero(latest < 0))
    if early:
        logger.warning(f"skipping {early} {channel.name} event(s) before the first CLK tag")
    keep = latest >= 0
    a = a[keep]
    return a, (a - clocks[latest[keep]]) % period_ps


def _t_bins(period_ns: float, t_bin_ns: float) -> Tuple[int, int]:
    t_bin_ps = _bin_ps(t_bin_ns)
    period_ps = int(round(period_ns * PS_PER_NS))
    n_t = int(np.ceil(period_ps / t_bin_ps))
    return t_bin_ps, n_t


def coincidence_map(stream: TagStream, period: float, t_bin: float, tau_bin: float, tau_max: float) -> CoincidenceMap:
    """
    period and tau_max in us, bins in ns.
    """
    if not period > 0:
        raise ParameterError(f"period must be > 0, got {period}")
    period_ns = period * NS_PER_US
    t_bin_ps, n_t = _t_bins(period_ns, t_bin)
    period_ps = int(round(period_ns * PS_PER_NS))
    a, t_in_period = _time_in_period(stream, period_ps)
    t_index = (t_in_period // t_bin_ps).astype(np.int64)

    tau_bin_ps = _bin_ps(tau_bin)
    n_side = _n_side(tau_max * NS_PER_US, tau_bin)
    b = stream.times(Channel.B)
    counts = _pair_map(np.ascontiguousarray(a), t_index, n_t, np.ascontiguousarray(b), tau_bin_ps, n_side)
    singles = np.bincount(t_index, minlength=n_t)[:n_t]
    _, b_in_period = _time_in_period(stream, period_ps, Channel.B)
    singles_b = np.bincount(b_in_period // t_bin_ps, minlength=n_t)[:n_t]
    t_edges = np.arange(n_t + 1) * t_bin_ps / PS_PER_NS
    return CoincidenceMap(t_edges, _edges(n_side, tau_bin_ps / PS_PER_NS), counts, singles, period_ns, singles_b)


def _check_windows(windows: Sequence[GateWindow], period_ns: float) -> None:
    if not windows:
        raise ParameterError("gate needs at least one window")
    for window in windows:
        if window.start < 0 or window.end > period_ns:
            raise ParameterError(f"window [{window.start}, {window.end}] ns outside [0, {period_ns}) ns")


def _selected_t_bins(t_centers: FloatArray, windows: Sequence[GateWindow]) -> np.ndarray:
    selected = np.zeros(t_centers.size, dtype=bool)
    for window in windows:
        selected |= window.contains(t_centers)
    return selected


def gate_and_project(cmap: CoincidenceMap, windows: Sequence[GateWindow]) -> CoincidenceHistogram:
    """
    Sums the map over t bins whose centre lies in any window.
    """
    _check_windows(windows, cmap.period)
    selected = _selected_t_bins(cmap.t_centers, windows)
    counts = cmap.counts[selected].sum(axis=0)
    meta = {
        "gate_duty": float(np.count_nonzero(selected) * cmap.t_bin / cmap.period),
        "gated_singles_a": int(cmap.singles[selected].sum()),
    }
    if cmap.singles_b is not None:
        meta["gated_singles_b"] = int(cmap.singles_b[selected].sum())
    return CoincidenceHistogram(cmap.tau_edges, counts, meta=meta)


def gated_histogram(stream: TagStream, period: float, windows: Sequence[GateWindow], t_bin: float,
                    tau_bin: float, tau_max: float) -> CoincidenceHistogram:
    """
    Same result as gate_and_project(coincidence_map(...)) without building
    the map: A events are gated first, then histogrammed.
    """
    period_ns = period * NS_PER_US
    _check_windows(windows, period_ns)
    t_bin_ps, n_t = _t_bins(period_ns, t_bin)
    a, t_in_period = _time_in_period(stream, int(round(period_ns * PS_PER_NS)))
    t_index = t_in_period // t_bin_ps
    t_centers = (np.arange(n_t) + 0.5) * t_bin_ps / PS_PER_NS
    selected = _selected_t_bins(t_centers, windows)
    gated = a[selected[t_index]]
    hist = pair_histogram(gated, stream.times(Channel.B), tau_max * NS_PER_US, tau_bin)
    _, b_in_period = _time_in_period(stream, int(round(period_ns * PS_PER_NS)), Channel.B)
    meta = {
        "gate_duty": float(np.count_nonzero(selected) * t_bin_ps / PS_PER_NS / period_ns),
        "gated_singles_a": int(gated.size),
        "gated_singles_b": int(np.count_nonzero(selected[b_in_period // t_bin_ps])),
    }
    return replace(hist, meta=meta)


def shifted_reference(hist: CoincidenceHistogram, period: float, half_period: float,
                      k_range: Sequence[int]) -> CoincidenceHistogram:
    """
    Mean of the raw curve shifted by tau_k = half_period + k * period (us) over
    k in k_range, on the widest symmetric delay range every shift covers.
    Error per bin is sqrt(sum of raw counts) / K.
    """
    ks = list(k_range)
    if not ks:
        raise ParameterError("k_range is empty")
    width = hist.bin_width
    shifts = [(half_period + period * k) * NS_PER_US for k in ks]
    steps = [s / width for s in shifts]
    if any(abs(s - round(s)) > 1e-6 for s in steps):
        raise ParameterError(f"shifts must be whole multiples of the {width} ns bin width")
    steps = [int(round(s)) for s in steps]

    middle = hist.center_index()
    reach = min(middle + min(steps), len(hist) - 1 - middle - max(steps))
    if reach < 0:
        raise RangeError(
            f"shifts up to {max(abs(s) for s in shifts) / NS_PER_US:.4g} us exceed the histogram support"
        )
    offsets = np.arange(-reach, reach + 1)
    stacked = np.stack([hist.raw_counts[middle + step + offsets] for step in steps])
    raw = stacked.mean(axis=0)
    errors = np.sqrt(stacked.sum(axis=0)) / len(steps)
    edges = hist.edges[middle - reach:middle + reach + 2]
    meta = {**hist.meta, "shifts_us": [s / NS_PER_US for s in shifts]}
    return CoincidenceHistogram(edges, raw, 0.0, 1.0, errors, meta)


def expected_background(singles_a: float, singles_b: float, gate_duty: float, bin: float, duration: float) -> float:
    """
    Accidental coincidences per bin: rates in 1/s, bin in ns, duration in s.
    """
    if min(singles_a, singles_b, gate_duty, bin, duration) < 0:
        raise ParameterError("background inputs must be >= 0")
    return singles_a * singles_b * bin * 1e-9 * duration * gate_duty


def background_level(singles_a_gated: float, singles_b: float, background_a: float, background_b: float,
                     gate_duty: float, bin: float, duration: float) -> float:
    """
    Accidentals involving at least one background click. singles_a_gated is
    the rate of gated A events over the whole run, singles_b the B rate while
    the gate is open (B counts inside the windows over the gated time);
    backgrounds are the dark plus stray-light rates of each detector.
    """
    signal_a = max(singles_a_gated - background_a * gate_duty, 0.0)
    return (expected_background(background_a, singles_b, gate_duty, bin, duration)
            + expected_background(signal_a, background_b, 1.0, bin, duration))


def _cropped(signal: CoincidenceHistogram, reference: CoincidenceHistogram) -> CoincidenceHistogram:
    if not np.isclose(signal.bin_width, reference.bin_width):
        raise ParameterError("signal and reference histograms have different bin widths")
    start = int(np.argmin(np.abs(signal.edges - reference.edges[0])))
    stop = start + len(reference)
    if stop > len(signal) or not np.allclose(signal.edges[start:stop + 1], reference.edges):
        raise ParameterError("reference bins are not a subset of the signal bins")
    return replace(signal, edges=signal.edges[start:stop + 1], raw_counts=signal.raw_counts[start:stop],
                   raw_errors=signal.raw_errors[start:stop])


def subtract_and_normalize(signal: CoincidenceHistogram, background_level: float, reference: CoincidenceHistogram,
                           plateau: Optional[np.ndarray] = None) -> Tuple[CoincidenceHistogram, CoincidenceHistogram]:
    """
    Subtracts the background from both curves and divides both by the one
    scale that brings the reference plateau (default: its outer 20%) to 1.
    The signal is cropped to the reference bins.
    """
    signal = _cropped(signal, reference)
    mask = plateau_mask(reference) if plateau is None else plateau
    scale = float(np.mean(reference.raw_counts[mask] - background_level))
    if not scale > 0:
        raise NormalizationError("reference plateau is zero after background subtraction")
    return signal.subtracted(background_level, scale), reference.subtracted(background_level, scale)


def center_mask(hist: CoincidenceHistogram, center_bins: int = 1) -> np.ndarray:
    mask = np.zeros(len(hist), dtype=bool)
    mask[hist.center_slice(center_bins)] = True
    return mask


def visibility_from_histograms(n_par: CoincidenceHistogram, n_perp: CoincidenceHistogram,
                               center_bins: int = 1) -> Visibility:
    par, sigma_par = n_par.center_value(center_bins)
    perp, sigma_perp = n_perp.center_value(center_bins)
    if perp == 0:
        raise UndefinedVisibilityError("perpendicular/non-overlapped level is zero at tau = 0")
    value = (perp - par) / perp
    sigma = np.hypot(sigma_par / perp, par * sigma_perp / perp ** 2)
    return Visibility(float(value), float(sigma))


@dataclass(frozen=True, eq=False)
class CwReport:
    g2: CoincidenceHistogram
    estimate: G2Estimate
    singles_rates: Dict[str, float]
    visibility: Optional[Visibility] = None
    reference: Optional[CoincidenceHistogram] = None

    def summary(self) -> Dict[str, Any]:
        report = {
            "g2_zero_bin": [self.estimate.zero_bin, self.estimate.zero_bin_error],
            "g2_center_mean": [self.estimate.center_mean, self.estimate.center_mean_error],
            "center_bins": self.estimate.center_bins,
            "singles_rates": self.singles_rates,
        }
        if self.visibility is not None:
            report["V"] = self.visibility.value
            report["sigma_V"] = self.visibility.sigma
        return report


def analyze_cw(stream: TagStream, tau_max: float, bin: float, center_bins: int = 1,
               reference: Optional[TagStream] = None,
               normalization: G2Normalization = G2Normalization.PLATEAU) -> CwReport:
    """
    Normalized A-B correlation of a CW run (an HBT g2 or an HOM n(tau)).
    With a perpendicular-polarization reference run, also V.
    """
    hist = g2_histogram(stream, tau_max, bin, normalization)
    estimate = g2_zero(hist, center_bins)
    rates = {c.name: stream.singles_rate(c) for c in (Channel.A, Channel.B)}
    if reference is None:
        return CwReport(hist, estimate, rates)
    reference_hist = g2_histogram(reference, tau_max, bin, normalization)
    visibility = visibility_from_histograms(hist, reference_hist, center_bins)
    return CwReport(hist, estimate, rates, visibility, reference_hist)


@dataclass(frozen=True, eq=False)
class PulsedReport:
    gated: CoincidenceHistogram
    overlapped: CoincidenceHistogram
    reference: CoincidenceHistogram
    background: float
    visibility: Visibility
    singles_rates: Dict[str, float]
    net_reference_coincidences: float

    def summary(self) -> Dict[str, Any]:
        return {
            "V": self.visibility.value,
            "sigma_V": self.visibility.sigma,
            "background_per_bin": self.background,
            "gate_duty": self.gated.meta.get("gate_duty"),
            "net_reference_coincidences": self.net_reference_coincidences,
            "singles_rates": self.singles_rates,
        }


def analyze_pulsed(stream: TagStream, windows: Sequence[GateWindow], period: float = 5.0, half_period: float = 2.5,
                   k_range: Sequence[int] = range(-5, 5), bin: float = 5.0, t_bin: float = 1.0,
                   center_bins: int = 1, background_a: float = 0.0, background_b: float = 0.0) -> PulsedReport:
    """
    Gate A, histogram A-B delays, build the shifted non-overlapped reference,
    subtract the expected background and compare the tau = 0 levels.
    """
    shifts = [abs(half_period + period * k) for k in k_range]
    tau_max = max(shifts) + period / 2.0
    gated = gated_histogram(stream, period, windows, t_bin, bin, tau_max)
    reference = shifted_reference(gated, period, half_period, k_range)

    duration = stream.span_s
    if not duration > 0:
        raise InputError("stream spans no time")
    gate_duty = gated.meta["gate_duty"]
    # B density seen by a gated A click; the half-period shift maps the ion windows onto each other
    singles_b = gated.meta["gated_singles_b"] / (duration * gate_duty) if gate_duty > 0 else 0.0
    level = background_level(gated.meta["gated_singles_a"] / duration, singles_b, background_a, background_b,
                             gate_duty, gated.bin_width, duration)
    plateau = center_mask(reference, center_bins)
    overlapped, reference_norm = subtract_and_normalize(gated, level, reference, plateau)
    visibility = visibility_from_histograms(overlapped, reference_norm, center_bins)

    net = float(np.sum(reference.raw_counts[plateau] - level) * len(list(k_range)))
    rates = {c.name: stream.singles_rate(c) for c in (Channel.A, Channel.B, Channel.CLK)}
    logger.info(f"pulsed analysis: V = {visibility.value:.3f} +/- {visibility.sigma:.3f}")
    return PulsedReport(gated, overlapped, reference_norm, level, visibility, rates, net)
