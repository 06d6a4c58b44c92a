"""
Synthetic time-tag streams for the CW and the pulsed (on-demand) experiments.

Time is cut into fixed blocks. Block k draws from its own generator
(see workers.BlockParams.rng), so a run is reproducible from its seed and
does not depend on how many workers generated it. Within a block times are
float ns relative to the block start; they become integer ps on output.

CW sources: a single photon is a renewal process with a dead time of half the
coherence window (no two singles closer than that), on top of which doublets
arrive at rate R^2 g2(0) tau_c / 2 with a uniform pair separation below
tau_c / 2. That reproduces the configured g2(0) for |tau| < tau_c / 2.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit

from homwb.exceptions import ModelValidityError, OverlapAmbiguityError, ParameterError
from homwb.interference import joint_density_full
from homwb.logger import logger
from homwb.types import Channel, FloatArray, IntArray, PS_PER_NS, PS_PER_S, SourceMode
from homwb.wavepacket import (
    EmissionMixture,
    SpectralModel,
    TemporalEnvelope,
    exponential_envelope,
)
from homwb.workers import BlockParams, run_blocks

SMALL_FLUX_LIMIT = 0.1
DEFAULT_COHERENCE_WINDOW = {"atom": 100.0, "ion": 10.0}
SLOT_MATCH_TOLERANCE = 1.0  # ns

NS_PER_S = 1e9
NS_PER_US = 1e3


@dataclass(frozen=True)
class SourceSpec:
    label: str
    mode: SourceMode = SourceMode.CW
    rate: float = 0.0
    attempt_probability: float = 0.0
    g2_zero: float = 0.0
    background_rate: float = 0.0
    coherence_window: Optional[float] = None

    def __post_init__(self):
        if self.mode is SourceMode.CW and not self.rate > 0:
            raise ParameterError(f"{self.label}: CW rate must be > 0, got {self.rate}")
        if self.mode is SourceMode.PULSED and not 0 < self.attempt_probability <= 1:
            raise ParameterError(f"{self.label}: per-attempt probability must be in (0, 1]")
        if self.g2_zero < 0 or self.background_rate < 0:
            raise ParameterError(f"{self.label}: g2(0) and background rate must be >= 0")
        if self.coherence_window is None:
            object.__setattr__(self, "coherence_window", DEFAULT_COHERENCE_WINDOW.get(self.label, 10.0))
        if not self.coherence_window > 0:
            raise ParameterError(f"{self.label}: coherence window must be > 0")

    @property
    def doublet_rate(self) -> float:
        """
        Per second, CW only.
        """
        return self.rate ** 2 * self.g2_zero * self.coherence_window / NS_PER_S / 2.0

    @property
    def single_rate(self) -> float:
        return self.rate - 2.0 * self.doublet_rate

    def occupancy(self) -> float:
        """
        Mean number of photons per coherence window.
        """
        return self.rate * self.coherence_window / NS_PER_S


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: Tuple[float, float] = (1.0, 1.0)
    dark_rate: Tuple[float, float] = (0.0, 0.0)
    dead_time: float = 0.0
    afterpulse_probability: float = 0.0
    afterpulse_delay: float = 100.0

    def __post_init__(self):
        if len(self.efficiency) != 2 or len(self.dark_rate) != 2:
            raise ParameterError("detectors need exactly two efficiencies and two dark rates (A, B)")
        if not all(0.0 <= e <= 1.0 for e in self.efficiency):
            raise ParameterError(f"detector efficiencies must be in [0, 1], got {self.efficiency}")
        if any(r < 0 for r in self.dark_rate):
            raise ParameterError("dark rates must be >= 0")
        if self.dead_time < 0 or not 0.0 <= self.afterpulse_probability < 1.0 or not self.afterpulse_delay > 0:
            raise ParameterError("dead time >= 0, afterpulse probability in [0, 1) and delay > 0 required")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    mode: SourceMode
    duration: float
    atom: SourceSpec
    ion: SourceSpec
    overlap: float = 1.0
    spectral: SpectralModel = field(default_factory=SpectralModel.ideal)
    atom_envelope: Optional[Union[TemporalEnvelope, EmissionMixture]] = None
    ion_envelope: Optional[Union[TemporalEnvelope, EmissionMixture]] = None
    pulse_period: float = 5.0
    atom_slot_offset: float = 4.25
    ion_slot_offsets: Tuple[float, ...] = (1.75, 4.25)
    arrival_offset: float = 40.0
    duty_cycle: float = 1.0
    clock_divider: int = 1
    detectors: DetectorSpec = field(default_factory=DetectorSpec)
    rng_seed: int = 0
    interference_window: float = 10.0
    block_duration: float = 1.0
    density_dt: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ParameterError(f"duration must be > 0, got {self.duration}")
        if not 0.0 <= self.overlap <= 1.0:
            raise ParameterError(f"overlap must be in [0, 1], got {self.overlap}")
        if self.mode is SourceMode.PULSED and not self.pulse_period > 0:
            raise ParameterError("pulse period must be > 0 in pulsed mode")
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ParameterError("duty cycle must be in (0, 1]")
        if not isinstance(self.clock_divider, int) or self.clock_divider < 1:
            raise ParameterError("clock divider must be an integer >= 1")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ParameterError("rng seed must be an unsigned 64-bit integer")
        if not self.block_duration > 0 or not self.interference_window > 0 or not self.density_dt > 0:
            raise ParameterError("block duration, interference window and density grid step must be > 0")
        for source in (self.atom, self.ion):
            if source.mode is not self.mode:
                raise ParameterError(f"{source.label}: source mode {source.mode.value} != run mode {self.mode.value}")

    @property
    def period_ns(self) -> float:
        return self.pulse_period * NS_PER_US

    @property
    def n_periods(self) -> int:
        return int(round(self.duration * self.duty_cycle * NS_PER_S / self.period_ns))

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        return replace(self, rng_seed=seed)


@dataclass(frozen=True, eq=False)
class TagStream:
    channels: np.ndarray
    timestamps: IntArray
    channel_set: FrozenSet[Channel] = frozenset(Channel)
    duration_ps: int = 0
    resolution_ps: int = 1

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.uint8)
        timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if channels.shape != timestamps.shape or channels.ndim != 1:
            raise ParameterError("channels and timestamps must be 1-D arrays of equal length")
        if timestamps.size and np.any(np.diff(timestamps) < 0):
            raise ParameterError("timestamps must be nondecreasing")
        allowed = np.array(sorted(int(c) for c in self.channel_set), dtype=np.uint8)
        if channels.size and not np.all(np.isin(channels, allowed)):
            raise ParameterError("stream holds channels outside its declared channel set")
        channels.setflags(write=False)
        timestamps.setflags(write=False)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "timestamps", timestamps)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def span_ps(self) -> int:
        """
        Declared duration, or the first-to-last tag span when none was set.
        """
        if self.duration_ps > 0:
            return self.duration_ps
        if len(self) < 2:
            return 0
        return int(self.timestamps[-1] - self.timestamps[0]) + 1

    @property
    def span_s(self) -> float:
        return self.span_ps / PS_PER_S

    def times(self, channel: Channel) -> IntArray:
        return self.timestamps[self.channels == int(channel)]

    def counts(self) -> Dict[str, int]:
        return {c.name: int(np.count_nonzero(self.channels == int(c))) for c in sorted(self.channel_set)}

    def singles_rate(self, channel: Channel) -> float:
        span = self.span_s
        return len(self.times(channel)) / span if span > 0 else 0.0


def merge_streams(streams: Iterable[TagStream], duration_ps: Optional[int] = None) -> TagStream:
    """
    Merges streams into one ordered by (timestamp, channel); equal records
    keep their input order.
    """
    streams = list(streams)
    if not streams:
        return TagStream(np.zeros(0, np.uint8), np.zeros(0, np.int64))
    channel_set = frozenset().union(*(s.channel_set for s in streams))
    channels = np.concatenate([s.channels for s in streams])
    timestamps = np.concatenate([s.timestamps for s in streams])
    order = np.lexsort((channels, timestamps))
    total = duration_ps if duration_ps is not None else max(s.duration_ps for s in streams)
    return TagStream(channels[order], timestamps[order], channel_set, total)


def split_stream(stream: TagStream, channel: Channel) -> TagStream:
    if channel not in stream.channel_set:
        raise ParameterError(f"channel {getattr(channel, 'name', channel)} not in stream channel set")
    mask = stream.channels == int(channel)
    return TagStream(stream.channels[mask], stream.timestamps[mask], stream.channel_set, stream.duration_ps)


@njit(cache=True)
def _dead_time_mask(times, dead_time):
    keep = np.ones(times.size, dtype=np.bool_)
    last = -np.inf
    for i in range(times.size):
        if times[i] - last < dead_time:
            keep[i] = False
        else:
            last = times[i]
    return keep


def _poisson_times(rng: np.random.Generator, rate: float, span_ns: float) -> FloatArray:
    """
    Uniform Poisson arrivals; rate per second.
    """
    n = rng.poisson(rate * span_ns / NS_PER_S) if rate > 0 else 0
    return np.sort(rng.random(n) * span_ns)


def _renewal_times(rng: np.random.Generator, rate: float, dead_time: float, span_ns: float) -> FloatArray:
    """
    Arrivals with a minimum spacing `dead_time` (ns) and mean rate `rate` (1/s):
    gaps are dead_time + Exp(1/rate') with rate' = rate / (1 - rate * dead_time).
    """
    if rate <= 0:
        return np.zeros(0)
    mean_gap = NS_PER_S / rate
    free_mean = mean_gap - dead_time
    chunks = []
    now = rng.exponential(free_mean)
    while now < span_ns:
        n = int((span_ns - now) / mean_gap * 1.05) + 16
        gaps = dead_time + rng.exponential(free_mean, n)
        arrivals = now + np.concatenate(([0.0], np.cumsum(gaps[:-1])))
        chunks.append(arrivals[arrivals < span_ns])
        now = arrivals[-1] + gaps[-1]
    return np.concatenate(chunks) if chunks else np.zeros(0)


def _cw_source(rng: np.random.Generator, source: SourceSpec, span_ns: float) -> Tuple[FloatArray, FloatArray]:
    """
    (singles, doublet photons) of one CW source.
    """
    singles = _renewal_times(rng, source.single_rate, source.coherence_window / 2.0, span_ns)
    firsts = _poisson_times(rng, source.doublet_rate, span_ns)
    seconds = firsts + rng.random(firsts.size) * source.coherence_window / 2.0
    return singles, np.concatenate((firsts, seconds))


def _pair_nearest(ion: FloatArray, atom: FloatArray, half_window: float) -> Tuple[IntArray, IntArray]:
    """
    Pairs each ion photon with the nearest atom photon within half_window;
    an atom photon is used by at most one (the earliest) ion photon.
    """
    if ion.size == 0 or atom.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    order = np.argsort(atom, kind="stable")
    sorted_atom = atom[order]
    right = np.clip(np.searchsorted(sorted_atom, ion), 1, sorted_atom.size - 1) if sorted_atom.size > 1 \
        else np.zeros(ion.size, np.int64)
    left = np.maximum(right - 1, 0)
    use_left = np.abs(ion - sorted_atom[left]) <= np.abs(sorted_atom[right] - ion)
    nearest = np.where(use_left, left, right)
    close = np.abs(sorted_atom[nearest] - ion) <= half_window
    ion_index = np.flatnonzero(close)
    atom_index = order[nearest[close]]
    _, first = np.unique(atom_index, return_index=True)
    first = np.sort(first)
    return ion_index[first], atom_index[first]


def _detect(rng: np.random.Generator, times: FloatArray, ports: np.ndarray, detectors: DetectorSpec,
            span_ns: float) -> Tuple[FloatArray, np.ndarray]:
    """
    Efficiency thinning, dark counts, afterpulses and dead time per channel.
    """
    out_times, out_channels = [], []
    for channel in (Channel.A, Channel.B):
        index = int(channel)
        arriving = times[ports == index]
        detected = arriving[rng.random(arriving.size) < detectors.efficiency[index]]
        dark = _poisson_times(rng, detectors.dark_rate[index], span_ns)
        clicks = np.sort(np.concatenate((detected, dark)))
        if detectors.afterpulse_probability > 0 and clicks.size:
            spawning = clicks[rng.random(clicks.size) < detectors.afterpulse_probability]
            afterpulses = spawning + rng.exponential(detectors.afterpulse_delay, spawning.size)
            clicks = np.sort(np.concatenate((clicks, afterpulses)))
        if detectors.dead_time > 0 and clicks.size:
            clicks = clicks[_dead_time_mask(clicks, detectors.dead_time)]
        out_times.append(clicks)
        out_channels.append(np.full(clicks.size, index, dtype=np.uint8))
    return np.concatenate(out_times), np.concatenate(out_channels)


def _to_stream(times_ns: FloatArray, channels: np.ndarray, start_ps: int, duration_ps: int) -> TagStream:
    stamps = start_ps + np.rint(times_ns * PS_PER_NS).astype(np.int64)
    order = np.lexsort((channels, stamps))
    return TagStream(channels[order], stamps[order], frozenset(Channel), duration_ps)


def _random_ports(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=n).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class _CwPlan:
    sources: Tuple[SourceSpec, ...]
    overlap: float
    interference_window: float
    detectors: DetectorSpec


def _check_small_flux(sources: Sequence[SourceSpec]) -> None:
    for source in sources:
        if source.occupancy() > SMALL_FLUX_LIMIT:
            raise ModelValidityError(
                f"{source.label}: {source.occupancy():.3g} photons per coherence window exceeds "
                f"{SMALL_FLUX_LIMIT}, the two-photon approximation does not hold"
            )
        if source.single_rate <= 0:
            raise ModelValidityError(f"{source.label}: doublet rate exceeds the total rate")


def _cw_block(params: BlockParams) -> Optional[TagStream]:
    plan: _CwPlan = params.data
    rng = params.rng()
    span_ns = (params.stop_ps - params.start_ps) / PS_PER_NS

    singles, doublets = [], []
    for source in plan.sources:
        single, doublet = _cw_source(rng, source, span_ns)
        singles.append(single)
        doublets.append(doublet)
    background = [_poisson_times(rng, source.background_rate, span_ns) for source in plan.sources]

    times = [np.concatenate(doublets + background)] if plan.sources else []
    ports = [_random_ports(rng, times[0].size)] if plan.sources else []

    if len(plan.sources) == 2:
        atom, ion = singles
        ion_index, atom_index = _pair_nearest(ion, atom, plan.interference_window / 2.0)
        n_pairs = ion_index.size
        opposite = rng.random(n_pairs) < (1.0 - plan.overlap) / 2.0
        first = _random_ports(rng, n_pairs)
        second = np.where(opposite, 1 - first, first).astype(np.uint8)
        times += [atom[atom_index], ion[ion_index]]
        ports += [first, second]

        unpaired_atom = np.delete(atom, atom_index)
        unpaired_ion = np.delete(ion, ion_index)
        for photons in (unpaired_atom, unpaired_ion):
            times.append(photons)
            ports.append(_random_ports(rng, photons.size))
    else:
        for photons in singles:
            times.append(photons)
            ports.append(_random_ports(rng, photons.size))

    all_times = np.concatenate(times) if times else np.zeros(0)
    all_ports = np.concatenate(ports) if ports else np.zeros(0, np.uint8)
    if params.cancelled.is_set():
        logger.debug(f"cw block {params.index}: cancelled before detection")
        return None
    detected, channels = _detect(rng, all_times, all_ports, plan.detectors, span_ns)
    logger.debug(f"cw block {params.index}: {detected.size} detections")
    return _to_stream(detected, channels, params.start_ps, params.stop_ps - params.start_ps)


def _time_blocks(duration_s: float, block_s: float, seed: int, data) -> List[BlockParams]:
    total_ps = int(round(duration_s * PS_PER_S))
    block_ps = int(round(block_s * PS_PER_S))
    blocks = []
    for index, start in enumerate(range(0, total_ps, block_ps)):
        blocks.append(BlockParams(index, seed, start, min(start + block_ps, total_ps), data))
    return blocks


def _cw_plan(config: ExperimentConfig) -> _CwPlan:
    if config.mode is not SourceMode.CW:
        raise ParameterError("simulate_cw needs a CW configuration")
    _check_small_flux((config.atom, config.ion))
    return _CwPlan((config.atom, config.ion), config.overlap, config.interference_window, config.detectors)


def iter_cw_blocks(config: ExperimentConfig) -> Iterator[TagStream]:
    """
    Serial block-by-block generation for runs too long to hold in memory.
    Concatenating the yielded blocks gives the simulate_cw stream up to
    records that spill over a block boundary.
    """
    plan = _cw_plan(config)
    for block in _time_blocks(config.duration, config.block_duration, config.rng_seed, plan):
        yield _cw_block(block)


def simulate_cw(config: ExperimentConfig, threads: int = 1) -> TagStream:
    plan = _cw_plan(config)
    blocks = _time_blocks(config.duration, config.block_duration, config.rng_seed, plan)
    logger.info(f"simulating {config.duration} s CW run in {len(blocks)} block(s) on {threads} thread(s)")
    streams = run_blocks(_cw_block, blocks, threads)
    return merge_streams(streams, int(round(config.duration * PS_PER_S)))


def simulate_hbt(source: SourceSpec, detectors: DetectorSpec, duration: float, seed: int,
                 threads: int = 1, block_duration: float = 1.0) -> TagStream:
    """
    One CW source on a 50:50 beamsplitter with a detector on each output.
    """
    if source.mode is not SourceMode.CW:
        raise ParameterError("simulate_hbt needs a CW source")
    if not duration > 0:
        raise ParameterError(f"duration must be > 0, got {duration}")
    _check_small_flux((source,))
    plan = _CwPlan((source,), 0.0, 1.0, detectors)
    blocks = _time_blocks(duration, block_duration, seed, plan)
    streams = run_blocks(_cw_block, blocks, threads)
    return merge_streams(streams, int(round(duration * PS_PER_S)))


def _as_mixture(envelope: Union[TemporalEnvelope, EmissionMixture, None], decay: float) -> EmissionMixture:
    if envelope is None:
        envelope = exponential_envelope(decay, 0.0, 10.0 * decay, 0.5)
    if isinstance(envelope, TemporalEnvelope):
        return EmissionMixture.pure(envelope)
    return envelope


def _shifted_mixture(mixture: EmissionMixture, offset: float) -> EmissionMixture:
    return EmissionMixture(mixture.direct.shifted(offset), mixture.p_direct, mixture.delay_density)


def _mixture_span(mixture: EmissionMixture) -> float:
    if mixture.p_delayed == 0:
        return len(mixture.direct) * mixture.dt
    return (len(mixture.direct) + mixture.delay_density.size - 1) * mixture.dt


@dataclass(frozen=True, eq=False)
class _PulsedPlan:
    config: ExperimentConfig
    atom: EmissionMixture
    ion: EmissionMixture
    overlapped_slot: Optional[int]
    opposite_probability: float
    cell_t0: FloatArray
    cell_tau: FloatArray
    cell_weights: FloatArray
    cell_dt: float


@dataclass(frozen=True)
class _PeriodSpan:
    plan: _PulsedPlan
    first: int
    count: int


def _check_slots(config: ExperimentConfig, atom: EmissionMixture, ion: EmissionMixture) -> None:
    period = config.period_ns
    slots = sorted((s * NS_PER_US) % period for s in config.ion_slot_offsets)
    if not slots:
        raise ParameterError("pulsed mode needs at least one ion slot")
    span = max(_mixture_span(atom), _mixture_span(ion) + abs(config.arrival_offset))
    gaps = np.diff(slots + [slots[0] + period]) if len(slots) > 1 else [period]
    if min(gaps) < span:
        raise OverlapAmbiguityError(
            f"ion slots {min(gaps):.4g} ns apart but a photon spans {span:.4g} ns"
        )


def _pulsed_plan(config: ExperimentConfig) -> _PulsedPlan:
    if config.mode is not SourceMode.PULSED:
        raise ParameterError("simulate_pulsed needs a pulsed configuration")
    atom = _as_mixture(config.atom_envelope, 120.0)
    if atom.p_delayed > 0:
        raise ParameterError("the atom photon has no delayed component in the pulsed model, give a direct envelope")
    ion = _as_mixture(config.ion_envelope, 50.0)
    _check_slots(config, atom, ion)

    overlapped = None
    for index, slot in enumerate(config.ion_slot_offsets):
        if abs(slot - config.atom_slot_offset) * NS_PER_US < SLOT_MATCH_TOLERANCE:
            overlapped = index

    density = joint_density_full(
        atom.direct, _shifted_mixture(ion, config.arrival_offset), config.spectral,
        overlap=config.overlap, dt=config.density_dt,
    )
    # opposite-port cells: P * cell area, normalized; the sum is the opposite-port probability
    weights = np.clip(density.values, 0.0, None).ravel() * config.density_dt ** 2
    opposite_probability = float(min(weights.sum(), 1.0))
    t0_cells, tau_cells = np.meshgrid(density.t0, density.tau, indexing="ij")
    logger.debug(f"pulsed opposite-port probability {opposite_probability:.4f}")
    return _PulsedPlan(
        config, atom, ion, overlapped, opposite_probability,
        t0_cells.ravel(), tau_cells.ravel(),
        weights / weights.sum() if weights.sum() > 0 else weights,
        config.density_dt,
    )


def _present(rng: np.random.Generator, probability: float, count: int) -> IntArray:
    """
    Sorted indices in [0, count) of Bernoulli(probability) successes, via
    geometric gaps.
    """
    if probability <= 0 or count <= 0:
        return np.zeros(0, np.int64)
    if probability >= 1:
        return np.arange(count, dtype=np.int64)
    chunks = []
    position = -1
    while True:
        n = int((count - position) * probability * 1.1) + 16
        steps = position + np.cumsum(rng.geometric(probability, n))
        chunks.append(steps[steps < count])
        if steps[-1] >= count:
            break
        position = int(steps[-1])
    return np.concatenate(chunks).astype(np.int64)


def _with_doublets(rng: np.random.Generator, base: FloatArray, source: SourceSpec,
                   mixture: EmissionMixture, period_start: FloatArray) -> FloatArray:
    """
    Companion photons of a pulsed source: P(2) = g2 P(1)^2 / 2 per attempt.
    """
    p2 = source.g2_zero * source.attempt_probability / 2.0
    if p2 <= 0 or period_start.size == 0:
        return np.zeros(0)
    extra = rng.random(period_start.size) < min(p2, 1.0)
    return period_start[extra] + base + mixture.sample_arrivals(rng, int(np.count_nonzero(extra)))


def _pulsed_block(params: BlockParams) -> Optional[TagStream]:
    span: _PeriodSpan = params.data
    plan = span.plan
    config = plan.config
    rng = params.rng()
    period = config.period_ns
    span_ns = span.count * period
    atom_base = config.atom_slot_offset * NS_PER_US
    ion_bases = [slot * NS_PER_US + config.arrival_offset for slot in config.ion_slot_offsets]

    times, ports = [], []

    def add_independent(arrivals: FloatArray) -> None:
        times.append(arrivals)
        ports.append(_random_ports(rng, arrivals.size))

    atom_periods = _present(rng, config.atom.attempt_probability, span.count)
    ion_periods = [_present(rng, config.ion.attempt_probability, span.count) for _ in ion_bases]

    paired = np.zeros(0, np.int64)
    if plan.overlapped_slot is not None:
        paired = np.intersect1d(atom_periods, ion_periods[plan.overlapped_slot], assume_unique=True)

    # overlapped pairs: opposite ports with the joint density, else same port with independent times
    n_pairs = paired.size
    opposite = rng.random(n_pairs) < plan.opposite_probability
    starts = paired * period
    n_opposite = int(np.count_nonzero(opposite))
    if n_opposite:
        cells = rng.choice(plan.cell_weights.size, size=n_opposite, p=plan.cell_weights)
        jitter = (rng.random((2, n_opposite)) - 0.5) * plan.cell_dt
        t_a = starts[opposite] + atom_base + plan.cell_t0[cells] + jitter[0]
        t_b = t_a + plan.cell_tau[cells] + jitter[1]
        times += [t_a, t_b]
        ports += [np.full(n_opposite, int(Channel.A), np.uint8), np.full(n_opposite, int(Channel.B), np.uint8)]
    same = starts[~opposite]
    if same.size:
        port = _random_ports(rng, same.size)
        times += [same + atom_base + plan.atom.sample_arrivals(rng, same.size),
                  same + ion_bases[plan.overlapped_slot] + plan.ion.sample_arrivals(rng, same.size)]
        ports += [port, port]

    lone_atom = np.setdiff1d(atom_periods, paired, assume_unique=True) * period
    add_independent(lone_atom + atom_base + plan.atom.sample_arrivals(rng, lone_atom.size))
    add_independent(_with_doublets(rng, atom_base, config.atom, plan.atom, atom_periods * period))
    for slot, (periods, base) in enumerate(zip(ion_periods, ion_bases)):
        if slot == plan.overlapped_slot:
            periods = np.setdiff1d(periods, paired, assume_unique=True)
        add_independent(periods * period + base + plan.ion.sample_arrivals(rng, periods.size))
        add_independent(_with_doublets(rng, base, config.ion, plan.ion, ion_periods[slot] * period))
    for source in (config.atom, config.ion):
        add_independent(_poisson_times(rng, source.background_rate, span_ns))

    if params.cancelled.is_set():
        logger.debug(f"pulsed block {params.index}: cancelled before detection")
        return None
    detected, channels = _detect(rng, np.concatenate(times), np.concatenate(ports), config.detectors, span_ns)

    first_clock = (-span.first) % config.clock_divider
    clocks = np.arange(first_clock, span.count, config.clock_divider) * period
    detected = np.concatenate((detected, clocks))
    channels = np.concatenate((channels, np.full(clocks.size, int(Channel.CLK), np.uint8)))
    logger.debug(f"pulsed block {params.index}: {detected.size} tags over {span.count} periods")
    return _to_stream(detected, channels, params.start_ps, params.stop_ps - params.start_ps)


def simulate_pulsed(config: ExperimentConfig, threads: int = 1) -> TagStream:
    """
    On-demand run: one atom photon attempt and one attempt per ion slot each
    period, a CLK tag every clock_divider periods. The simulated timeline
    holds the data-taking periods back to back (duty_cycle shortens it).
    """
    plan = _pulsed_plan(config)
    period_ps = int(round(config.period_ns * PS_PER_NS))
    per_block = max(1, int(round(config.block_duration * NS_PER_S / config.period_ns)))
    total = config.n_periods
    if total < 1:
        raise ParameterError("run shorter than one pulse period")

    blocks = []
    for index, first in enumerate(range(0, total, per_block)):
        count = min(per_block, total - first)
        blocks.append(BlockParams(index, config.rng_seed, first * period_ps, (first + count) * period_ps,
                                  _PeriodSpan(plan, first, count)))
    logger.info(f"simulating {total} periods in {len(blocks)} block(s) on {threads} thread(s)")
    streams = run_blocks(_pulsed_block, blocks, threads)
    return merge_streams(streams, total * period_ps)


def expected_singles_rates(config: ExperimentConfig) -> Dict[str, float]:
    """
    Per-channel detection rate (1/s) before dead time and afterpulsing, over
    the simulated timeline.
    """
    rates = {}
    if config.mode is SourceMode.CW:
        arriving = config.atom.rate + config.ion.rate
    else:
        per_period = config.atom.attempt_probability * (1 + config.atom.g2_zero * config.atom.attempt_probability / 2)
        per_period += len(config.ion_slot_offsets) * config.ion.attempt_probability * (
            1 + config.ion.g2_zero * config.ion.attempt_probability / 2)
        arriving = per_period * NS_PER_S / config.period_ns
    arriving += config.atom.background_rate + config.ion.background_rate
    for channel in (Channel.A, Channel.B):
        index = int(channel)
        rates[channel.name] = arriving / 2.0 * config.detectors.efficiency[index] + config.detectors.dark_rate[index]
    if config.mode is SourceMode.PULSED:
        rates[Channel.CLK.name] = NS_PER_S / config.period_ns / config.clock_divider
    return rates


def simulate(config: ExperimentConfig, threads: int = 1) -> TagStream:
    if config.mode is SourceMode.CW:
        return simulate_cw(config, threads)
    return simulate_pulsed(config, threads)
