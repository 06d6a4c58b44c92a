"""
Single-photon temporal envelopes and spectral models for the two sources.

Envelopes are real and nonnegative; every phase effect (frequency offsets,
Zeeman lines, slow drift) lives in SpectralModel. Times are ns, angular
frequencies rad/ns, amplitudes ns^-1/2.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from homwb.exceptions import InputError, ParameterError, ResolutionError
from homwb.logger import logger
from homwb.types import FloatArray, TWO_PI_MHZ

NORM_TOLERANCE = 1e-9
WEIGHT_TOLERANCE = 1e-12
MIN_SAMPLES = 8

# Bohr magneton over hbar: 2*pi*1.3996 MHz/G, in rad/ns per gauss
MU_B_OVER_HBAR = 1.3996 * TWO_PI_MHZ

# effective P-manifold decay rate of the lumped three-level model (1/ns)
DEFAULT_P_DECAY_RATE = 0.18

# Lande factors used by the barium defaults
G_D32 = 4.0 / 5.0
G_S12 = 2.0


@dataclass(frozen=True, eq=False)
class TemporalEnvelope:
    t0: float
    dt: float
    samples: FloatArray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if not self.dt > 0:
            raise ParameterError(f"envelope grid step must be positive, got {self.dt}")
        if samples.ndim != 1 or samples.size < MIN_SAMPLES:
            raise ParameterError(f"envelope needs at least {MIN_SAMPLES} samples")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("envelope samples must be finite")
        if np.any(samples < 0):
            raise ParameterError("envelope samples must be nonnegative")
        norm = float(np.sum(samples ** 2) * self.dt)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ParameterError(f"envelope is not normalized (sum a^2 dt = {norm:.12g})")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def normalized(cls, t0: float, dt: float, samples: Sequence[float]) -> 'TemporalEnvelope':
        values = np.clip(np.asarray(samples, dtype=np.float64), 0.0, None)
        if not dt > 0:
            raise ParameterError(f"envelope grid step must be positive, got {dt}")
        norm = float(np.sum(values ** 2) * dt)
        if norm <= 0 or not np.isfinite(norm):
            raise ParameterError("envelope has no weight to normalize")
        return cls(float(t0), float(dt), values / np.sqrt(norm))

    def __len__(self) -> int:
        return int(self.samples.size)

    def __repr__(self) -> str:
        return f"TemporalEnvelope(t0={self.t0}, dt={self.dt}, n={len(self)})"

    @property
    def times(self) -> FloatArray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def end(self) -> float:
        return self.t0 + self.dt * (len(self) - 1)

    @property
    def intensity(self) -> FloatArray:
        return self.samples ** 2

    def norm(self) -> float:
        return float(np.sum(self.intensity) * self.dt)

    def amplitude_at(self, t: FloatArray) -> FloatArray:
        return np.interp(t, self.times, self.samples, left=0.0, right=0.0)

    def shifted(self, offset: float) -> 'TemporalEnvelope':
        return TemporalEnvelope(self.t0 + offset, self.dt, self.samples)

    def resample(self, dt: float, start: Optional[float] = None, stop: Optional[float] = None) -> 'TemporalEnvelope':
        start = self.t0 if start is None else start
        stop = self.end if stop is None else stop
        if not dt > 0 or stop <= start:
            raise ParameterError("resample needs dt > 0 and stop > start")
        n = int(np.floor((stop - start) / dt + 1e-9)) + 1
        grid = start + dt * np.arange(n)
        return TemporalEnvelope.normalized(start, dt, self.amplitude_at(grid))

    def mean_arrival(self) -> float:
        return float(np.sum(self.times * self.intensity) * self.dt)

    def intensity_decay_time(self, start: Optional[float] = None, stop: Optional[float] = None,
                             floor: float = 1e-6) -> float:
        """
        1/e time of the intensity tail from a log-linear fit between the
        peak (or `start`) and `stop`. Exact for a pure exponential.
        """
        times = self.times
        intensity = self.intensity
        peak = int(np.argmax(intensity))
        lo = times[peak] if start is None else start
        hi = self.end if stop is None else stop
        mask = (times >= lo) & (times <= hi) & (intensity > floor * intensity[peak])
        if np.count_nonzero(mask) < 2:
            raise ParameterError("not enough tail samples to estimate a decay time")
        slope, _ = np.polyfit(times[mask], np.log(intensity[mask]), 1)
        if slope >= 0:
            raise ParameterError("intensity does not decay over the fitted range")
        return float(-1.0 / slope)

    def to_csv(self) -> str:
        rows = ["t_ns,amplitude"]
        for t, a in zip(self.times, self.samples):
            rows.append(f"{t:.17g},{a:.17g}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> 'TemporalEnvelope':
        lines = text.splitlines()
        if not lines or lines[0].strip() != "t_ns,amplitude":
            raise InputError("envelope CSV must start with header 't_ns,amplitude'")
        times, values = [], []
        for number, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise InputError(f"envelope CSV line {number}: expected 2 fields")
            try:
                times.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError:
                raise InputError(f"envelope CSV line {number}: not a number")
        if len(times) < MIN_SAMPLES:
            raise InputError(f"envelope CSV needs at least {MIN_SAMPLES} rows")
        steps = np.diff(times)
        dt = float(np.mean(steps))
        if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
            raise InputError("envelope CSV time column is not a uniform increasing grid")
        return cls.normalized(times[0], dt, values)


@dataclass(frozen=True)
class SpectralLine:
    detuning: float
    weight: float


@dataclass(frozen=True)
class SpectralModel:
    lines: Tuple[SpectralLine, ...]
    offset: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        if not self.lines:
            raise ParameterError("spectral model needs at least one line")
        weights = np.array([line.weight for line in self.lines])
        if np.any(weights < 0):
            raise ParameterError("spectral line weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > WEIGHT_TOLERANCE:
            raise ParameterError(f"spectral line weights must sum to 1, got {weights.sum():.15g}")
        if self.drift < 0:
            raise ParameterError("drift width must be >= 0")

    @classmethod
    def ideal(cls) -> 'SpectralModel':
        return cls((SpectralLine(0.0, 1.0),))

    @classmethod
    def from_lines(cls, lines: Sequence[Tuple[float, float]], offset: float = 0.0, drift: float = 0.0,
                   merge_tolerance: float = 1e-12) -> 'SpectralModel':
        """
        Normalizes the weights and merges lines closer than merge_tolerance.
        """
        if not lines:
            raise ParameterError("spectral model needs at least one line")
        detunings = np.array([float(d) for d, _ in lines])
        weights = np.array([float(w) for _, w in lines])
        if np.any(weights < 0):
            raise ParameterError("spectral line weights must be nonnegative")
        total = weights.sum()
        if total <= 0:
            raise ParameterError("spectral line weights sum to zero")

        order = np.argsort(detunings, kind="stable")
        merged: List[List[float]] = []
        for index in order:
            if merged and abs(detunings[index] - merged[-1][0]) <= merge_tolerance:
                merged[-1][1] += weights[index]
            else:
                merged.append([detunings[index], weights[index]])

        normalized = [SpectralLine(0.0 if d == 0 else float(d), float(w / total)) for d, w in merged]
        # absorb rounding so the weights sum to 1 exactly enough for the invariant
        drift_weight = 1.0 - sum(line.weight for line in normalized)
        last = normalized[-1]
        normalized[-1] = SpectralLine(last.detuning, last.weight + drift_weight)
        return cls(tuple(normalized), float(offset), float(drift))

    @property
    def detunings(self) -> FloatArray:
        return np.array([line.detuning for line in self.lines])

    @property
    def weights(self) -> FloatArray:
        return np.array([line.weight for line in self.lines])

    def with_offsets(self, offset: Optional[float] = None, drift: Optional[float] = None) -> 'SpectralModel':
        return SpectralModel(
            self.lines,
            self.offset if offset is None else float(offset),
            self.drift if drift is None else float(drift),
        )


@dataclass(frozen=True, eq=False)
class EmissionMixture:
    """
    Direct emission with weight p_direct, plus one delayed re-emission whose
    extra delay follows delay_density (sampled on the direct envelope's grid,
    delay k*dt for index k, sum(delay_density)*dt == 1).
    """
    direct: TemporalEnvelope
    p_direct: float
    delay_density: FloatArray

    def __post_init__(self):
        if not 0.0 <= self.p_direct <= 1.0:
            raise ParameterError(f"direct weight must be in [0, 1], got {self.p_direct}")
        density = np.array(self.delay_density, dtype=np.float64)
        if density.ndim != 1 or np.any(density < 0):
            raise ParameterError("delay density must be a nonnegative 1-D array")
        if abs(float(density.sum() * self.direct.dt) - 1.0) > NORM_TOLERANCE:
            raise ParameterError("delay density must integrate to 1")
        density.setflags(write=False)
        object.__setattr__(self, "delay_density", density)

    @classmethod
    def pure(cls, direct: TemporalEnvelope) -> 'EmissionMixture':
        return cls(direct, 1.0, direct.intensity)

    @property
    def p_delayed(self) -> float:
        return 1.0 - self.p_direct

    @property
    def dt(self) -> float:
        return self.direct.dt

    @property
    def delays(self) -> FloatArray:
        return self.dt * np.arange(self.delay_density.size)

    def delay_mean(self) -> float:
        return float(np.sum(self.delays * self.delay_density) * self.dt)

    def mean_arrival(self) -> float:
        return self.direct.mean_arrival() + self.p_delayed * self.delay_mean()

    def intensity(self) -> TemporalEnvelope:
        """
        Mixture-averaged intensity as an envelope (amplitude = sqrt of
        intensity) on a grid long enough to hold the delayed component.
        """
        direct = self.direct.intensity
        n = direct.size + self.delay_density.size - 1
        delayed = np.convolve(direct, self.delay_density) * self.dt
        total = np.zeros(n)
        total[:direct.size] += self.p_direct * direct
        total += self.p_delayed * delayed
        return TemporalEnvelope.normalized(self.direct.t0, self.dt, np.sqrt(total))

    def delay_nodes(self, max_nodes: int = 64) -> Tuple[FloatArray, FloatArray]:
        """
        Coarse-grained delay distribution: at most max_nodes grid-aligned
        delays with weights summing to 1.
        """
        assert isinstance(max_nodes, int) and max_nodes > 0, "max_nodes must be a positive integer"
        density = self.delay_density * self.dt
        chunks = np.array_split(np.arange(density.size), min(max_nodes, density.size))
        delays, weights = [], []
        for chunk in chunks:
            weight = float(density[chunk].sum())
            if weight <= 0:
                continue
            mean_index = float(np.sum(chunk * density[chunk]) / weight)
            delays.append(round(mean_index) * self.dt)
            weights.append(weight)
        weights_array = np.array(weights)
        return np.array(delays), weights_array / weights_array.sum()

    def sample_arrivals(self, rng: np.random.Generator, n: int) -> FloatArray:
        arrivals = sample_from_envelope(self.direct, rng, n)
        if self.p_delayed > 0 and n > 0:
            delayed = rng.random(n) < self.p_delayed
            count = int(np.count_nonzero(delayed))
            if count:
                probabilities = self.delay_density / self.delay_density.sum()
                index = rng.choice(self.delay_density.size, size=count, p=probabilities)
                arrivals[delayed] += (index + rng.random(count) - 0.5).clip(0.0) * self.dt
        return arrivals


def sample_from_envelope(envelope: TemporalEnvelope, rng: np.random.Generator, n: int) -> FloatArray:
    """
    Draws n arrival times from the envelope intensity: grid sample chosen by
    weight, then jittered uniformly within its cell.
    """
    if n <= 0:
        return np.zeros(0)
    probabilities = envelope.intensity / envelope.intensity.sum()
    index = rng.choice(len(envelope), size=n, p=probabilities)
    jitter = (index + rng.random(n) - 0.5).clip(0.0, len(envelope) - 1)
    return envelope.t0 + jitter * envelope.dt


def exponential_envelope(decay_constant: float, rise: float = 0.0, span: Optional[float] = None,
                         dt: float = 0.5) -> TemporalEnvelope:
    """
    Exponentially decaying photon. decay_constant is the intensity 1/e time;
    the amplitude decays at half that rate. A nonzero `rise` multiplies the
    amplitude by a linear ramp over the first `rise` ns.
    """
    if not decay_constant > 0:
        raise ParameterError(f"decay constant must be positive, got {decay_constant}")
    if not dt > 0:
        raise ParameterError(f"grid step must be positive, got {dt}")
    if rise < 0:
        raise ParameterError(f"rise time must be >= 0, got {rise}")
    span = 10.0 * decay_constant if span is None else span
    if span < 6.0 * decay_constant:
        raise ParameterError("envelope span must cover at least 6 decay constants")

    n = int(round(span / dt)) + 1
    t = dt * np.arange(n)
    amplitude = np.exp(-t / (2.0 * decay_constant))
    if rise > 0:
        amplitude *= np.minimum(t / rise, 1.0)
    return TemporalEnvelope.normalized(0.0, dt, amplitude)


@dataclass(frozen=True, eq=False)
class LambdaSolution:
    times: FloatArray
    rho_ss: FloatArray
    rho_pp: FloatArray
    rho_dd: FloatArray
    gamma_ps: float
    gamma_pd: float

    @property
    def emission_rate(self) -> FloatArray:
        return self.gamma_ps * self.rho_pp

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def emitted_probability(self) -> float:
        return float(self.rho_ss[-1])


def _lindblad_rhs(rho: np.ndarray, hamiltonian: np.ndarray, jumps: Sequence[np.ndarray],
                  damping: np.ndarray) -> np.ndarray:
    drho = -1j * (hamiltonian @ rho - rho @ hamiltonian)
    for jump in jumps:
        drho += jump @ rho @ jump.conj().T
    drho -= 0.5 * (damping @ rho + rho @ damping)
    return drho


def _rk4_step(rho: np.ndarray, rhs: Callable[..., np.ndarray], dt: float, *args) -> np.ndarray:
    half = dt / 2.0
    k1 = rhs(rho, *args)
    k2 = rhs(rho + k1 * half, *args)
    k3 = rhs(rho + k2 * half, *args)
    k4 = rhs(rho + k3 * dt, *args)
    return rho + (k1 + 2 * k2 + 2 * k3 + k4) * (dt / 6.0)


def solve_lambda_system(rabi: float, detuning: float, pulse_len: float, branching_to_ground: float,
                        dt: float, decay_rate: float = DEFAULT_P_DECAY_RATE,
                        tail: Optional[float] = None) -> LambdaSolution:
    """
    Three-level Lambda system S <- P <-> D: the ion starts in D, a square
    pulse drives D -> P for pulse_len ns, P decays to S (emitting the photon
    of interest) with probability branching_to_ground and back to D
    otherwise. Fixed-step RK4 on the 3x3 density matrix, basis (S, P, D).
    """
    if not rabi > 0:
        raise ParameterError(f"rabi frequency must be positive, got {rabi}")
    if not pulse_len > 0:
        raise ParameterError(f"pulse length must be positive, got {pulse_len}")
    if not 0.0 <= branching_to_ground <= 1.0:
        raise ParameterError("branching ratio must be in [0, 1]")
    if not decay_rate > 0:
        raise ParameterError(f"decay rate must be positive, got {decay_rate}")
    if not dt > 0:
        raise ParameterError(f"time step must be positive, got {dt}")
    if dt > 1.0 / (10.0 * rabi) or dt > 1.0 / (10.0 * decay_rate):
        raise ResolutionError(
            f"time step {dt} ns too coarse, need dt <= {1.0 / (10.0 * max(rabi, decay_rate)):.4g} ns"
        )

    tail = 10.0 / decay_rate if tail is None else tail
    driven_steps = int(round(pulse_len / dt))
    total_steps = driven_steps + int(np.ceil(tail / dt))

    gamma_ps = decay_rate * branching_to_ground
    gamma_pd = decay_rate * (1.0 - branching_to_ground)
    s, p, d = 0, 1, 2
    jump_s = np.zeros((3, 3), dtype=complex)
    jump_s[s, p] = np.sqrt(gamma_ps)
    jump_d = np.zeros((3, 3), dtype=complex)
    jump_d[d, p] = np.sqrt(gamma_pd)
    jumps = (jump_s, jump_d)
    damping = sum(jump.conj().T @ jump for jump in jumps)

    driven = np.zeros((3, 3), dtype=complex)
    driven[p, p] = -detuning
    driven[p, d] = driven[d, p] = rabi / 2.0
    free = np.zeros((3, 3), dtype=complex)
    free[p, p] = -detuning

    rho = np.zeros((3, 3), dtype=complex)
    rho[d, d] = 1.0
    populations = np.empty((total_steps + 1, 3))
    populations[0] = np.real(np.diag(rho))
    logger.debug(f"lambda system: {total_steps} RK4 steps of {dt} ns")
    for step in range(total_steps):
        hamiltonian = driven if step < driven_steps else free
        rho = _rk4_step(rho, _lindblad_rhs, dt, hamiltonian, jumps, damping)
        populations[step + 1] = np.real(np.diag(rho))

    times = dt * np.arange(total_steps + 1)
    return LambdaSolution(times, populations[:, s], populations[:, p], populations[:, d], gamma_ps, gamma_pd)


def bloch_emission_profile(rabi: float, detuning: float, pulse_len: float, branching_to_ground: float,
                           dt: float, decay_rate: float = DEFAULT_P_DECAY_RATE) -> TemporalEnvelope:
    """
    Transform-limited ion photon envelope, a(t) proportional to
    sqrt(Gamma_PS * rho_PP(t)).
    """
    solution = solve_lambda_system(rabi, detuning, pulse_len, branching_to_ground, dt, decay_rate)
    rate = np.clip(solution.emission_rate, 0.0, None)
    if not np.any(rate > 0):
        raise ParameterError("driven system emits nothing on the S branch")
    return TemporalEnvelope.normalized(0.0, dt, np.sqrt(rate))


def branching_mixture(direct: TemporalEnvelope, branch_back: float) -> EmissionMixture:
    """
    Direct photon with weight 1 - branch_back plus a once-delayed photon
    whose extra delay follows the direct intensity profile. Repeated
    re-scattering is not modelled.
    """
    if not 0.0 <= branch_back < 1.0:
        raise ParameterError(f"branch-back probability must be in [0, 1), got {branch_back}")
    return EmissionMixture(direct, 1.0 - branch_back, direct.intensity)


def zeeman_lines(b_field: float, g_upper: float, g_lower: float,
                 transitions: Sequence[Tuple[float, float, float]]) -> SpectralModel:
    """
    Line set from Zeeman-shifted transitions (m_upper, m_lower, weight):
    detuning mu_B * B * (g_lower*m_lower - g_upper*m_upper) / hbar.
    """
    if not transitions:
        raise ParameterError("transition list is empty")
    lines = []
    for m_upper, m_lower, weight in transitions:
        if weight < 0:
            raise ParameterError("transition weights must be nonnegative")
        shift = MU_B_OVER_HBAR * b_field * (g_lower * m_lower - g_upper * m_upper)
        lines.append((shift, weight))
    return SpectralModel.from_lines(lines)


def barium_raman_transitions(excitation: str = "sigma") -> List[Tuple[float, float, float]]:
    """
    D3/2 -> P1/2 -> S1/2 paths from an equally populated D3/2 manifold, each
    with equal weight. "sigma" excites with Delta m = +1 from the two lower
    sublevels and -1 from the two upper ones; "pi" excites with Delta m = 0.
    Sublevels with no P1/2 partner drop out.
    """
    if excitation not in ("sigma", "pi"):
        raise ParameterError(f"excitation must be 'sigma' or 'pi', got {excitation!r}")
    transitions = []
    for m_d in (-1.5, -0.5, 0.5, 1.5):
        if excitation == "pi":
            m_p = m_d
        else:
            m_p = m_d + 1.0 if m_d < 0 else m_d - 1.0
        if abs(m_p) != 0.5:
            continue
        for m_s in (-0.5, 0.5):
            if abs(m_s - m_p) <= 1.0:
                transitions.append((m_d, m_s, 1.0))
    return transitions
