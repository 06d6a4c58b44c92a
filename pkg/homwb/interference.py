"""
Analytic joint-detection theory for two photons on a 50:50 beamsplitter.

P(t0, tau) is the density of a detection at t0 in one detector followed by a
detection at t0 + tau in the other:

    P = 1/4 [p^2 + q^2 - 2 c S(tau) p q],
    p = a_atom(t0) a_ion(t0 + tau),   q = a_atom(t0 + tau) a_ion(t0),

with S(tau) the spectral cross factor. Coincidence curves integrate P over
the t0 coordinate, restricted to a software gate.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.interpolate import RegularGridInterpolator

from homwb.exceptions import DomainError, NormalizationError, ParameterError
from homwb.logger import logger
from homwb.types import CurveNormalization, FloatArray, MixtureCoherence
from homwb.wavepacket import EmissionMixture, SpectralModel, TemporalEnvelope

NEGATIVE_FLOOR = -1e-12
MAX_GRID_POINTS = 40_000_000
DEFAULT_DELAY_NODES = 64

IonInput = Union[TemporalEnvelope, EmissionMixture]


@dataclass(frozen=True, eq=False)
class JointDensity:
    t0: FloatArray
    tau: FloatArray
    values: FloatArray
    diagonal: FloatArray

    def __post_init__(self):
        assert self.values.shape == (self.t0.size, self.tau.size), "values must be shaped (t0, tau)"
        assert self.diagonal.shape == self.values.shape, "diagonal must match values"
        if np.min(self.values) < NEGATIVE_FLOOR:
            raise DomainError(f"joint density went negative ({np.min(self.values):.3g})")

    @property
    def dt(self) -> float:
        return float(self.t0[1] - self.t0[0])

    def value_at(self, t0: float, tau: float, interfering: bool = True) -> float:
        grid = self.values if interfering else self.diagonal
        interpolator = RegularGridInterpolator((self.t0, self.tau), grid, bounds_error=False, fill_value=0.0)
        return float(interpolator([[t0, tau]])[0])

    def total_probability(self, interfering: bool = True) -> float:
        """
        Integral of P over both coordinates: the opposite-port probability.
        """
        grid = self.values if interfering else self.diagonal
        return float(trapezoid(trapezoid(grid, self.tau, axis=1), self.t0))


@dataclass(frozen=True)
class GateWindow:
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ParameterError(f"gate window needs start < end, got [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    def contains(self, t: FloatArray) -> np.ndarray:
        return (t >= self.start) & (t <= self.end)

    def shifted(self, offset: float) -> 'GateWindow':
        return GateWindow(self.start + offset, self.end + offset)


@dataclass(frozen=True, eq=False)
class TheoryCurve:
    tau: FloatArray
    values: FloatArray
    normalization: CurveNormalization = CurveNormalization.RAW
    degenerate: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size and np.min(values) < NEGATIVE_FLOOR:
            raise DomainError(f"coincidence curve went negative ({np.min(values):.3g})")
        object.__setattr__(self, "values", np.maximum(values, 0.0))

    def value_at(self, tau: float) -> float:
        return float(np.interp(tau, self.tau, self.values))

    def to_csv(self) -> str:
        rows = ["tau_ns,value"]
        rows += [f"{t:.12g},{v:.12g}" for t, v in zip(self.tau, self.values)]
        return "\n".join(rows) + "\n"

    def to_json(self, params: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        return {
            "tau_ns": self.tau.tolist(),
            "value": self.values.tolist(),
            "normalization": self.normalization.value,
            "degenerate": self.degenerate,
            "params": {**self.params, **(params or {})},
        }


def spectral_cross_factor(spectrum: SpectralModel, tau: FloatArray) -> FloatArray:
    """
    S(tau) = sum_i c_i cos((dw_i + dw0) tau) exp(-sigma^2 tau^2 / 2).
    """
    tau = np.asarray(tau, dtype=np.float64)
    phase = np.multiply.outer(spectrum.detunings + spectrum.offset, tau)
    lines = np.tensordot(spectrum.weights, np.cos(phase), axes=1)
    return lines * np.exp(-0.5 * (spectrum.drift * tau) ** 2)


def _as_mixture(ion: IonInput) -> EmissionMixture:
    if isinstance(ion, EmissionMixture):
        return ion
    assert isinstance(ion, TemporalEnvelope), "ion must be a TemporalEnvelope or EmissionMixture"
    return EmissionMixture.pure(ion)


def _build_grid(starts: List[float], ends: List[float], dt: float,
                tau_max: Optional[float]) -> Tuple[FloatArray, FloatArray]:
    lo = np.floor(min(starts) / dt) - 1
    hi = np.ceil(max(ends) / dt) + 1
    t0 = dt * np.arange(lo, hi + 1)
    span = max(ends) - min(starts)
    tau_max = span if tau_max is None else tau_max
    if not tau_max > 0:
        raise ParameterError(f"tau_max must be > 0, got {tau_max}")
    k = int(np.ceil(tau_max / dt - 1e-9))
    tau = dt * np.arange(-k, k + 1)
    if t0.size * tau.size > MAX_GRID_POINTS:
        raise DomainError(
            f"joint density grid {t0.size}x{tau.size} too large; coarsen dt or limit tau_max"
        )
    return t0, tau


def _support_gap(atom: TemporalEnvelope, ion_start: float, ion_end: float) -> float:
    return max(ion_start - atom.end, atom.t0 - ion_end, 0.0)


def _pair_terms(ion: TemporalEnvelope, shift: float, t0: FloatArray,
                t1: FloatArray, atom_now: FloatArray, atom_later: FloatArray) -> Tuple[FloatArray, FloatArray]:
    ion_now = ion.amplitude_at(t0 - shift)[:, None]
    ion_later = ion.amplitude_at(t1 - shift)
    return atom_now * ion_later, atom_later * ion_now


def _common_dt(atom: TemporalEnvelope, ion: TemporalEnvelope, dt: Optional[float]) -> float:
    dt = min(atom.dt, ion.dt) if dt is None else dt
    if not dt > 0:
        raise ParameterError(f"grid step must be positive, got {dt}")
    return dt


def joint_density(atom: TemporalEnvelope, ion: TemporalEnvelope, delta_omega: float = 0.0,
                  dt: Optional[float] = None, tau_max: Optional[float] = None) -> JointDensity:
    """
    Two transform-limited photons with a single frequency difference.
    """
    spectrum = SpectralModel.ideal().with_offsets(offset=delta_omega)
    return joint_density_full(atom, ion, spectrum, dt=dt, tau_max=tau_max)


def joint_density_full(atom: TemporalEnvelope, ion_mixture: IonInput, spectrum: SpectralModel,
                       overlap: float = 1.0, coherence: MixtureCoherence = MixtureCoherence.INCOHERENT,
                       dt: Optional[float] = None, tau_max: Optional[float] = None,
                       delay_nodes: int = DEFAULT_DELAY_NODES) -> JointDensity:
    """
    Joint density with Zeeman lines, static offset, Gaussian drift, the ion's
    delayed re-emission and a mode-overlap scale on the cross term.

    INCOHERENT weighs the direct and delayed two-photon densities by the
    mixture weights (the delayed one averaged over the delay distribution);
    COHERENT treats the mixture-averaged intensity as one envelope.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ParameterError(f"overlap must be in [0, 1], got {overlap}")
    mixture = _as_mixture(ion_mixture)
    dt = _common_dt(atom, mixture.direct, dt)

    if coherence is MixtureCoherence.COHERENT:
        components = [(1.0, 0.0)]
        ion = mixture.intensity()
    else:
        components = [(mixture.p_direct, 0.0)]
        if mixture.p_delayed > 0:
            delays, weights = mixture.delay_nodes(delay_nodes)
            components += [(mixture.p_delayed * w, float(d)) for d, w in zip(delays, weights)]
        ion = mixture.direct
    max_shift = max(shift for _, shift in components)

    if tau_max is not None and _support_gap(atom, ion.t0, ion.end + max_shift) > tau_max:
        raise DomainError("photon supports are further apart than tau_max")
    t0, tau = _build_grid([atom.t0, ion.t0], [atom.end, ion.end + max_shift], dt, tau_max)
    logger.debug(f"joint density grid: {t0.size} x {tau.size} at dt={dt} ns, {len(components)} component(s)")

    t1 = t0[:, None] + tau[None, :]
    atom_now = atom.amplitude_at(t0)[:, None]
    atom_later = atom.amplitude_at(t1)
    cross_factor = overlap * spectral_cross_factor(spectrum, tau)[None, :]

    diagonal = np.zeros((t0.size, tau.size))
    cross = np.zeros_like(diagonal)
    for weight, shift in components:
        if weight <= 0:
            continue
        p, q = _pair_terms(ion, shift, t0, t1, atom_now, atom_later)
        diagonal += weight * 0.25 * (p * p + q * q)
        cross += weight * 0.5 * p * q
    values = diagonal - cross_factor * cross
    values[(values < 0) & (values >= NEGATIVE_FLOOR)] = 0.0
    return JointDensity(t0, tau, values, diagonal)


def gate_window(profile: TemporalEnvelope, area_fraction: float) -> GateWindow:
    """
    Shortest contiguous window holding area_fraction of the profile's
    intensity; ties go to the earliest start.
    """
    if not 0.0 < area_fraction < 1.0:
        raise ParameterError(f"area fraction must be in (0, 1), got {area_fraction}")
    times = profile.times
    cumulative = cumulative_trapezoid(profile.intensity, times, initial=0.0)
    targets = cumulative + area_fraction * cumulative[-1]
    ends_index = np.searchsorted(cumulative, targets, side="left")
    valid = np.flatnonzero(ends_index < times.size)

    j = ends_index[valid]
    fraction = (targets[valid] - cumulative[j - 1]) / (cumulative[j] - cumulative[j - 1])
    ends = times[j - 1] + fraction * profile.dt
    lengths = ends - times[valid]

    tolerance = 1e-9 * (times[-1] - times[0])
    best = int(np.flatnonzero(lengths <= lengths.min() + tolerance)[0])
    return GateWindow(float(times[valid[best]]), float(ends[best]))


def _integrate_gated(density: JointDensity, grid: FloatArray, gate: GateWindow) -> Tuple[FloatArray, bool]:
    inside = gate.contains(density.t0)
    if np.count_nonzero(inside) < 2:
        logger.warning(f"gate [{gate.start}, {gate.end}] ns does not overlap the density grid, returning a zero curve")
        return np.zeros(density.tau.size), True
    return trapezoid(grid[inside], density.t0[inside], axis=0), False


def _finish_curve(density: JointDensity, values: FloatArray, noninterfering: FloatArray, degenerate: bool,
                  tau_grid: Optional[FloatArray], normalize: bool) -> TheoryCurve:
    normalization = CurveNormalization.RAW
    if normalize and not degenerate:
        peak = float(np.max(noninterfering))
        if peak <= 0:
            raise NormalizationError("non-interfering curve is zero everywhere, cannot normalize")
        values = values / peak
        normalization = CurveNormalization.UNIT_PEAK_NONINTERFERING
    tau = density.tau
    if tau_grid is not None:
        tau_grid = np.asarray(tau_grid, dtype=np.float64)
        values = np.interp(tau_grid, tau, values, left=0.0, right=0.0)
        tau = tau_grid
    return TheoryCurve(tau, values, normalization, degenerate)


def coincidence_curve(density: JointDensity, gate: GateWindow, tau_grid: Optional[FloatArray] = None,
                      normalize: bool = False) -> TheoryCurve:
    values, degenerate = _integrate_gated(density, density.values, gate)
    noninterfering, _ = _integrate_gated(density, density.diagonal, gate) if normalize else (None, False)
    return _finish_curve(density, values, noninterfering, degenerate, tau_grid, normalize)


def noninterfering_curve(atom: TemporalEnvelope, ion_mixture: IonInput, gate: GateWindow,
                         tau_grid: Optional[FloatArray] = None, normalize: bool = False,
                         dt: Optional[float] = None, tau_max: Optional[float] = None) -> TheoryCurve:
    """
    Coincidences with the cross term dropped: fully distinguishable photons.
    """
    density = joint_density_full(atom, ion_mixture, SpectralModel.ideal(), overlap=0.0, dt=dt, tau_max=tau_max)
    values, degenerate = _integrate_gated(density, density.diagonal, gate)
    return _finish_curve(density, values, values, degenerate, tau_grid, normalize)


def hom_curves(atom: TemporalEnvelope, ion_mixture: IonInput, spectrum: SpectralModel, gate: GateWindow,
               overlap: float = 1.0, coherence: MixtureCoherence = MixtureCoherence.INCOHERENT,
               dt: Optional[float] = None, tau_max: Optional[float] = None) -> Tuple[TheoryCurve, TheoryCurve]:
    """
    Interfering and non-interfering curves from one density, both scaled so
    the non-interfering peak is 1.
    """
    density = joint_density_full(atom, ion_mixture, spectrum, overlap, coherence, dt, tau_max)
    interfering = coincidence_curve(density, gate, normalize=True)
    values, degenerate = _integrate_gated(density, density.diagonal, gate)
    reference = _finish_curve(density, values, values, degenerate, None, True)
    return interfering, reference


def dip_fwhm(interfering: TheoryCurve, noninterfering: TheoryCurve, floor: float = 1e-9) -> float:
    """
    Full width of the region around tau = 0 where interfering/noninterfering
    stays below one half.
    """
    assert np.array_equal(interfering.tau, noninterfering.tau), "curves must share a tau grid"
    tau = interfering.tau
    defined = noninterfering.values > floor * np.max(noninterfering.values)
    ratio = np.where(defined, interfering.values / np.where(defined, noninterfering.values, 1.0), np.nan)
    center = int(np.argmin(np.abs(tau)))
    if not ratio[center] < 0.5:
        raise ParameterError("curve has no dip below half depth at tau = 0")

    def crossing(step: int) -> float:
        index = center
        while 0 <= index + step < tau.size:
            nxt = index + step
            if np.isnan(ratio[nxt]):
                break
            if ratio[nxt] >= 0.5:
                w = (0.5 - ratio[index]) / (ratio[nxt] - ratio[index])
                return float(tau[index] + w * (tau[nxt] - tau[index]))
            index = nxt
        raise ParameterError("dip does not recover to half depth inside the tau range")

    return crossing(1) - crossing(-1)
