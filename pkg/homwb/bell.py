"""
Bell-state analysis of two polarization-encoded photons on a 50:50
beamsplitter, the matter-qubit state heralded by a detector coincidence, and
entanglement-rate bookkeeping.

Photons are handled as products of creation operators over eight output
modes: port (x, y) times polarization (H, V) times identity (matching, or
non-identical by a mode-overlap defect). Matter states use the basis
{dd, du, ud, uu}, the first qubit belonging to the photon entering port a.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from math import factorial
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from homwb.counting import OverlapParam, overlap_value
from homwb.exceptions import DegenerateHeraldError, ParameterError
from homwb.types import BellState

AMPLITUDE_TOLERANCE = 1e-12
HERMITIAN_TOLERANCE = 1e-12
TRACE_TOLERANCE = 1e-12
EIGENVALUE_FLOOR = -1e-10

H, V, H_N, V_N = range(4)
_POLARIZATION = {H: "H", V: "V", H_N: "H", V_N: "V"}
_LABELS = {H: "H", V: "V", H_N: "Hn", V_N: "Vn"}
PORT_X, PORT_Y = 0, 1

DOWN_DOWN, DOWN_UP, UP_DOWN, UP_UP = range(4)

Monomial = Tuple[int, ...]


def _mode(port: int, polarization: int) -> int:
    return 4 * port + polarization


def _port(mode: int) -> int:
    return mode // 4


def _polarization(mode: int) -> str:
    return _POLARIZATION[mode % 4]


def _beamsplitter(terms: Iterable[Tuple[complex, int, int]]) -> Dict[Monomial, complex]:
    """
    Maps a_p -> (x_p + i y_p)/sqrt2 and b_p -> (i x_p + y_p)/sqrt2 on every
    two-photon term (amplitude, polarization in a, polarization in b) and
    returns normalized Fock amplitudes keyed by sorted output modes.
    """
    from_a = ((1.0, PORT_X), (1j, PORT_Y))
    from_b = ((1j, PORT_X), (1.0, PORT_Y))
    out: Dict[Monomial, complex] = defaultdict(complex)
    for amplitude, pol_a, pol_b in terms:
        for coeff_a, port_a in from_a:
            for coeff_b, port_b in from_b:
                key = tuple(sorted((_mode(port_a, pol_a), _mode(port_b, pol_b))))
                out[key] += amplitude * coeff_a * coeff_b / 2.0
    fock = {}
    for key, amplitude in out.items():
        occupation = np.prod([factorial(key.count(m)) for m in set(key)])
        amplitude = amplitude * np.sqrt(occupation)
        if abs(amplitude) > 1e-15:
            fock[key] = amplitude
    return fock


@dataclass(frozen=True)
class OutputTerm:
    amplitude: complex
    port_x: Tuple[str, ...]
    port_y: Tuple[str, ...]

    @property
    def label(self) -> str:
        return f"|{''.join(self.port_x) or '0'},{''.join(self.port_y) or '0'}>"

    @property
    def same_port(self) -> bool:
        return not self.port_x or not self.port_y


_BELL_INPUTS = {
    BellState.PHI_PLUS: ((H, H, 1.0), (V, V, 1.0)),
    BellState.PHI_MINUS: ((H, H, 1.0), (V, V, -1.0)),
    BellState.PSI_PLUS: ((H, V, 1.0), (V, H, 1.0)),
    BellState.PSI_MINUS: ((H, V, 1.0), (V, H, -1.0)),
}


def beamsplitter_bell_action(bell_state: BellState) -> List[OutputTerm]:
    """
    Output superposition of a photonic Bell state sent through the
    beamsplitter, one term per occupied Fock state.
    """
    terms = [(sign / np.sqrt(2.0), a, b) for a, b, sign in _BELL_INPUTS[bell_state]]
    output = []
    for key, amplitude in sorted(_beamsplitter(terms).items()):
        port_x = tuple(_LABELS[m % 4] for m in key if _port(m) == PORT_X)
        port_y = tuple(_LABELS[m % 4] for m in key if _port(m) == PORT_Y)
        output.append(OutputTerm(complex(amplitude), port_x, port_y))
    return output


@dataclass(frozen=True)
class AmplitudeSet:
    alpha: complex
    beta: complex
    gamma: complex
    delta: complex

    def __post_init__(self):
        if abs(abs(self.alpha) ** 2 + abs(self.beta) ** 2 - 1.0) > AMPLITUDE_TOLERANCE:
            raise ParameterError("|alpha|^2 + |beta|^2 must be 1")
        if abs(abs(self.gamma) ** 2 + abs(self.delta) ** 2 - 1.0) > AMPLITUDE_TOLERANCE:
            raise ParameterError("|gamma|^2 + |delta|^2 must be 1")

    @classmethod
    def balanced(cls) -> 'AmplitudeSet':
        s = 1.0 / np.sqrt(2.0)
        return cls(s, s, s, s)

    @classmethod
    def random(cls, rng: np.random.Generator) -> 'AmplitudeSet':
        pairs = []
        for _ in range(2):
            z = rng.normal(size=2) + 1j * rng.normal(size=2)
            z /= np.linalg.norm(z)
            pairs.extend(complex(v) for v in z)
        return cls(*pairs)


@dataclass(frozen=True, eq=False)
class MatterDensityMatrix:
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=np.complex128)
        if rho.shape != (4, 4):
            raise ParameterError(f"density matrix must be 4x4, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) >= HERMITIAN_TOLERANCE:
            raise ParameterError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > TRACE_TOLERANCE:
            raise ParameterError(f"density matrix trace is {np.trace(rho).real}, not 1")
        if np.min(np.linalg.eigvalsh(rho)) < EIGENVALUE_FLOOR:
            raise ParameterError("density matrix has a negative eigenvalue")
        rho.setflags(write=False)
        object.__setattr__(self, "matrix", rho)

    def populations(self) -> np.ndarray:
        return np.diag(self.matrix).real.copy()


def bell_vector(target: BellState) -> np.ndarray:
    """
    Matter Bell state over {dd, du, ud, uu}.
    """
    vector = np.zeros(4, dtype=np.complex128)
    s = 1.0 / np.sqrt(2.0)
    if target is BellState.PSI_MINUS:
        vector[UP_DOWN], vector[DOWN_UP] = s, -s
    elif target is BellState.PSI_PLUS:
        vector[UP_DOWN], vector[DOWN_UP] = s, s
    elif target is BellState.PHI_PLUS:
        vector[DOWN_DOWN], vector[UP_UP] = s, s
    else:
        vector[DOWN_DOWN], vector[UP_UP] = s, -s
    return vector


def _heralds(key: Monomial, herald: BellState) -> bool:
    if len({_polarization(m) for m in key}) != 2:
        return False
    opposite_ports = _port(key[0]) != _port(key[1])
    return opposite_ports if herald is BellState.PSI_MINUS else not opposite_ports


def heralded_state(amps: AmplitudeSet, c: OverlapParam, herald: BellState = BellState.PSI_MINUS) -> MatterDensityMatrix:
    """
    Matter state after a psi+ (HV in one port) or psi- (H and V in opposite
    ports) coincidence. The photon from the first system carries a fraction
    1 - c of its amplitude in a mode orthogonal to the second photon.
    """
    if herald not in (BellState.PSI_PLUS, BellState.PSI_MINUS):
        raise ParameterError(f"only psi+ and psi- can be heralded, got {herald.value}")
    overlap = overlap_value(c)
    same, other = np.sqrt(overlap), np.sqrt(1.0 - overlap)
    first = ((amps.alpha, H, H_N, 0), (amps.beta, V, V_N, 1))
    second = ((amps.gamma, H, 0), (amps.delta, V, 1))

    vectors: Dict[Monomial, np.ndarray] = defaultdict(lambda: np.zeros(4, dtype=np.complex128))
    for amp_1, pol, pol_n, qubit_1 in first:
        for amp_2, pol_2, qubit_2 in second:
            terms = [(amp_1 * amp_2 * same, pol, pol_2), (amp_1 * amp_2 * other, pol_n, pol_2)]
            for key, amplitude in _beamsplitter(terms).items():
                if _heralds(key, herald):
                    vectors[key][2 * qubit_1 + qubit_2] += amplitude

    rho = np.zeros((4, 4), dtype=np.complex128)
    for vector in vectors.values():
        rho += np.outer(vector, vector.conj())
    probability = np.trace(rho).real
    if probability < 1e-15:
        raise DegenerateHeraldError()
    rho /= probability
    return MatterDensityMatrix(0.5 * (rho + rho.conj().T))


def fidelity(rho: MatterDensityMatrix, target: BellState = BellState.PSI_MINUS) -> float:
    vector = bell_vector(target)
    value = np.real(vector.conj() @ rho.matrix @ vector)
    return float(np.clip(value, 0.0, 1.0))


def fidelity_from_visibility(visibility: float, sigma: float = 0.0, g2_atom: float = 0.0,
                             g2_ion: float = 0.0) -> Tuple[float, float]:
    """
    F = (1 + V)/2, capped at 1, which holds only for two ideal single-photon
    sources.
    """
    if g2_atom != 0 or g2_ion != 0:
        raise ParameterError("F = (1 + V)/2 needs g2(0) = 0 for both sources")
    return min((1.0 + visibility) / 2.0, 1.0), sigma / 2.0


def solid_angle_fraction(na: float) -> float:
    """
    Fraction of the full sphere collected by a lens of numerical aperture na.
    """
    if not 0.0 < na < 1.0:
        raise ParameterError(f"numerical aperture must be in (0, 1), got {na}")
    return (1.0 - np.sqrt(1.0 - na ** 2)) / 2.0


def collection_gain(na_old: float, na_new: float, coupling_old: float, coupling_new: float) -> float:
    for coupling in (coupling_old, coupling_new):
        if not 0.0 < coupling <= 1.0:
            raise ParameterError(f"fibre coupling must be in (0, 1], got {coupling}")
    return (solid_angle_fraction(na_new) * coupling_new) / (solid_angle_fraction(na_old) * coupling_old)


@dataclass(frozen=True)
class RateScenario:
    coincidences: float
    run_time: float
    improvement_factors: Tuple[Tuple[str, float], ...] = ()
    heralding_fraction: float = 1.0

    def __post_init__(self):
        if not self.run_time > 0:
            raise ParameterError(f"run_time must be > 0, got {self.run_time}")
        if self.coincidences < 0:
            raise ParameterError("coincidences must be >= 0")
        if not 0.0 < self.heralding_fraction <= 1.0:
            raise ParameterError(f"heralding_fraction must be in (0, 1], got {self.heralding_fraction}")
        for label, factor in self.improvement_factors:
            if factor < 0:
                raise ParameterError(f"improvement factor '{label}' must be >= 0, got {factor}")
        object.__setattr__(self, "improvement_factors", tuple((str(l), float(f)) for l, f in self.improvement_factors))

    @property
    def improvement(self) -> float:
        return float(np.prod([f for _, f in self.improvement_factors])) if self.improvement_factors else 1.0


def entanglement_rate(scenario: RateScenario) -> Tuple[float, float]:
    current = scenario.coincidences / scenario.run_time * scenario.heralding_fraction
    return current, current * scenario.improvement


@dataclass(frozen=True)
class TableRow:
    bin: float
    visibility: float
    sigma: float
    coincidences: float


def fidelity_rate_table(rows: Sequence[TableRow], scenario: RateScenario,
                        g2_atom: float = 0.0, g2_ion: float = 0.0) -> List[Dict[str, float]]:
    """
    One row per coincidence bin size: fidelity with its error, the current
    rate and the rate with the scenario's improvements. The scenario's own
    coincidence count is replaced by each row's.
    """
    table = []
    for row in rows:
        f, sigma_f = fidelity_from_visibility(row.visibility, row.sigma, g2_atom, g2_ion)
        current, projected = entanglement_rate(RateScenario(row.coincidences, scenario.run_time,
                                                            scenario.improvement_factors,
                                                            scenario.heralding_fraction))
        table.append({
            "bin_ns": row.bin,
            "visibility": row.visibility,
            "fidelity": f,
            "fidelity_err": sigma_f,
            "rate_current": current,
            "rate_projected": projected,
        })
    return table
