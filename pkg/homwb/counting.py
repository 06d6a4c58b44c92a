"""
Closed-form counting statistics for two single-photon sources meeting on a
50:50 beamsplitter, to second order in photon number.

The multiphoton reduction is taken in its inverse form,

    f_mp = 1 / (1 + (r * g2_atom + g2_ion / r) / 2),    r = R_atom / R_ion,

so that the expected visibility is V = c * f_mp and matches the visibility
obtained from the normalized zero-delay coincidences of the parallel and
perpendicular configurations.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from homwb.exceptions import ParameterError, UndefinedVisibilityError


@dataclass(frozen=True)
class SourceStats:
    rate: float
    g2_zero: float
    label: str = ""
    g2_error: float = 0.0
    rate_error: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ParameterError(f"{self.label or 'source'}: rate must be > 0, got {self.rate}")
        if self.g2_zero < 0:
            raise ParameterError(f"{self.label or 'source'}: g2(0) must be >= 0, got {self.g2_zero}")
        if self.g2_error < 0 or self.rate_error < 0:
            raise ParameterError("uncertainties must be >= 0")


@dataclass(frozen=True)
class OverlapParam:
    c: float

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ParameterError(f"mode overlap must be in [0, 1], got {self.c}")


@dataclass(frozen=True)
class Visibility:
    value: float
    sigma: float = float("nan")


def overlap_value(c) -> float:
    return c.c if isinstance(c, OverlapParam) else OverlapParam(float(c)).c


def rate_ratio(atom: SourceStats, ion: SourceStats) -> float:
    return atom.rate / ion.rate


def coincidence_prob_11(c: OverlapParam) -> float:
    return (1.0 - overlap_value(c)) / 2.0


def coincidence_prob_20() -> float:
    """
    Probability that two photons from the same source, entering one port,
    leave through different ports.
    """
    return 0.5


def _multiphoton_term(atom: SourceStats, ion: SourceStats) -> float:
    r = rate_ratio(atom, ion)
    return r * atom.g2_zero + ion.g2_zero / r


def multiphoton_factor(atom: SourceStats, ion: SourceStats) -> float:
    return 1.0 / (1.0 + _multiphoton_term(atom, ion) / 2.0)


def multiphoton_factor_error(atom: SourceStats, ion: SourceStats) -> float:
    """
    First-order propagation of the g2(0) and rate uncertainties into f_mp.
    """
    r = rate_ratio(atom, ion)
    f = multiphoton_factor(atom, ion)
    # df/dx = -f^2/2 * dM/dx with M the multiphoton term
    d_g2a = r
    d_g2i = 1.0 / r
    d_r = atom.g2_zero - ion.g2_zero / r ** 2
    sigma_r = r * np.hypot(atom.rate_error / atom.rate, ion.rate_error / ion.rate)
    sigma_m = np.sqrt((d_g2a * atom.g2_error) ** 2 + (d_g2i * ion.g2_error) ** 2 + (d_r * sigma_r) ** 2)
    return float(f ** 2 / 2.0 * sigma_m)


def normalized_coincidence(c: OverlapParam, atom: SourceStats, ion: SourceStats) -> float:
    r = rate_ratio(atom, ion)
    numerator = 2.0 * (1.0 - overlap_value(c)) + _multiphoton_term(atom, ion)
    return numerator / (2.0 + r + 1.0 / r)


def coincidence_rate(c: OverlapParam, atom: SourceStats, ion: SourceStats, window: float) -> float:
    """
    Absolute zero-delay coincidence rate (1/s) for a coincidence window in
    seconds.
    """
    if not window > 0:
        raise ParameterError(f"coincidence window must be > 0, got {window}")
    r = rate_ratio(atom, ion)
    per_pair = coincidence_prob_11(c) + (r * atom.g2_zero + ion.g2_zero / r) / 4.0
    return window * atom.rate * ion.rate * per_pair


def expected_visibility(c: OverlapParam, atom: SourceStats, ion: SourceStats) -> float:
    return overlap_value(c) * multiphoton_factor(atom, ion)


def expected_visibility_unequal_rates(c: OverlapParam, atom_par: SourceStats, ion_par: SourceStats,
                                      atom_perp: SourceStats, ion_perp: SourceStats) -> float:
    """
    Visibility when the parallel and perpendicular runs had different rate
    ratios; reduces to expected_visibility when they agree.
    """
    n_perp = normalized_coincidence(OverlapParam(0.0), atom_perp, ion_perp)
    n_par = normalized_coincidence(c, atom_par, ion_par)
    return measured_visibility(n_perp, n_par).value


def measured_visibility(n_perp_0: float, n_par_0: float, counts_perp: Optional[float] = None,
                        counts_par: Optional[float] = None) -> Visibility:
    """
    V = (n_perp - n_par) / n_perp. With raw coincidence counts behind each
    value, sigma comes from first-order Poisson propagation; otherwise NaN.
    """
    if not n_perp_0 > 0:
        raise UndefinedVisibilityError(f"perpendicular coincidence level must be > 0, got {n_perp_0}")
    value = (n_perp_0 - n_par_0) / n_perp_0
    sigma = float("nan")
    if counts_perp is not None and counts_par is not None:
        if counts_perp <= 0:
            raise UndefinedVisibilityError("perpendicular counts must be > 0 to propagate errors")
        relative = np.sqrt(1.0 / counts_perp + (1.0 / counts_par if counts_par > 0 else 0.0))
        sigma = float(n_par_0 / n_perp_0 * relative)
    return Visibility(float(value), sigma)
