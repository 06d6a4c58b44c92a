"""
Config document schemas for every subcommand and the extractors that turn a
validated document into library objects. Frequencies are MHz (converted to
rad/ns here), times carry their unit in the key name.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from homwb.bell import RateScenario, TableRow, collection_gain
from homwb.config import (
    FRACTION,
    HALF_OPEN_FRACTION,
    NON_NEGATIVE,
    OPEN_FRACTION,
    POSITIVE,
    UINT64,
    Field,
    Schema,
    one_of,
)
from homwb.counting import SourceStats
from homwb.exceptions import ConfigError
from homwb.interference import GateWindow, gate_window
from homwb.montecarlo import DetectorSpec, ExperimentConfig, SourceSpec
from homwb.types import G2Normalization, MixtureCoherence, SourceMode, TWO_PI_MHZ
from homwb.wavepacket import (
    G_D32,
    G_S12,
    EmissionMixture,
    SpectralModel,
    TemporalEnvelope,
    barium_raman_transitions,
    bloch_emission_profile,
    branching_mixture,
    exponential_envelope,
    zeeman_lines,
)

ATOM_DECAY_NS = 120.0
ION_DECAY_NS = 50.0
AT_LEAST_ONE: Tuple = (lambda v: v >= 1, "must be >= 1")
HERALDING: Tuple = (lambda v: 0 < v <= 1, "must be in (0, 1]")
PAIR: Tuple = (lambda v: len(v) == 2, "must hold exactly two values (A, B)")
NONEMPTY: Tuple = (lambda v: len(v) > 0, "must not be empty")
WINDOW: Tuple = (lambda v: len(v) == 2 and v[0] < v[1], "must be [start, end] with start < end")


def _opt(kind, default=None, check=None, **kwargs) -> Field:
    if default is None:
        return Field(kind, required=False, check=check, **kwargs)
    return Field(kind, required=False, default=default, check=check, **kwargs)


BLOCH_SCHEMA: Schema = {
    "rabi_mhz": Field(float, check=POSITIVE),
    "detuning_mhz": Field(float),
    "pulse_ns": Field(float, check=POSITIVE),
    "branching_to_ground": _opt(float, 0.75, FRACTION),
    "dt_ns": _opt(float, 0.05, POSITIVE),
    "decay_rate": _opt(float, 0.18, POSITIVE),
}

ENVELOPE_SCHEMA: Schema = {
    "decay_ns": _opt(float, check=POSITIVE),
    "rise_ns": _opt(float, 0.0, NON_NEGATIVE),
    "dt_ns": _opt(float, 0.5, POSITIVE),
    "bloch": _opt(dict, schema=BLOCH_SCHEMA),
    "branch_back": _opt(float, 0.0, HALF_OPEN_FRACTION),
}

LINE_SCHEMA: Schema = {
    "detuning_mhz": Field(float),
    "weight": Field(float, check=NON_NEGATIVE),
}

SPECTRAL_SCHEMA: Schema = {
    "lines": _opt(list, check=NONEMPTY, item=Field(dict, schema=LINE_SCHEMA)),
    "zeeman_gauss": _opt(float, check=NON_NEGATIVE),
    "offset_mhz": _opt(float, 0.0),
    "drift_mhz": _opt(float, 0.0, NON_NEGATIVE),
}

SOURCE_SCHEMA: Schema = {
    "rate": _opt(float, 0.0, NON_NEGATIVE),
    "attempt_probability": _opt(float, 0.0, FRACTION),
    "g2_zero": _opt(float, 0.0, NON_NEGATIVE),
    "background_rate": _opt(float, 0.0, NON_NEGATIVE),
    "coherence_window_ns": _opt(float, check=POSITIVE),
    "envelope": _opt(dict, schema=ENVELOPE_SCHEMA),
}

DETECTOR_SCHEMA: Schema = {
    "efficiency": _opt(list, [1.0, 1.0], PAIR, item=Field(float, check=FRACTION)),
    "dark_rate": _opt(list, [0.0, 0.0], PAIR, item=Field(float, check=NON_NEGATIVE)),
    "dead_time_ns": _opt(float, 0.0, NON_NEGATIVE),
    "afterpulse_probability": _opt(float, 0.0, HALF_OPEN_FRACTION),
    "afterpulse_delay_ns": _opt(float, 100.0, POSITIVE),
}

SIMULATE_SCHEMA: Schema = {
    "mode": Field(str, check=one_of("cw", "pulsed")),
    "duration_s": Field(float, check=POSITIVE),
    "seed": _opt(int, 0, UINT64),
    "threads": _opt(int, 1, AT_LEAST_ONE),
    "format": _opt(str, "csv", one_of("csv", "binary")),
    "atom": Field(dict, schema=SOURCE_SCHEMA),
    "ion": Field(dict, schema=SOURCE_SCHEMA),
    "overlap": _opt(float, 1.0, FRACTION),
    "spectral": _opt(dict, {}, schema=SPECTRAL_SCHEMA),
    "pulse_period_us": _opt(float, 5.0, POSITIVE),
    "atom_slot_us": _opt(float, 4.25, NON_NEGATIVE),
    "ion_slots_us": _opt(list, [1.75, 4.25], NONEMPTY, item=Field(float, check=NON_NEGATIVE)),
    "arrival_offset_ns": _opt(float, 40.0),
    "duty_cycle": _opt(float, 1.0, (lambda v: 0 < v <= 1, "must be in (0, 1]")),
    "clock_divider": _opt(int, 1, AT_LEAST_ONE),
    "detectors": _opt(dict, {}, schema=DETECTOR_SCHEMA),
    "interference_window_ns": _opt(float, 10.0, POSITIVE),
    "block_duration_s": _opt(float, 1.0, POSITIVE),
    "density_dt_ns": _opt(float, 1.0, POSITIVE),
}

GATE_SCHEMA: Schema = {
    "area_fraction": _opt(float, 0.8, OPEN_FRACTION),
    "envelope": _opt(dict, {}, schema=ENVELOPE_SCHEMA),
    "slots_us": _opt(list, [1.75, 4.25], NONEMPTY, item=Field(float, check=NON_NEGATIVE)),
    "arrival_offset_ns": _opt(float, 40.0),
}

ANALYZE_SCHEMA: Schema = {
    "mode": Field(str, check=one_of("cw", "pulsed")),
    "stream": _opt(str),
    "reference_stream": _opt(str),
    "bin_ns": _opt(float, 5.0, POSITIVE),
    "tau_max_ns": _opt(float, 500.0, POSITIVE),
    "center_bins": _opt(int, 1, (lambda v: v >= 1 and v % 2 == 1, "must be an odd integer >= 1")),
    "normalization": _opt(str, "plateau", one_of("plateau", "analytic")),
    "period_us": _opt(float, 5.0, POSITIVE),
    "half_period_us": _opt(float, 2.5),
    "k_min": _opt(int, -5),
    "k_max": _opt(int, 4),
    "t_bin_ns": _opt(float, 1.0, POSITIVE),
    "windows_ns": _opt(list, check=NONEMPTY, item=Field(list, check=WINDOW, item=Field(float))),
    "gate": _opt(dict, {}, schema=GATE_SCHEMA),
    "background_rate_a": _opt(float, 0.0, NON_NEGATIVE),
    "background_rate_b": _opt(float, 0.0, NON_NEGATIVE),
}

STATS_SCHEMA: Schema = {
    "rate": Field(float, check=POSITIVE),
    "g2_zero": _opt(float, 0.0, NON_NEGATIVE),
    "g2_error": _opt(float, 0.0, NON_NEGATIVE),
    "rate_error": _opt(float, 0.0, NON_NEGATIVE),
}

COUNTING_SCHEMA: Schema = {
    "atom": Field(dict, schema=STATS_SCHEMA),
    "ion": Field(dict, schema=STATS_SCHEMA),
    "window_ns": _opt(float, 1.0, POSITIVE),
}

THEORY_SCHEMA: Schema = {
    "atom": _opt(dict, {}, schema=ENVELOPE_SCHEMA),
    "ion": _opt(dict, {}, schema=ENVELOPE_SCHEMA),
    "spectral": _opt(dict, {}, schema=SPECTRAL_SCHEMA),
    "overlap": _opt(float, 1.0, FRACTION),
    "arrival_offset_ns": _opt(float, 0.0),
    "coherence": _opt(str, "incoherent", one_of("incoherent", "coherent")),
    "area_fraction": _opt(float, 0.8, OPEN_FRACTION),
    "gate_on": _opt(str, "ion", one_of("ion", "atom")),
    "dt_ns": _opt(float, 0.5, POSITIVE),
    "tau_max_ns": _opt(float, check=POSITIVE),
    "compare_ideal": _opt(bool, False),
    "counting": _opt(dict, schema=COUNTING_SCHEMA),
}

IMPROVEMENT_SCHEMA: Schema = {
    "label": Field(str),
    "factor": Field(float, check=NON_NEGATIVE),
}

COLLECTION_SCHEMA: Schema = {
    "na_old": Field(float, check=OPEN_FRACTION),
    "na_new": Field(float, check=OPEN_FRACTION),
    "coupling_old": Field(float, check=HERALDING),
    "coupling_new": Field(float, check=HERALDING),
}

ROW_SCHEMA: Schema = {
    "bin_ns": Field(float, check=POSITIVE),
    "visibility": Field(float),
    "sigma": _opt(float, 0.0, NON_NEGATIVE),
    "coincidences": Field(float, check=NON_NEGATIVE),
}

ENTANGLE_SCHEMA: Schema = {
    "run_time_h": Field(float, check=POSITIVE),
    "rows": Field(list, check=NONEMPTY, item=Field(dict, schema=ROW_SCHEMA)),
    "improvements": _opt(list, [], item=Field(dict, schema=IMPROVEMENT_SCHEMA)),
    "collection": _opt(dict, schema=COLLECTION_SCHEMA),
    "heralding_fraction": _opt(float, 1.0, HERALDING),
    "g2_atom": _opt(float, 0.0, NON_NEGATIVE),
    "g2_ion": _opt(float, 0.0, NON_NEGATIVE),
}


def spectral_model(doc: Dict[str, Any]) -> SpectralModel:
    if doc.get("lines") is not None and doc.get("zeeman_gauss") is not None:
        raise ConfigError("spectral: give either lines or zeeman_gauss, not both")
    if doc.get("lines") is not None:
        lines = [(line["detuning_mhz"] * TWO_PI_MHZ, line["weight"]) for line in doc["lines"]]
        if sum(w for _, w in lines) <= 0:
            raise ConfigError("spectral.lines: weights sum to zero")
        model = SpectralModel.from_lines(lines)
    elif doc.get("zeeman_gauss") is not None:
        model = zeeman_lines(doc["zeeman_gauss"], G_D32, G_S12, barium_raman_transitions())
    else:
        model = SpectralModel.ideal()
    return model.with_offsets(doc["offset_mhz"] * TWO_PI_MHZ, doc["drift_mhz"] * TWO_PI_MHZ)


def emission(doc: Dict[str, Any], default_decay: float) -> Union[TemporalEnvelope, EmissionMixture]:
    """
    Exponential (decay_ns) or Bloch-equation (bloch) envelope on a dt_ns
    grid, turned into a branching mixture when branch_back > 0.
    """
    bloch = doc.get("bloch")
    if bloch is not None and doc.get("decay_ns") is not None:
        raise ConfigError("envelope: give either decay_ns or bloch, not both")
    if bloch is not None:
        fine = bloch_emission_profile(bloch["rabi_mhz"] * TWO_PI_MHZ, bloch["detuning_mhz"] * TWO_PI_MHZ,
                                      bloch["pulse_ns"], bloch["branching_to_ground"], bloch["dt_ns"],
                                      bloch["decay_rate"])
        envelope = fine.resample(doc["dt_ns"])
    else:
        decay = doc.get("decay_ns") or default_decay
        envelope = exponential_envelope(decay, doc["rise_ns"], None, doc["dt_ns"])
    if doc["branch_back"] > 0:
        return branching_mixture(envelope, doc["branch_back"])
    return envelope


def _direct(envelope: Union[TemporalEnvelope, EmissionMixture], path: str) -> TemporalEnvelope:
    if isinstance(envelope, EmissionMixture):
        raise ConfigError(f"{path}.branch_back: only the ion photon may carry a delayed component")
    return envelope


def _source(label: str, doc: Dict[str, Any], mode: SourceMode) -> SourceSpec:
    return SourceSpec(label, mode, doc["rate"], doc["attempt_probability"], doc["g2_zero"],
                      doc["background_rate"], doc.get("coherence_window_ns"))


def experiment_config(doc: Dict[str, Any]) -> ExperimentConfig:
    mode = SourceMode(doc["mode"])
    detectors = doc["detectors"]
    atom_envelope = ion_envelope = None
    if doc["atom"].get("envelope") is not None:
        atom_envelope = _direct(emission(doc["atom"]["envelope"], ATOM_DECAY_NS), "atom.envelope")
    if doc["ion"].get("envelope") is not None:
        ion_envelope = emission(doc["ion"]["envelope"], ION_DECAY_NS)
    return ExperimentConfig(
        mode=mode,
        duration=doc["duration_s"],
        atom=_source("atom", doc["atom"], mode),
        ion=_source("ion", doc["ion"], mode),
        overlap=doc["overlap"],
        spectral=spectral_model(doc["spectral"]),
        atom_envelope=atom_envelope,
        ion_envelope=ion_envelope,
        pulse_period=doc["pulse_period_us"],
        atom_slot_offset=doc["atom_slot_us"],
        ion_slot_offsets=tuple(doc["ion_slots_us"]),
        arrival_offset=doc["arrival_offset_ns"],
        duty_cycle=doc["duty_cycle"],
        clock_divider=doc["clock_divider"],
        detectors=DetectorSpec(
            tuple(detectors["efficiency"]),
            tuple(detectors["dark_rate"]),
            detectors["dead_time_ns"],
            detectors["afterpulse_probability"],
            detectors["afterpulse_delay_ns"],
        ),
        rng_seed=doc["seed"],
        interference_window=doc["interference_window_ns"],
        block_duration=doc["block_duration_s"],
        density_dt=doc["density_dt_ns"],
    )


@dataclass(frozen=True)
class AnalysisSettings:
    mode: SourceMode
    stream: Path
    reference_stream: Optional[Path]
    bin: float
    tau_max: float
    center_bins: int
    normalization: G2Normalization
    period: float
    half_period: float
    k_range: Tuple[int, ...]
    t_bin: float
    windows: Tuple[GateWindow, ...]
    background_a: float
    background_b: float


def gate_windows(doc: Dict[str, Any], period_us: float) -> Tuple[GateWindow, ...]:
    """
    Shortest window holding area_fraction of the ion photon, placed at each
    ion slot plus the arrival offset.
    """
    envelope = emission(doc["envelope"], ION_DECAY_NS)
    profile = envelope.direct if isinstance(envelope, EmissionMixture) else envelope
    window = gate_window(profile, doc["area_fraction"])
    windows = []
    for slot in doc["slots_us"]:
        placed = window.shifted(slot * 1e3 + doc["arrival_offset_ns"])
        if placed.start < 0 or placed.end > period_us * 1e3:
            raise ConfigError(f"gate: window at slot {slot} us falls outside the {period_us} us period")
        windows.append(placed)
    return tuple(windows)


def analysis_settings(doc: Dict[str, Any]) -> AnalysisSettings:
    if doc.get("stream") is None:
        raise ConfigError("stream: required field missing (set it in the config or pass --stream)")
    if doc["k_min"] > doc["k_max"]:
        raise ConfigError("k_min must not exceed k_max")
    mode = SourceMode(doc["mode"])
    windows: Tuple[GateWindow, ...] = ()
    if mode is SourceMode.PULSED:
        if doc.get("windows_ns") is not None:
            windows = tuple(GateWindow(start, end) for start, end in doc["windows_ns"])
        else:
            windows = gate_windows(doc["gate"], doc["period_us"])
    reference = doc.get("reference_stream")
    return AnalysisSettings(
        mode=mode,
        stream=Path(doc["stream"]),
        reference_stream=Path(reference) if reference else None,
        bin=doc["bin_ns"],
        tau_max=doc["tau_max_ns"],
        center_bins=doc["center_bins"],
        normalization=G2Normalization(doc["normalization"]),
        period=doc["period_us"],
        half_period=doc["half_period_us"],
        k_range=tuple(range(doc["k_min"], doc["k_max"] + 1)),
        t_bin=doc["t_bin_ns"],
        windows=windows,
        background_a=doc["background_rate_a"],
        background_b=doc["background_rate_b"],
    )


@dataclass(frozen=True, eq=False)
class TheorySettings:
    atom: TemporalEnvelope
    ion: Union[TemporalEnvelope, EmissionMixture]
    spectral: SpectralModel
    overlap: float
    coherence: MixtureCoherence
    area_fraction: float
    gate_on: str
    dt: float
    tau_max: Optional[float]
    compare_ideal: bool
    counting: Optional[Tuple[SourceStats, SourceStats, float]]


def _stats(label: str, doc: Dict[str, Any]) -> SourceStats:
    return SourceStats(doc["rate"], doc["g2_zero"], label, doc["g2_error"], doc["rate_error"])


def theory_settings(doc: Dict[str, Any]) -> TheorySettings:
    counting = None
    ion = emission(doc["ion"], ION_DECAY_NS)
    offset = doc["arrival_offset_ns"]
    if isinstance(ion, EmissionMixture):
        ion = EmissionMixture(ion.direct.shifted(offset), ion.p_direct, ion.delay_density)
    else:
        ion = ion.shifted(offset)
    if doc.get("counting") is not None:
        block = doc["counting"]
        counting = (_stats("atom", block["atom"]), _stats("ion", block["ion"]), block["window_ns"])
    return TheorySettings(
        atom=_direct(emission(doc["atom"], ATOM_DECAY_NS), "atom"),
        ion=ion,
        spectral=spectral_model(doc["spectral"]),
        overlap=doc["overlap"],
        coherence=MixtureCoherence(doc["coherence"]),
        area_fraction=doc["area_fraction"],
        gate_on=doc["gate_on"],
        dt=doc["dt_ns"],
        tau_max=doc.get("tau_max_ns"),
        compare_ideal=doc["compare_ideal"],
        counting=counting,
    )


@dataclass(frozen=True)
class EntangleSettings:
    scenario: RateScenario
    rows: Tuple[TableRow, ...]
    g2_atom: float
    g2_ion: float


def entangle_settings(doc: Dict[str, Any]) -> EntangleSettings:
    factors: List[Tuple[str, float]] = [(item["label"], item["factor"]) for item in doc["improvements"]]
    collection = doc.get("collection")
    if collection is not None:
        factors.append(("collection", collection_gain(collection["na_old"], collection["na_new"],
                                                      collection["coupling_old"], collection["coupling_new"])))
    rows = tuple(TableRow(r["bin_ns"], r["visibility"], r["sigma"], r["coincidences"]) for r in doc["rows"])
    scenario = RateScenario(rows[0].coincidences, doc["run_time_h"] * 3600.0, tuple(factors),
                            doc["heralding_fraction"])
    return EntangleSettings(scenario, rows, doc["g2_atom"], doc["g2_ion"])
