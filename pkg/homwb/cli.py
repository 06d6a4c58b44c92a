"""
The four subcommands. Each handler builds every output in memory and hands
them back in a CommandResult; the app writes them once the handler returned.
"""
from homwb.bell import fidelity_rate_table
from homwb.commands import CommandContext, CommandResult, CommandRouter
from homwb.counting import (
    OverlapParam,
    coincidence_rate,
    expected_visibility,
    multiphoton_factor,
    multiphoton_factor_error,
    normalized_coincidence,
)
from homwb.exceptions import ParameterError
from homwb.interference import dip_fwhm, gate_window, hom_curves
from homwb.montecarlo import expected_singles_rates, simulate
from homwb.outputs import CsvOutput, JsonOutput, TextOutput
from homwb.schemas import (
    ANALYZE_SCHEMA,
    ENTANGLE_SCHEMA,
    SIMULATE_SCHEMA,
    THEORY_SCHEMA,
    analysis_settings,
    entangle_settings,
    experiment_config,
    theory_settings,
)
from homwb.tagio import read_stream, stream_filename, stream_output
from homwb.tags import analyze_cw, analyze_pulsed, g2_histogram
from homwb.types import G2Normalization, SourceMode, StreamFormat
from homwb.wavepacket import EmissionMixture, SpectralModel

router = CommandRouter()

TABLE_COLUMNS = ["bin_ns", "visibility", "fidelity", "fidelity_err", "rate_current", "rate_projected"]


@router.command("simulate", SIMULATE_SCHEMA, experiment_config, help="generate a synthetic time-tag stream")
def cmd_simulate(ctx: CommandContext) -> CommandResult:
    document = ctx.document.get_validated()
    config = ctx.document.get_config()
    stream = simulate(config, threads=document["threads"])

    fmt = StreamFormat(document["format"])
    name = stream_filename(fmt)
    summary = {
        "counts": stream.counts(),
        "duration_ps": stream.duration_ps,
        "expected_rates": expected_singles_rates(config),
        "stream": name,
    }
    return CommandResult([stream_output(stream, ctx.out(name), fmt)], summary)


@router.command("analyze", ANALYZE_SCHEMA, analysis_settings, help="histogram a stream and estimate V")
def cmd_analyze(ctx: CommandContext) -> CommandResult:
    settings = ctx.document.get_config()
    stream = read_stream(settings.stream)

    if settings.mode is SourceMode.CW:
        reference = read_stream(settings.reference_stream) if settings.reference_stream else None
        report = analyze_cw(stream, settings.tau_max, settings.bin, settings.center_bins, reference,
                            settings.normalization)
        outputs = [TextOutput(report.g2.to_csv(), ctx.out("g2.csv"))]
        if report.reference is not None:
            outputs.append(TextOutput(report.reference.to_csv(), ctx.out("g2_reference.csv")))
        summary = report.summary()
    else:
        report = analyze_pulsed(stream, settings.windows, settings.period, settings.half_period, settings.k_range,
                                settings.bin, settings.t_bin, settings.center_bins, settings.background_a,
                                settings.background_b)
        # slotted photons leave no flat plateau, so the pulsed g2 is scaled by the singles
        g2 = g2_histogram(stream, settings.tau_max, settings.bin, G2Normalization.ANALYTIC)
        outputs = [
            TextOutput(g2.to_csv(), ctx.out("g2.csv")),
            TextOutput(report.gated.to_csv(), ctx.out("gated.csv")),
            TextOutput(report.overlapped.to_csv(), ctx.out("overlapped.csv")),
            TextOutput(report.reference.to_csv(), ctx.out("nonoverlapped.csv")),
        ]
        summary = report.summary()
        summary["windows_ns"] = [[w.start, w.end] for w in settings.windows]
        summary["g2_zero_bin"] = list(g2.center_value(1))

    summary["mode"] = settings.mode.value
    summary["bin_ns"] = settings.bin
    summary["stream"] = str(settings.stream)
    outputs.append(JsonOutput(summary, ctx.out("report.json")))
    return CommandResult(outputs, summary)


def _fwhm_or_none(interfering, reference):
    try:
        return dip_fwhm(interfering, reference)
    except ParameterError:
        return None


@router.command("theory", THEORY_SCHEMA, theory_settings, help="theoretical HOM coincidence curves")
def cmd_theory(ctx: CommandContext) -> CommandResult:
    settings = ctx.document.get_config()
    ion_direct = settings.ion.direct if isinstance(settings.ion, EmissionMixture) else settings.ion
    gate = gate_window(ion_direct if settings.gate_on == "ion" else settings.atom, settings.area_fraction)

    interfering, reference = hom_curves(settings.atom, settings.ion, settings.spectral, gate, settings.overlap,
                                        settings.coherence, settings.dt, settings.tau_max)
    outputs = [
        TextOutput(interfering.to_csv(), ctx.out("interfering.csv")),
        TextOutput(reference.to_csv(), ctx.out("noninterfering.csv")),
    ]
    summary = {
        "gate_ns": [gate.start, gate.end],
        "interfering_at_zero": interfering.value_at(0.0),
        "noninterfering_at_zero": reference.value_at(0.0),
        "dip_fwhm_ns": _fwhm_or_none(interfering, reference),
        "degenerate": interfering.degenerate,
    }

    if settings.compare_ideal:
        ideal, ideal_reference = hom_curves(settings.atom, settings.ion, SpectralModel.ideal(), gate,
                                            settings.overlap, settings.coherence, settings.dt, settings.tau_max)
        outputs.append(TextOutput(ideal.to_csv(), ctx.out("ideal_interfering.csv")))
        summary["ideal_dip_fwhm_ns"] = _fwhm_or_none(ideal, ideal_reference)

    if settings.counting is not None:
        atom, ion, window_ns = settings.counting
        c = OverlapParam(settings.overlap)
        summary["bands"] = {
            "n_parallel": normalized_coincidence(c, atom, ion),
            "n_perpendicular": normalized_coincidence(OverlapParam(0.0), atom, ion),
            "multiphoton_factor": multiphoton_factor(atom, ion),
            "multiphoton_factor_err": multiphoton_factor_error(atom, ion),
            "expected_visibility": expected_visibility(c, atom, ion),
            "coincidence_rate_per_s": coincidence_rate(c, atom, ion, window_ns * 1e-9),
        }

    outputs.append(JsonOutput(summary, ctx.out("theory.json")))
    return CommandResult(outputs, summary)


@router.command("entangle", ENTANGLE_SCHEMA, entangle_settings, help="fidelity and entanglement-rate table")
def cmd_entangle(ctx: CommandContext) -> CommandResult:
    settings = ctx.document.get_config()
    table = fidelity_rate_table(settings.rows, settings.scenario, settings.g2_atom, settings.g2_ion)
    columns = [[row[key] for row in table] for key in TABLE_COLUMNS]

    summary = {
        "table": table,
        "run_time_s": settings.scenario.run_time,
        "heralding_fraction": settings.scenario.heralding_fraction,
        "improvement_factors": [list(item) for item in settings.scenario.improvement_factors],
        "improvement": settings.scenario.improvement,
    }
    outputs = [
        CsvOutput(TABLE_COLUMNS, columns, ctx.out("entangle.csv")),
        JsonOutput(summary, ctx.out("entangle.json")),
    ]
    return CommandResult(outputs, summary)
