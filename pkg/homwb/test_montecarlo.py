import unittest
from collections import namedtuple

import numpy as np
from scipy import stats

from homwb.exceptions import ModelValidityError, OverlapAmbiguityError, ParameterError
from homwb.interference import GateWindow, coincidence_curve, joint_density_full
from homwb.montecarlo import (
    DetectorSpec,
    ExperimentConfig,
    SourceSpec,
    TagStream,
    _pair_nearest,
    _present,
    _renewal_times,
    expected_singles_rates,
    iter_cw_blocks,
    merge_streams,
    simulate,
    simulate_cw,
    simulate_hbt,
    simulate_pulsed,
    split_stream,
)
from homwb.tags import pair_histogram
from homwb.types import Channel, PS_PER_NS, SourceMode
from homwb.wavepacket import SpectralModel, branching_mixture, exponential_envelope


def cw_config(**kwargs) -> ExperimentConfig:
    params = dict(
        mode=SourceMode.CW,
        duration=2.0,
        atom=SourceSpec("atom", rate=1e4, g2_zero=0.119),
        ion=SourceSpec("ion", rate=400.0, g2_zero=0.05),
        rng_seed=5,
        block_duration=0.5,
    )
    params.update(kwargs)
    return ExperimentConfig(**params)


def pulsed_config(**kwargs) -> ExperimentConfig:
    params = dict(
        mode=SourceMode.PULSED,
        duration=0.01,
        atom=SourceSpec("atom", SourceMode.PULSED, attempt_probability=0.2),
        ion=SourceSpec("ion", SourceMode.PULSED, attempt_probability=0.1),
        rng_seed=9,
        block_duration=0.002,
        density_dt=2.0,
    )
    params.update(kwargs)
    return ExperimentConfig(**params)


class TestSpecs(unittest.TestCase):

    def test_invalid_sources(self):
        TestCase = namedtuple('TestCase', ['kwargs', 'description'])
        test_cases = [
            TestCase(kwargs=dict(label="atom", rate=0.0), description="CW without rate"),
            TestCase(kwargs=dict(label="ion", mode=SourceMode.PULSED, attempt_probability=0.0),
                     description="pulsed without probability"),
            TestCase(kwargs=dict(label="ion", mode=SourceMode.PULSED, attempt_probability=1.5),
                     description="probability above 1"),
            TestCase(kwargs=dict(label="atom", rate=1.0, g2_zero=-0.1), description="negative g2"),
            TestCase(kwargs=dict(label="atom", rate=1.0, background_rate=-1.0), description="negative background"),
            TestCase(kwargs=dict(label="atom", rate=1.0, coherence_window=0.0), description="zero window"),
        ]

        for case in test_cases:
            with self.subTest(case.description):
                with self.assertRaises(ParameterError):
                    SourceSpec(**case.kwargs)

    def test_default_coherence_windows(self):
        TestCase = namedtuple('TestCase', ['label', 'expected'])
        test_cases = [
            TestCase(label="atom", expected=100.0),
            TestCase(label="ion", expected=10.0),
            TestCase(label="other", expected=10.0),
        ]

        for case in test_cases:
            with self.subTest(case.label):
                self.assertEqual(SourceSpec(case.label, rate=1.0).coherence_window, case.expected)

    def test_doublet_rate(self):
        source = SourceSpec("atom", rate=1e4, g2_zero=0.1, coherence_window=100.0)
        self.assertAlmostEqual(source.doublet_rate, 1e8 * 0.1 * 100e-9 / 2)
        self.assertAlmostEqual(source.single_rate, 1e4 - 2 * source.doublet_rate)
        self.assertAlmostEqual(source.occupancy(), 1e-3)

    def test_invalid_detectors(self):
        TestCase = namedtuple('TestCase', ['kwargs', 'description'])
        test_cases = [
            TestCase(kwargs=dict(efficiency=(1.0,)), description="one efficiency"),
            TestCase(kwargs=dict(efficiency=(1.2, 1.0)), description="efficiency above 1"),
            TestCase(kwargs=dict(dark_rate=(-1.0, 0.0)), description="negative dark rate"),
            TestCase(kwargs=dict(dead_time=-1.0), description="negative dead time"),
            TestCase(kwargs=dict(afterpulse_probability=1.0), description="certain afterpulse"),
        ]

        for case in test_cases:
            with self.subTest(case.description):
                with self.assertRaises(ParameterError):
                    DetectorSpec(**case.kwargs)

    def test_invalid_experiments(self):
        TestCase = namedtuple('TestCase', ['kwargs', 'description'])
        test_cases = [
            TestCase(kwargs=dict(duration=0.0), description="zero duration"),
            TestCase(kwargs=dict(overlap=1.5), description="overlap above 1"),
            TestCase(kwargs=dict(duty_cycle=0.0), description="zero duty cycle"),
            TestCase(kwargs=dict(clock_divider=0), description="zero clock divider"),
            TestCase(kwargs=dict(rng_seed=2 ** 64), description="seed too large"),
            TestCase(kwargs=dict(block_duration=0.0), description="zero block"),
            TestCase(kwargs=dict(ion=SourceSpec("ion", SourceMode.PULSED, attempt_probability=0.1)),
                     description="source mode mismatch"),
        ]

        for case in test_cases:
            with self.subTest(case.description):
                with self.assertRaises(ParameterError):
                    cw_config(**case.kwargs)

    def test_n_periods(self):
        config = pulsed_config(duration=1.0, duty_cycle=0.6)
        self.assertEqual(config.n_periods, 120_000)
        self.assertEqual(config.with_seed(3).rng_seed, 3)


class TestTagStream(unittest.TestCase):

    def test_invalid_streams(self):
        TestCase = namedtuple('TestCase', ['channels', 'timestamps', 'description'])
        test_cases = [
            TestCase(channels=[0, 1], timestamps=[5], description="length mismatch"),
            TestCase(channels=[0, 1], timestamps=[5, 4], description="decreasing"),
            TestCase(channels=[0, 7], timestamps=[4, 5], description="unknown channel"),
        ]

        for case in test_cases:
            with self.subTest(case.description):
                with self.assertRaises(ParameterError):
                    TagStream(np.array(case.channels), np.array(case.timestamps))

    def test_channel_set_enforced(self):
        with self.assertRaises(ParameterError):
            TagStream(np.array([2]), np.array([0]), frozenset({Channel.A, Channel.B}))

    def test_counts_and_rates(self):
        stream = TagStream(np.array([0, 1, 0, 2]), np.array([0, 10, 20, 30]), duration_ps=10 ** 12)
        self.assertEqual(stream.counts(), {"A": 2, "B": 1, "CLK": 1})
        self.assertEqual(stream.singles_rate(Channel.A), 2.0)
        np.testing.assert_array_equal(stream.times(Channel.A), [0, 20])

    def test_span(self):
        TestCase = namedtuple('TestCase', ['timestamps', 'duration_ps', 'expected'])
        test_cases = [
            TestCase(timestamps=[10, 30], duration_ps=1000, expected=1000),
            TestCase(timestamps=[10, 30], duration_ps=0, expected=21),
            TestCase(timestamps=[10], duration_ps=0, expected=0),
        ]

        for case in test_cases:
            with self.subTest(timestamps=case.timestamps, duration_ps=case.duration_ps):
                stream = TagStream(np.zeros(len(case.timestamps)), np.array(case.timestamps),
                                   duration_ps=case.duration_ps)
                self.assertEqual(stream.span_ps, case.expected)

    def test_merge_orders_by_time_then_channel(self):
        first = TagStream(np.array([1, 0]), np.array([5, 9]), duration_ps=10)
        second = TagStream(np.array([0, 2]), np.array([5, 7]), duration_ps=20)

        merged = merge_streams([first, second])

        np.testing.assert_array_equal(merged.timestamps, [5, 5, 7, 9])
        np.testing.assert_array_equal(merged.channels, [0, 1, 2, 0])
        self.assertEqual(merged.duration_ps, 20)
        self.assertEqual(len(merge_streams([])), 0)

    def test_split_stream(self):
        stream = TagStream(np.array([0, 1, 0]), np.array([1, 2, 3]))
        only_a = split_stream(stream, Channel.A)
        np.testing.assert_array_equal(only_a.timestamps, [1, 3])
        with self.assertRaises(ParameterError):
            split_stream(TagStream(np.array([0]), np.array([1]), frozenset({Channel.A})), Channel.B)


class TestPointProcesses(unittest.TestCase):

    def test_renewal_times(self):
        rng = np.random.default_rng(4)
        times = _renewal_times(rng, 1e5, 50.0, 1e8)
        self.assertGreaterEqual(np.min(np.diff(times)), 50.0 - 1e-6)
        self.assertAlmostEqual(times.size, 1e4, delta=500)
        self.assertLess(times.max(), 1e8)

    def test_present(self):
        rng = np.random.default_rng(8)
        TestCase = namedtuple('TestCase', ['probability', 'count'])
        test_cases = [
            TestCase(probability=0.03, count=100_000),
            TestCase(probability=0.5, count=10_000),
        ]

        for case in test_cases:
            with self.subTest(probability=case.probability):
                index = _present(rng, case.probability, case.count)
                self.assertTrue(np.all(np.diff(index) > 0))
                self.assertTrue(np.all((index >= 0) & (index < case.count)))
                expected = case.probability * case.count
                self.assertAlmostEqual(index.size, expected, delta=5 * np.sqrt(expected))

        self.assertEqual(_present(rng, 0.0, 10).size, 0)
        np.testing.assert_array_equal(_present(rng, 1.0, 4), [0, 1, 2, 3])

    def test_pair_nearest(self):
        ion = np.array([10.0, 50.0, 52.0, 100.0])
        atom = np.array([13.0, 51.0, 200.0])

        ion_index, atom_index = _pair_nearest(ion, atom, 5.0)

        # ion 50 and 52 both want atom 51; the earliest keeps it
        np.testing.assert_array_equal(ion_index, [0, 1])
        np.testing.assert_array_equal(atom_index, [0, 1])

    def test_pair_nearest_empty(self):
        ion_index, atom_index = _pair_nearest(np.zeros(0), np.array([1.0]), 5.0)
        self.assertEqual(ion_index.size, 0)
        self.assertEqual(atom_index.size, 0)


class TestSimulateCw(unittest.TestCase):

    def test_deterministic_for_seed_and_threads(self):
        config = cw_config()
        single = simulate_cw(config, threads=1)
        again = simulate_cw(config, threads=1)
        threaded = simulate_cw(config, threads=3)

        np.testing.assert_array_equal(single.timestamps, again.timestamps)
        np.testing.assert_array_equal(single.timestamps, threaded.timestamps)
        np.testing.assert_array_equal(single.channels, threaded.channels)

        other = simulate_cw(config.with_seed(6))
        self.assertFalse(np.array_equal(single.timestamps[:100], other.timestamps[:100]))

    def test_stream_shape(self):
        stream = simulate_cw(cw_config())
        self.assertEqual(stream.duration_ps, 2 * 10 ** 12)
        self.assertEqual(stream.counts()["CLK"], 0)
        self.assertTrue(np.all(np.diff(stream.timestamps) >= 0))

    def test_singles_rates_match_expectation(self):
        config = cw_config(detectors=DetectorSpec(efficiency=(0.5, 1.0), dark_rate=(100.0, 0.0)))
        expected = expected_singles_rates(config)
        self.assertAlmostEqual(expected["A"], 10400 / 2 * 0.5 + 100)
        self.assertAlmostEqual(expected["B"], 10400 / 2)

        stream = simulate_cw(config)
        for channel in (Channel.A, Channel.B):
            with self.subTest(channel=channel.name):
                count = stream.counts()[channel.name]
                mean = expected[channel.name] * config.duration
                self.assertAlmostEqual(count, mean, delta=5 * np.sqrt(mean))

    def test_iter_blocks(self):
        config = cw_config()
        blocks = list(iter_cw_blocks(config))
        self.assertEqual(len(blocks), 4)
        self.assertEqual(sum(len(block) for block in blocks), len(simulate_cw(config)))

    def test_small_flux_limit(self):
        config = cw_config(atom=SourceSpec("atom", rate=2e6, g2_zero=0.1))
        with self.assertRaises(ModelValidityError):
            simulate_cw(config)

    def test_needs_cw_mode(self):
        with self.assertRaises(ParameterError):
            simulate_cw(pulsed_config())

    def test_hbt_dead_time(self):
        stream = simulate_hbt(SourceSpec("atom", rate=1e5), DetectorSpec(dead_time=100.0), duration=0.2, seed=1,
                              block_duration=0.1)
        for channel in (Channel.A, Channel.B):
            with self.subTest(channel=channel.name):
                self.assertGreaterEqual(np.min(np.diff(stream.times(channel))), 100 * PS_PER_NS - 1)


class TestSimulatePulsed(unittest.TestCase):

    def test_clock_tags(self):
        config = pulsed_config(clock_divider=7)
        stream = simulate_pulsed(config)
        period_ps = 5 * 10 ** 6

        clocks = stream.times(Channel.CLK)
        self.assertEqual(clocks.size, int(np.ceil(config.n_periods / 7)))
        np.testing.assert_array_equal(clocks % (7 * period_ps), 0)
        self.assertEqual(stream.duration_ps, config.n_periods * period_ps)

    def test_deterministic_for_threads(self):
        config = pulsed_config()
        single = simulate(config, threads=1)
        threaded = simulate(config, threads=2)
        np.testing.assert_array_equal(single.timestamps, threaded.timestamps)
        np.testing.assert_array_equal(single.channels, threaded.channels)

    def test_detections_follow_slots(self):
        stream = simulate_pulsed(pulsed_config(duration=0.05))
        period_ps = 5 * 10 ** 6
        in_period = (np.concatenate((stream.times(Channel.A), stream.times(Channel.B))) % period_ps) / PS_PER_NS
        # every photon starts at 1750 + 40 or 4250 (+ 40) ns and lives ~10 decay constants
        early = (in_period >= 1750) & (in_period < 1790)
        self.assertEqual(np.count_nonzero(early), 0)
        self.assertGreater(np.count_nonzero((in_period >= 4250) & (in_period < 4290)), 0)

    def test_expected_rates(self):
        config = pulsed_config(clock_divider=10)
        rates = expected_singles_rates(config)
        per_period = 0.2 + 2 * 0.1
        self.assertAlmostEqual(rates["A"], per_period / 5e-6 / 2)
        self.assertAlmostEqual(rates["CLK"], 2e5 / 10)

    def test_ambiguous_slots(self):
        with self.assertRaises(OverlapAmbiguityError):
            simulate_pulsed(pulsed_config(ion_slot_offsets=(1.75, 1.8)))

    def test_needs_pulsed_mode(self):
        with self.assertRaises(ParameterError):
            simulate_pulsed(cw_config())

    def test_atom_mixture_rejected(self):
        atom = branching_mixture(exponential_envelope(120.0, 0.0, 1200.0, 0.5), 0.2)
        with self.assertRaises(ParameterError):
            simulate_pulsed(pulsed_config(atom_envelope=atom))

    def test_opposite_port_delays_follow_theory(self):
        atom = exponential_envelope(20.0, 0.0, 200.0, 0.5)
        ion = exponential_envelope(10.0, 0.0, 100.0, 0.5)
        config = pulsed_config(
            duration=0.4,
            block_duration=0.1,
            atom=SourceSpec("atom", SourceMode.PULSED, attempt_probability=0.5),
            ion=SourceSpec("ion", SourceMode.PULSED, attempt_probability=0.5),
            atom_envelope=atom,
            ion_envelope=ion,
            ion_slot_offsets=(4.25,),
            arrival_offset=10.0,
        )
        stream = simulate_pulsed(config)
        # one slot per period: every A-B pair within 150 ns is an opposite-port pair
        hist = pair_histogram(stream.times(Channel.A), stream.times(Channel.B), 150.0, config.density_dt)

        density = joint_density_full(atom, ion.shifted(10.0), SpectralModel.ideal(), dt=config.density_dt)
        curve = coincidence_curve(density, GateWindow(density.t0[0], density.t0[-1]), tau_grid=hist.centers)
        expected = curve.values / curve.values.sum() * hist.raw_counts.sum()

        used = expected >= 5.0
        chi2 = float(np.sum((hist.raw_counts[used] - expected[used]) ** 2 / expected[used]))
        dof = int(np.count_nonzero(used)) - 1
        self.assertGreater(dof, 20)
        self.assertLess(chi2 / dof, 2.0)
        self.assertGreater(stats.chi2.sf(chi2, dof), 1e-3)
        self.assertLess(hist.raw_counts[hist.center_index()], 0.1 * hist.raw_counts.max())
