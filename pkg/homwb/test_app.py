import json
import tempfile
import unittest
from pathlib import Path
from typing import NamedTuple
from unittest.mock import MagicMock

from homwb import __version__
from homwb.app import App, version_string
from homwb.commands import CommandContext, CommandResult, CommandRouter
from homwb.config import ConfigDocument, Field, POSITIVE
from homwb.exceptions import NormalizationError
from homwb.main import create_app, main
from homwb.middleware import BaseCommandMiddleware, ManifestMiddleware, TimingMiddleware, _MiddlewareManager
from homwb.outputs import TextOutput
from homwb.types import ExitCode

ECHO_SCHEMA = {"value": Field(float, check=POSITIVE), "seed": Field(int, required=False, default=0)}


class RecordingMiddleware(BaseCommandMiddleware):

    def __init__(self, name: str, calls: list):
        self.name = name
        self.calls = calls

    def __call__(self, call_next):
        def wrapper(ctx):
            self.calls.append(f"{self.name}:before")
            result = call_next(ctx)
            self.calls.append(f"{self.name}:after")
            return result

        return wrapper


class WorkspaceTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write_config(self, name: str, body) -> Path:
        path = self.root / name
        path.write_text(body if isinstance(body, str) else json.dumps(body))
        return path

    def manifest(self, out: Path) -> dict:
        return json.loads((out / "manifest.json").read_text())


class TestVersionString(WorkspaceTestCase):

    def test_version_string(self):
        sha = "0123abcdef0123abcdef0123abcdef0123abcdef"
        case = NamedTuple("Case", [("files", dict), ("expected", str), ("description", str)])
        cases = [
            case(files={}, expected=f"v{__version__}", description="not a checkout"),
            case(files={"HEAD": sha}, expected=f"v{__version__}-g0123abc", description="detached head"),
            case(files={"HEAD": "ref: refs/heads/main", "refs/heads/main": sha},
                 expected=f"v{__version__}-g0123abc", description="branch"),
            case(files={"HEAD": "ref: refs/heads/gone"}, expected=f"v{__version__}", description="dangling ref"),
            case(files={"HEAD": "not-a-sha"}, expected=f"v{__version__}", description="garbage"),
        ]

        for index, _case in enumerate(cases):
            with self.subTest(_case.description):
                root = self.root / str(index)
                for name, content in _case.files.items():
                    path = root / ".git" / name
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_text(content + "\n")
                root.mkdir(exist_ok=True)
                self.assertEqual(version_string(root), _case.expected)


class TestCommandRouter(unittest.TestCase):

    def test_register(self):
        router = CommandRouter()

        @router.command("echo", ECHO_SCHEMA, help="echo a value")
        def echo(ctx):
            return CommandResult()

        self.assertEqual(router.commands, [("echo", echo, ECHO_SCHEMA, None, "echo a value")])

    def test_register_twice(self):
        router = CommandRouter()
        router.command("echo")(lambda ctx: CommandResult())
        with self.assertRaises(AssertionError):
            router.command("echo")(lambda ctx: CommandResult())

    def test_include_commands(self):
        first, second = CommandRouter(), CommandRouter()
        first.command("a")(lambda ctx: CommandResult())
        second.command("a")(lambda ctx: CommandResult())

        with self.assertRaises(AssertionError):
            App(version="v0").include_commands([first, second])

        app = App(version="v0")
        app.include_commands([first])
        with self.assertRaises(AssertionError):
            app.include_commands([first])

    def test_parser_needs_commands(self):
        with self.assertRaises(AssertionError):
            App(version="v0").build_parser()

    def test_context_out(self):
        ctx = CommandContext("echo", ConfigDocument(b"{}"), Path("out"))
        self.assertEqual(ctx.out("a.csv"), Path("out") / "a.csv")


class TestMiddleware(WorkspaceTestCase):

    def test_order(self):
        calls = []
        manager = _MiddlewareManager([RecordingMiddleware("outer", calls), RecordingMiddleware("inner", calls)])

        def handler(ctx):
            calls.append("handler")
            return "done"

        self.assertEqual(manager(handler, MagicMock()), "done")
        self.assertEqual(calls, ["outer:before", "inner:before", "handler", "inner:after", "outer:after"])

    def test_base_middleware(self):
        with self.assertRaises(NotImplementedError):
            BaseCommandMiddleware()(lambda ctx: None)

    def test_timing_records_failures(self):
        ctx = CommandContext("echo", ConfigDocument(b"{}"), self.root)
        handler = MagicMock(side_effect=RuntimeError("boom"))
        with self.assertRaises(RuntimeError):
            TimingMiddleware()(handler)(ctx)
        self.assertGreaterEqual(ctx.meta["elapsed_s"], 0.0)

    def test_manifest_on_success(self):
        ctx = CommandContext("echo", ConfigDocument(b'{"value": 2}', ECHO_SCHEMA), self.root, "v1")
        output = TextOutput("x\n", self.root / "x.csv")

        result = ManifestMiddleware()(lambda c: CommandResult([output], {"answer": 42}))(ctx)

        self.assertEqual(len(result.outputs), 2)
        manifest = json.loads(result.outputs[-1].get_body())
        self.assertEqual(manifest, {
            "command": "echo",
            "version": "v1",
            "status": "ok",
            "config": {"value": 2.0, "seed": 0},
            "seed": 0,
            "summary": {"answer": 42},
            "outputs": ["x.csv"],
        })
        self.assertFalse((self.root / "manifest.json").exists())

    def test_manifest_on_failure(self):
        ctx = CommandContext("echo", ConfigDocument(b'{"value": -1}', ECHO_SCHEMA), self.root, "v1")

        def handler(c):
            raise NormalizationError("nothing to normalize")

        with self.assertRaises(NormalizationError):
            ManifestMiddleware()(handler)(ctx)

        manifest = self.manifest(self.root)
        self.assertEqual(manifest["status"], "failed")
        self.assertEqual(manifest["error"], "nothing to normalize")
        # invalid documents are echoed as parsed
        self.assertEqual(manifest["config"], {"value": -1})

    def test_manifest_on_unexpected_error(self):
        ctx = CommandContext("echo", ConfigDocument(b'not json'), self.root)
        with self.assertRaises(KeyError):
            ManifestMiddleware()(MagicMock(side_effect=KeyError("x")))(ctx)
        manifest = self.manifest(self.root)
        self.assertIsNone(manifest["config"])
        self.assertEqual(manifest["error"], "KeyError: 'x'")


class TestAppRun(WorkspaceTestCase):

    def make_app(self, handler) -> App:
        router = CommandRouter()
        router.command("echo", ECHO_SCHEMA, lambda doc: doc["value"], help="echo")(handler)
        app = App(middlewares=[ManifestMiddleware()], version="v0")
        app.include_commands([router])
        return app

    def run_app(self, handler, config) -> int:
        path = self.write_config("echo.json", config)
        with self.assertLogs("homwb", "DEBUG"):
            return self.make_app(handler).run(["echo", "--config", str(path), "--out", str(self.root / "out"),
                                               "--seed", "5", "--log", "debug"])

    def test_success(self):
        def handler(ctx):
            value = ctx.document.get_config()
            return CommandResult([TextOutput(f"{value}\n", ctx.out("value.txt"))], {"value": value})

        self.assertEqual(self.run_app(handler, {"value": 3}), ExitCode.OK)
        self.assertEqual((self.root / "out" / "value.txt").read_text(), "3.0\n")
        manifest = self.manifest(self.root / "out")
        self.assertEqual(manifest["seed"], 5)
        self.assertEqual(manifest["outputs"], ["value.txt"])

    def test_exit_codes(self):
        def returns_none(ctx):
            return None

        def validates(ctx):
            ctx.document.get_config()
            return CommandResult()

        def explodes(ctx):
            raise ValueError("unexpected")

        case = NamedTuple("Case", [("handler", object), ("config", object), ("exit_code", int), ("description", str)])
        cases = [
            case(handler=returns_none, config={"value": 1}, exit_code=ExitCode.UNHANDLED,
                 description="handler returned no result"),
            case(handler=validates, config={"value": 0}, exit_code=ExitCode.INPUT_ERROR, description="invalid value"),
            case(handler=validates, config="{", exit_code=ExitCode.INPUT_ERROR, description="bad JSON"),
            case(handler=explodes, config={"value": 1}, exit_code=ExitCode.UNHANDLED, description="unhandled error"),
        ]

        for _case in cases:
            with self.subTest(_case.description):
                self.assertEqual(self.run_app(_case.handler, _case.config), _case.exit_code)

    def test_missing_config_file(self):
        handler = MagicMock(return_value=CommandResult())
        missing = self.root / "missing.json"
        with self.assertLogs("homwb", "ERROR"):
            code = self.make_app(handler).run(["echo", "--config", str(missing), "--out", str(self.root / "out")])

        self.assertEqual(code, ExitCode.IO_ERROR)
        handler.assert_not_called()
        manifest = self.manifest(self.root / "out")
        self.assertEqual(manifest["status"], "failed")
        self.assertEqual(manifest["command"], "echo")
        self.assertIsNone(manifest["config"])
        self.assertIn(str(missing), manifest["error"])

    def test_unwritable_output(self):
        blocker = self.root / "blocker"
        blocker.write_text("")
        path = self.write_config("echo.json", {"value": 1})
        app = self.make_app(lambda ctx: CommandResult([TextOutput("x", ctx.out("x.txt"))]))
        with self.assertLogs("homwb", "ERROR"):
            code = app.run(["echo", "--config", str(path), "--out", str(blocker / "out")])
        self.assertEqual(code, ExitCode.IO_ERROR)

    def test_bad_arguments(self):
        app = self.make_app(lambda ctx: CommandResult())
        with self.assertRaises(SystemExit):
            app.run(["echo", "--out", str(self.root)])
        with self.assertRaises(SystemExit):
            app.run(["nope"])


class TestCommands(WorkspaceTestCase):

    def run_main(self, command: str, config, out: str, *flags: str) -> int:
        path = config if isinstance(config, Path) else self.write_config(f"{out}.json", config)
        with self.assertLogs("homwb", "INFO"):
            return main([command, "--config", str(path), "--out", str(self.root / out), "--log", "info", *flags])

    def test_registered_commands(self):
        parser = create_app().build_parser()
        choices = parser._subparsers._group_actions[0].choices
        self.assertEqual(sorted(choices), ["analyze", "entangle", "simulate", "theory"])

    def test_simulate_is_reproducible(self):
        config = {"mode": "cw", "duration_s": 0.5, "seed": 3, "atom": {"rate": 1e4, "g2_zero": 0.119},
                  "ion": {"rate": 400, "g2_zero": 0.05}, "block_duration_s": 0.25}

        self.assertEqual(self.run_main("simulate", config, "first"), ExitCode.OK)
        self.assertEqual(self.run_main("simulate", config, "second", "--threads", "2"), ExitCode.OK)
        self.assertEqual(self.run_main("simulate", config, "third", "--seed", "4"), ExitCode.OK)

        first = (self.root / "first" / "stream.csv").read_bytes()
        self.assertEqual(first, (self.root / "second" / "stream.csv").read_bytes())
        self.assertNotEqual(first, (self.root / "third" / "stream.csv").read_bytes())
        manifest = self.manifest(self.root / "first")
        self.assertEqual(manifest["status"], "ok")
        self.assertEqual(manifest["seed"], 3)
        self.assertEqual(manifest["outputs"], ["stream.csv"])
        self.assertEqual(self.manifest(self.root / "third")["seed"], 4)

    def test_simulate_binary_format(self):
        config = {"mode": "pulsed", "duration_s": 0.002, "atom": {"attempt_probability": 0.2},
                  "ion": {"attempt_probability": 0.1}, "density_dt_ns": 2}
        self.assertEqual(self.run_main("simulate", config, "sim", "--format", "binary"), ExitCode.OK)
        self.assertEqual((self.root / "sim" / "stream.bin").read_bytes()[:4], b"HOMT")
        self.assertEqual(self.manifest(self.root / "sim")["summary"]["stream"], "stream.bin")

    def test_simulate_then_analyze(self):
        config = {"mode": "cw", "duration_s": 1.0, "seed": 8, "atom": {"rate": 1e5, "g2_zero": 0.119},
                  "ion": {"rate": 4000, "g2_zero": 0.05}, "block_duration_s": 0.5}
        self.assertEqual(self.run_main("simulate", config, "sim"), ExitCode.OK)

        analysis = {"mode": "cw", "tau_max_ns": 200, "bin_ns": 1}
        stream = str(self.root / "sim" / "stream.csv")
        self.assertEqual(self.run_main("analyze", analysis, "ana", "--stream", stream, "--bin", "10"), ExitCode.OK)

        report = json.loads((self.root / "ana" / "report.json").read_text())
        self.assertEqual(report["bin_ns"], 10.0)
        self.assertEqual(report["stream"], stream)
        self.assertNotIn("V", report)
        lines = (self.root / "ana" / "g2.csv").read_text().splitlines()
        self.assertEqual(lines[0], "tau_ns,counts,err")
        self.assertEqual(len(lines), 1 + 41)

    def test_simulate_then_analyze_pulsed(self):
        config = {"mode": "pulsed", "duration_s": 0.05, "seed": 12, "atom": {"attempt_probability": 0.3},
                  "ion": {"attempt_probability": 0.2}, "density_dt_ns": 2, "block_duration_s": 0.025}
        self.assertEqual(self.run_main("simulate", config, "sim", "--format", "binary"), ExitCode.OK)

        analysis = {"mode": "pulsed", "tau_max_ns": 500, "background_rate_a": 0, "background_rate_b": 0}
        stream = str(self.root / "sim" / "stream.bin")
        self.assertEqual(self.run_main("analyze", analysis, "ana", "--stream", stream), ExitCode.OK)

        for name in ("g2.csv", "gated.csv", "overlapped.csv", "nonoverlapped.csv", "report.json"):
            with self.subTest(name):
                self.assertTrue((self.root / "ana" / name).is_file())
        lines = (self.root / "ana" / "g2.csv").read_text().splitlines()
        self.assertEqual(lines[0], "tau_ns,counts,err")
        self.assertEqual(len(lines), 1 + 201)
        report = json.loads((self.root / "ana" / "report.json").read_text())
        self.assertEqual(report["mode"], "pulsed")
        self.assertEqual(len(report["g2_zero_bin"]), 2)
        self.assertIn("g2.csv", self.manifest(self.root / "ana")["outputs"])

    def test_analyze_missing_stream(self):
        code = self.run_main("analyze", {"mode": "cw"}, "ana")
        self.assertEqual(code, ExitCode.INPUT_ERROR)
        manifest = self.manifest(self.root / "ana")
        self.assertEqual(manifest["status"], "failed")
        self.assertIn("--stream", manifest["error"])

    def test_analyze_unreadable_stream(self):
        code = self.run_main("analyze", {"mode": "cw"}, "ana", "--stream", str(self.root / "nope.csv"))
        self.assertEqual(code, ExitCode.IO_ERROR)

    def test_theory(self):
        config = {
            "atom": {"decay_ns": 20, "dt_ns": 1},
            "ion": {"decay_ns": 10, "dt_ns": 1},
            "dt_ns": 1,
            "tau_max_ns": 150,
            "compare_ideal": True,
            "counting": {"atom": {"rate": 10000, "g2_zero": 0.119}, "ion": {"rate": 400, "g2_zero": 0.05}},
        }

        self.assertEqual(self.run_main("theory", config, "theory"), ExitCode.OK)

        summary = json.loads((self.root / "theory" / "theory.json").read_text())
        self.assertLess(abs(summary["interfering_at_zero"]), 1e-9 * summary["noninterfering_at_zero"])
        self.assertAlmostEqual(summary["bands"]["expected_visibility"], 0.402, delta=0.001)
        self.assertIn("ideal_dip_fwhm_ns", summary)
        outputs = self.manifest(self.root / "theory")["outputs"]
        self.assertEqual(outputs, ["ideal_interfering.csv", "interfering.csv", "noninterfering.csv", "theory.json"])

    def test_entangle(self):
        config = Path(__file__).resolve().parent.parent / "configs" / "entangle_rates.json"

        self.assertEqual(self.run_main("entangle", config, "table"), ExitCode.OK)

        lines = (self.root / "table" / "entangle.csv").read_text().splitlines()
        self.assertEqual(lines[0], "bin_ns,visibility,fidelity,fidelity_err,rate_current,rate_projected")
        self.assertEqual(len(lines), 4)
        self.assertTrue(lines[1].startswith("5,1,1,0.1,"))
        summary = json.loads((self.root / "table" / "entangle.json").read_text())
        self.assertAlmostEqual(summary["table"][2]["fidelity"], 0.72, places=12)
        self.assertEqual(summary["run_time_s"], 79200.0)

    def test_invalid_config(self):
        code = self.run_main("entangle", {"run_time_h": -1, "rows": []}, "table")
        self.assertEqual(code, ExitCode.INPUT_ERROR)
        self.assertEqual(self.manifest(self.root / "table")["status"], "failed")
        self.assertFalse((self.root / "table" / "entangle.csv").exists())
