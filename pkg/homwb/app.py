import argparse
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from homwb import __version__
from homwb.commands import CommandContext, CommandInfo, CommandResult, CommandRouter
from homwb.config import ConfigDocument
from homwb.exceptions import HomError
from homwb.logger import configure_logging, logger
from homwb.middleware import BaseCommandMiddleware, _MiddlewareManager
from homwb.outputs import write_all
from homwb.types import CommandHandlerType, ExitCode

# flags copied into the config document before validation, when the command's schema has them
_OVERRIDES = {"seed": "seed", "threads": "threads", "format": "format", "bin": "bin_ns"}


def _load_document(args: argparse.Namespace, schema, extractor) -> ConfigDocument:
    document = ConfigDocument.from_path(args.config, schema, extractor)
    for flag, key in _OVERRIDES.items():
        if schema is not None and key in schema:
            document.override(key, getattr(args, flag))
    if args.stream is not None and schema is not None and "stream" in schema:
        document.override("stream", str(args.stream))
    return document


def _with_document(handler: CommandHandlerType, args: argparse.Namespace, schema, extractor) -> CommandHandlerType:
    """
    Reads the config as the innermost step, so the middlewares also see a
    config that cannot be read.
    """
    def load_and_run(ctx: CommandContext):
        ctx.document = _load_document(args, schema, extractor)
        return handler(ctx)

    return load_and_run


def version_string(root: Optional[Path] = None) -> str:
    """
    v<version>-g<sha7> inside a git checkout, else v<version>.
    """
    root = Path(__file__).resolve().parent.parent if root is None else root
    base = f"v{__version__}"
    try:
        head = (root / ".git" / "HEAD").read_text().strip()
        if head.startswith("ref:"):
            head = (root / ".git" / head.split(None, 1)[1]).read_text().strip()
    except OSError:
        return base
    if len(head) < 7 or any(ch not in "0123456789abcdef" for ch in head[:7]):
        return base
    return f"{base}-g{head[:7]}"


class App:

    def __init__(self, middlewares: Optional[List[BaseCommandMiddleware]] = None, version: Optional[str] = None):
        self._commands: Optional[Dict[str, CommandInfo]] = None
        if not middlewares:
            middlewares = []
        self._middleware_manager = _MiddlewareManager(middlewares)
        self._version = version_string() if version is None else version

    def include_commands(self, routers: List[CommandRouter]) -> None:
        """
        Registers every command of every router. Call it once at startup.

        e.g:
        router = CommandRouter()
        @router.command("theory", THEORY_SCHEMA, theory_settings)
        def cmd_theory(ctx):
            ...

        app = App()
        app.include_commands([router])
        """
        assert self._commands is None, "include_commands method can be called only once"

        self._commands = {}
        for router in routers:
            for info in router.commands:
                assert info[0] not in self._commands, f"command '{info[0]}' registered twice"
                self._commands[info[0]] = info

    def build_parser(self) -> argparse.ArgumentParser:
        assert self._commands is not None, "include_commands must be called first"
        parser = argparse.ArgumentParser(prog="homwb", description="HOM interference workbench")
        parser.add_argument("--version", action="version", version=self._version)
        sub = parser.add_subparsers(dest="command", required=True)
        for name, _, _, _, help_text in sorted(self._commands.values(), key=lambda info: info[0]):
            command = sub.add_parser(name, help=help_text, description=help_text)
            command.add_argument("--config", required=True, type=Path, help="JSON config document")
            command.add_argument("--out", required=True, type=Path, help="output directory")
            command.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
            command.add_argument("--threads", type=int, help="worker threads")
            command.add_argument("--format", choices=["csv", "binary"], help="stream file format")
            command.add_argument("--stream", type=Path, help="time-tag stream to analyze")
            command.add_argument("--bin", type=float, help="coincidence bin width (ns)")
            command.add_argument("--log", help="debug|info|warning|error (default: $HOMWB_LOG or warning)")
        return parser

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        args = self.build_parser().parse_args(argv)
        try:
            configure_logging(args.log)
            name, handler, schema, extractor, _ = self._commands[args.command]
            ctx = CommandContext(name, None, args.out, self._version, args.stream)
            result = self._middleware_manager(_with_document(handler, args, schema, extractor), ctx)
            if not isinstance(result, CommandResult):
                logger.error(f"command '{name}' returned {type(result).__name__}, expected CommandResult")
                return ExitCode.UNHANDLED

            written = write_all(result.outputs)
            logger.info(f"{name}: wrote {len(written)} file(s) to {args.out}")
            return ExitCode.OK

        except HomError as e:
            logger.error(e.message)
            return e.exit_code

        except Exception as e:
            logger.error(f"Unhandled error in command {args.command}: {e}", exc_info=True)
            return ExitCode.UNHANDLED
