import time
from abc import ABC
from typing import Any, Dict, List, Optional, Union

from homwb.commands import CommandContext, CommandResult
from homwb.exceptions import HomError, OutputError
from homwb.logger import logger
from homwb.outputs import manifest_output
from homwb.types import CommandHandlerType


class BaseCommandMiddleware(ABC):
    """
    Base class for middlewares wrapped around every command handler.

    e.g:
    def __call__(self, call_next):
        def wrapper(ctx):
            # do something...
            return call_next(ctx)

        return wrapper
    """

    def __call__(self, call_next: Union['BaseCommandMiddleware', CommandHandlerType]) -> CommandHandlerType:
        raise NotImplementedError("__call__ method is not implemented yet")


class TimingMiddleware(BaseCommandMiddleware):

    def __call__(self, call_next):
        def wrapper(ctx: CommandContext):
            started = time.perf_counter()
            try:
                return call_next(ctx)
            finally:
                elapsed = time.perf_counter() - started
                ctx.meta["elapsed_s"] = elapsed
                logger.info(f"{ctx.name} finished in {elapsed:.2f} s")

        return wrapper


def _config_echo(ctx: CommandContext) -> Optional[Dict[str, Any]]:
    if ctx.document is None:
        return None
    try:
        return ctx.document.get_validated()
    except HomError:
        pass
    try:
        return ctx.document.get_json()
    except HomError:
        return None


class ManifestMiddleware(BaseCommandMiddleware):
    """
    Adds manifest.json to a successful result. A failed command still gets
    its manifest, written right away with status "failed", before the error
    propagates.
    """

    def __call__(self, call_next):
        def wrapper(ctx: CommandContext):
            try:
                result = call_next(ctx)
            except Exception as e:
                body = self._body(ctx, _config_echo(ctx), "failed")
                body["error"] = e.message if isinstance(e, HomError) else f"{type(e).__name__}: {e}"
                try:
                    manifest_output(ctx.out_dir, body).write()
                except OutputError as write_error:
                    logger.warning(f"could not write failure manifest: {write_error.message}")
                raise
            if isinstance(result, CommandResult):
                config = _config_echo(ctx)
                body = self._body(ctx, config, "ok")
                body["summary"] = result.summary
                body["outputs"] = sorted(output.get_path().name for output in result.outputs)
                result.outputs.append(manifest_output(ctx.out_dir, body))
            return result

        return wrapper

    @staticmethod
    def _body(ctx: CommandContext, config: Optional[Dict[str, Any]], status: str) -> Dict[str, Any]:
        return {
            "command": ctx.name,
            "version": ctx.version,
            "status": status,
            "config": config,
            "seed": (config or {}).get("seed"),
        }


class _MiddlewareManager:

    def __init__(self, middlewares: List[BaseCommandMiddleware]):
        self.stack = middlewares

    def wrap(self, handler: CommandHandlerType, ctx: CommandContext):
        current_handler = handler

        for middleware in reversed(self.stack):
            current_handler = middleware(current_handler)

        return current_handler(ctx)

    def __call__(self, handler, ctx):
        return self.wrap(handler, ctx)
