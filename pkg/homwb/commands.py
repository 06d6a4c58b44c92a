from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from homwb.config import ConfigDocument, Schema
from homwb.outputs import BaseOutput
from homwb.types import CommandHandlerType, ConfigExtractor

CommandInfo = Tuple[str, CommandHandlerType, Optional[Schema], ConfigExtractor, str]
DecoratorReturn = Callable[[CommandHandlerType], CommandHandlerType]


@dataclass
class CommandContext:
    name: str
    document: Optional[ConfigDocument]
    out_dir: Path
    version: str = ""
    stream: Optional[Path] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def out(self, name: str) -> Path:
        return self.out_dir / name


@dataclass
class CommandResult:
    """
    Files a command produces plus the summary echoed into its manifest.
    Nothing is written until the whole result exists.
    """
    outputs: List[BaseOutput] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


class CommandRouter:

    __slots__ = ["commands"]

    def __init__(self):
        self.commands: List[CommandInfo] = []

    def command(
            self,
            name: str,
            schema: Optional[Schema] = None,
            extractor: ConfigExtractor = None,
            help: str = "",
    ) -> DecoratorReturn:
        def wrap(handler: CommandHandlerType) -> CommandHandlerType:
            assert all(info[0] != name for info in self.commands), f"command '{name}' registered twice"
            self.commands.append((name, handler, schema, extractor, help))
            return handler
        return wrap
