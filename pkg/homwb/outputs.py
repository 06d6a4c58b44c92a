import json
from enum import Enum
from pathlib import Path
from typing import Any, List, Optional, Sequence, Union

import numpy as np

from homwb.exceptions import OutputError
from homwb.logger import logger

FLOAT_FORMAT = "%.12g"


class BaseOutput:
    """
    A file the run produces. Subclasses render `body` to bytes in get_body();
    write() puts them on disk. Rendering never touches the filesystem, so a
    command can build every output first and write only once all succeeded.
    """

    def __init__(self, body: Any, path: Union[str, Path], encode: str = "utf-8"):
        assert isinstance(path, (str, Path)), "path must be a str or Path"
        assert isinstance(encode, str), "encode must be a string"

        self._body = body
        self._path = Path(path)
        self._encode = encode

    def __repr__(self):
        return f"<{type(self).__name__} path={self._path}>"

    def get_path(self) -> Path:
        return self._path

    def get_body(self) -> bytes:
        raise NotImplementedError("get_body method is not implemented yet")

    def write(self) -> int:
        body = self.get_body()
        try:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._path.write_bytes(body)
        except OSError as e:
            raise OutputError(f"cannot write {self._path}: {e.strerror or e}")
        logger.debug(f"wrote {len(body)} bytes to {self._path}")
        return len(body)


class TextOutput(BaseOutput):
    def get_body(self) -> bytes:
        if not self._body:
            return b""
        return self._body.encode(self._encode)


class BinaryOutput(BaseOutput):
    def get_body(self) -> bytes:
        assert isinstance(self._body, (bytes, bytearray)), "binary output body must be bytes"
        return bytes(self._body)


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


class CsvOutput(BaseOutput):
    """
    Body is a list of equally long columns; header names them. LF endings.
    """

    def __init__(self, header: Sequence[str], columns: Sequence[Sequence[Any]], path: Union[str, Path],
                 encode: str = "utf-8"):
        assert len(header) == len(columns), "header and columns must have the same length"
        lengths = {len(column) for column in columns}
        assert len(lengths) <= 1, "all columns must have the same length"
        super().__init__(columns, path, encode)
        self._header = list(header)

    def get_body(self) -> bytes:
        lines = [",".join(self._header)]
        for row in zip(*self._body):
            lines.append(",".join(format_cell(value) for value in row))
        return ("\n".join(lines) + "\n").encode(self._encode)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def to_json_text(body: Any) -> str:
    return json.dumps(body, sort_keys=True, indent=2, default=_json_default, allow_nan=True) + "\n"


class JsonOutput(BaseOutput):
    def get_body(self) -> bytes:
        return to_json_text(self._body).encode(self._encode)


def write_all(outputs: List[BaseOutput]) -> List[Path]:
    """
    Renders every output before writing any of them.
    """
    rendered = [(output, output.get_body()) for output in outputs]
    for output, body in rendered:
        BinaryOutput(body, output.get_path()).write()
    return [output.get_path() for output, _ in rendered]


def manifest_output(out_dir: Union[str, Path], body: dict, name: Optional[str] = None) -> JsonOutput:
    return JsonOutput(body, Path(out_dir) / (name or "manifest.json"))
