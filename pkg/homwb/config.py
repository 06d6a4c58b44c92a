import copy
import json
from pathlib import Path
from typing import Any, Callable, Dict, Generic, Optional, Sequence, Tuple, Type, Union

from homwb.exceptions import ConfigError, OutputError
from homwb.types import CONFIG_TYPE, ConfigExtractor

Check = Tuple[Callable[[Any], bool], str]

POSITIVE: Check = (lambda v: v > 0, "must be > 0")
NON_NEGATIVE: Check = (lambda v: v >= 0, "must be >= 0")
FRACTION: Check = (lambda v: 0 <= v <= 1, "must be in [0, 1]")
OPEN_FRACTION: Check = (lambda v: 0 < v < 1, "must be in (0, 1)")
HALF_OPEN_FRACTION: Check = (lambda v: 0 <= v < 1, "must be in [0, 1)")
UINT64: Check = (lambda v: 0 <= v < 2 ** 64, "must be an unsigned 64-bit integer")


def one_of(*choices: str) -> Check:
    return (lambda v: v in choices, f"must be one of {list(choices)}")


_MISSING = object()


class Field:
    """
    One entry of a config schema. `kind` is the accepted python type (float
    also accepts int, never bool); `schema` describes a nested object and
    `item` the elements of a list.
    """

    __slots__ = ["kind", "required", "default", "check", "schema", "item"]

    def __init__(
            self,
            kind: Union[Type, Tuple[Type, ...]],
            required: bool = True,
            default: Any = _MISSING,
            check: Optional[Check] = None,
            schema: Optional['Schema'] = None,
            item: Optional['Field'] = None,
    ):
        assert default is _MISSING or not required, "a field with a default cannot be required"
        self.kind = kind
        self.required = required
        self.default = default
        self.check = check
        self.schema = schema
        self.item = item

    def _type_ok(self, value: Any) -> bool:
        if isinstance(value, bool):
            return self.kind is bool
        if self.kind is float:
            return isinstance(value, (int, float))
        return isinstance(value, self.kind)

    def validate(self, value: Any, path: str) -> Any:
        if value is None and not self.required:
            return None
        if not self._type_ok(value):
            expected = getattr(self.kind, "__name__", str(self.kind))
            raise ConfigError(f"{path}: expected {expected}, got {type(value).__name__}")
        if self.kind is float:
            value = float(value)
        if self.schema is not None:
            value = validate_mapping(value, self.schema, path)
        if self.item is not None:
            value = [self.item.validate(element, f"{path}[{index}]") for index, element in enumerate(value)]
        if self.check is not None:
            predicate, message = self.check
            if not predicate(value):
                raise ConfigError(f"{path}: {message}, got {value!r}")
        return value


Schema = Dict[str, Field]


def validate_mapping(document: Any, schema: Schema, path: str = "") -> Dict[str, Any]:
    """
    Validates `document` against `schema`, applies defaults and returns a new
    dict. Unknown keys are rejected.
    """
    where = path or "<root>"
    if not isinstance(document, dict):
        raise ConfigError(f"{where}: expected an object, got {type(document).__name__}")

    unknown = sorted(set(document) - set(schema))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")

    result = {}
    for key, field in schema.items():
        dotted = f"{path}.{key}" if path else key
        if key not in document:
            if field.required:
                raise ConfigError(f"{dotted}: required field missing")
            default = None if field.default is _MISSING else copy.deepcopy(field.default)
            result[key] = field.validate(default, dotted) if isinstance(default, dict) else default
            continue
        result[key] = field.validate(document[key], dotted)
    return result


class ConfigDocument(Generic[CONFIG_TYPE]):
    """
    Raw JSON config bytes plus the schema and extractor registered for the
    command that reads them.
    """

    def __init__(
            self,
            raw: bytes,
            schema: Optional[Schema] = None,
            extractor: ConfigExtractor = None,
            source: str = "<memory>",
    ):
        assert isinstance(raw, (bytes, bytearray)), "raw must be bytes"
        self._raw = bytes(raw)
        self._schema = schema
        self._extractor = extractor
        self._source = source
        self._json: Optional[Dict[str, Any]] = None
        self._overrides: Dict[str, Any] = {}

    @classmethod
    def from_path(cls, path: Union[str, Path], schema: Optional[Schema] = None,
                  extractor: ConfigExtractor = None) -> 'ConfigDocument':
        try:
            raw = Path(path).read_bytes()
        except OSError as e:
            raise OutputError(f"cannot read config {path}: {e.strerror or e}")
        return cls(raw, schema, extractor, str(path))

    @property
    def source(self) -> str:
        return self._source

    def get_json(self) -> Dict[str, Any]:
        """
        Parsed document, without schema checks or defaults.
        """
        if self._json is not None:
            return self._json
        try:
            text = self._raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ConfigError(f"{self._source}: not UTF-8 ({e.reason} at byte {e.start})")
        try:
            parsed = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError(f"{self._source}: line {e.lineno} column {e.colno}: {e.msg}")
        if not isinstance(parsed, dict):
            raise ConfigError(f"{self._source}: top level must be a JSON object")
        self._json = parsed
        return parsed

    def override(self, key: str, value: Any) -> None:
        """
        Replaces a top-level value before validation (CLI flags). None is
        ignored so unset flags never clobber the document.
        """
        if value is not None:
            self._overrides[key] = value

    def get_validated(self) -> Dict[str, Any]:
        document = {**self.get_json(), **self._overrides}
        if self._schema is None:
            return document
        return validate_mapping(document, self._schema)

    def get_config(self) -> Optional[CONFIG_TYPE]:
        """
        Runs the registered extractor over the validated document. Returns
        None when no extractor is registered.
        """
        if self._extractor is None:
            return None
        return self._extractor(self.get_validated())


def require_keys(document: Dict[str, Any], keys: Sequence[str], path: str) -> None:
    missing = [key for key in keys if document.get(key) is None]
    if missing:
        raise ConfigError(f"{path}: required field(s) missing {missing}")
