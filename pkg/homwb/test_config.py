import tempfile
import unittest
from pathlib import Path
from typing import Any, NamedTuple, Optional

from homwb.config import (
    ConfigDocument,
    Field,
    FRACTION,
    POSITIVE,
    one_of,
    require_keys,
    validate_mapping,
)
from homwb.exceptions import ConfigError, OutputError

DETECTOR = {
    "efficiency": Field(float, required=False, default=1.0, check=FRACTION),
    "dead_time": Field(float, required=False, default=0.0),
}

SCHEMA = {
    "mode": Field(str, check=one_of("cw", "pulsed")),
    "duration": Field(float, check=POSITIVE),
    "seed": Field(int, required=False, default=0),
    "detectors": Field(dict, required=False, default={}, schema=DETECTOR),
    "windows": Field(list, required=False, default=[], item=Field(float, check=POSITIVE)),
    "verbose": Field(bool, required=False, default=False),
}


class TestField(unittest.TestCase):

    def test_validate(self):
        case = NamedTuple("Case", [("field", Field), ("value", Any), ("expected", Any), ("description", str)])
        cases = [
            case(field=Field(float), value=2, expected=2.0, description="int accepted as float"),
            case(field=Field(float), value=2.5, expected=2.5, description="float"),
            case(field=Field(int, required=False), value=None, expected=None, description="optional None"),
            case(field=Field(bool), value=True, expected=True, description="bool"),
            case(field=Field((int, str)), value="x", expected="x", description="tuple of kinds"),
        ]

        for _case in cases:
            with self.subTest(_case.description):
                value = _case.field.validate(_case.value, "key")
                self.assertEqual(value, _case.expected)
                self.assertEqual(type(value), type(_case.expected))

    def test_validate_errors(self):
        case = NamedTuple("Case", [("field", Field), ("value", Any), ("message", str), ("description", str)])
        cases = [
            case(field=Field(float), value="1", message="key: expected float, got str", description="string"),
            case(field=Field(float), value=True, message="key: expected float, got bool", description="bool as float"),
            case(field=Field(int), value=1.0, message="key: expected int, got float", description="float as int"),
            case(field=Field(int), value=None, message="key: expected int, got NoneType", description="required None"),
            case(field=Field(float, check=POSITIVE), value=0, message="key: must be > 0, got 0.0",
                 description="failed check"),
            case(field=Field(str, check=one_of("cw", "pulsed")), value="ac",
                 message="key: must be one of ['cw', 'pulsed'], got 'ac'", description="not a choice"),
        ]

        for _case in cases:
            with self.subTest(_case.description):
                with self.assertRaises(ConfigError) as context:
                    _case.field.validate(_case.value, "key")
                self.assertEqual(context.exception.message, _case.message)

    def test_default_with_required(self):
        with self.assertRaises(AssertionError):
            Field(float, required=True, default=1.0)


class TestValidateMapping(unittest.TestCase):

    def test_defaults_applied(self):
        result = validate_mapping({"mode": "cw", "duration": 3}, SCHEMA)
        self.assertEqual(result, {
            "mode": "cw",
            "duration": 3.0,
            "seed": 0,
            "detectors": {"efficiency": 1.0, "dead_time": 0.0},
            "windows": [],
            "verbose": False,
        })

    def test_defaults_are_copies(self):
        first = validate_mapping({"mode": "cw", "duration": 1}, SCHEMA)
        first["windows"].append(1.0)
        second = validate_mapping({"mode": "cw", "duration": 1}, SCHEMA)
        self.assertEqual(second["windows"], [])

    def test_nested_values(self):
        result = validate_mapping(
            {"mode": "pulsed", "duration": 1, "detectors": {"efficiency": 0.5}, "windows": [1, 2.5]}, SCHEMA
        )
        self.assertEqual(result["detectors"], {"efficiency": 0.5, "dead_time": 0.0})
        self.assertEqual(result["windows"], [1.0, 2.5])

    def test_errors(self):
        case = NamedTuple("Case", [("document", Any), ("message", str), ("description", str)])
        cases = [
            case(document=[], message="<root>: expected an object, got list", description="not an object"),
            case(document={"mode": "cw", "duration": 1, "extra": 1, "another": 2},
                 message="<root>: unknown key(s) ['another', 'extra']", description="unknown keys"),
            case(document={"mode": "cw"}, message="duration: required field missing", description="missing"),
            case(document={"mode": "cw", "duration": 1, "detectors": {"efficiency": 2}},
                 message="detectors.efficiency: must be in [0, 1], got 2.0", description="nested check"),
            case(document={"mode": "cw", "duration": 1, "detectors": {"gain": 2}},
                 message="detectors: unknown key(s) ['gain']", description="nested unknown key"),
            case(document={"mode": "cw", "duration": 1, "windows": [1, -1]},
                 message="windows[1]: must be > 0, got -1.0", description="list item"),
        ]

        for _case in cases:
            with self.subTest(_case.description):
                with self.assertRaises(ConfigError) as context:
                    validate_mapping(_case.document, SCHEMA)
                self.assertEqual(context.exception.message, _case.message)

    def test_require_keys(self):
        require_keys({"a": 1, "b": 0}, ["a", "b"], "section")
        with self.assertRaises(ConfigError) as context:
            require_keys({"a": 1, "b": None}, ["a", "b", "c"], "section")
        self.assertEqual(context.exception.message, "section: required field(s) missing ['b', 'c']")


class TestConfigDocument(unittest.TestCase):

    def test_get_json(self):
        case = NamedTuple("Case", [("raw", bytes), ("expected", Any), ("description", str)])
        cases = [
            case(raw=b'{"mode": "cw"}', expected={"mode": "cw"}, description="object"),
            case(raw=b'', expected={}, description="empty document"),
            case(raw=b'  \n', expected={}, description="whitespace only"),
        ]

        for _case in cases:
            with self.subTest(_case.description):
                self.assertEqual(ConfigDocument(_case.raw).get_json(), _case.expected)

    def test_get_json_errors(self):
        case = NamedTuple("Case", [("raw", bytes), ("message", str), ("description", str)])
        cases = [
            case(raw=b'{"mode": cw}', message="<memory>: line 1 column 10: Expecting value", description="bad JSON"),
            case(raw=b'[1, 2]', message="<memory>: top level must be a JSON object", description="list"),
            case(raw=b'\xff{}', message="<memory>: not UTF-8 (invalid start byte at byte 0)", description="binary"),
        ]

        for _case in cases:
            with self.subTest(_case.description):
                with self.assertRaises(ConfigError) as context:
                    ConfigDocument(_case.raw).get_json()
                self.assertEqual(context.exception.message, _case.message)

    def test_get_json_cached(self):
        document = ConfigDocument(b'{"mode": "cw"}')
        self.assertIs(document.get_json(), document.get_json())

    def test_overrides(self):
        document = ConfigDocument(b'{"mode": "cw", "duration": 2, "seed": 4}', SCHEMA)
        document.override("seed", 9)
        document.override("duration", None)

        validated = document.get_validated()

        self.assertEqual(validated["seed"], 9)
        self.assertEqual(validated["duration"], 2.0)
        self.assertEqual(document.get_json()["seed"], 4)

    def test_without_schema(self):
        document = ConfigDocument(b'{"anything": [1]}')
        self.assertEqual(document.get_validated(), {"anything": [1]})

    def test_get_config(self):
        def extractor(document: dict) -> str:
            return f"{document['mode']}:{document['duration']}"

        case = NamedTuple("Case", [("extractor", Optional[Any]), ("expected", Any), ("description", str)])
        cases = [
            case(extractor=None, expected=None, description="no extractor"),
            case(extractor=extractor, expected="pulsed:0.5", description="extractor"),
        ]

        for _case in cases:
            with self.subTest(_case.description):
                document = ConfigDocument(b'{"mode": "pulsed", "duration": 0.5}', SCHEMA, _case.extractor)
                self.assertEqual(document.get_config(), _case.expected)

    def test_get_config_invalid(self):
        document = ConfigDocument(b'{"mode": "ac", "duration": 1}', SCHEMA, lambda document: document)
        with self.assertRaises(ConfigError):
            document.get_config()

    def test_from_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.json"
            path.write_bytes(b'{"mode": "cw", "duration": 1}')

            document = ConfigDocument.from_path(path, SCHEMA)

            self.assertEqual(document.source, str(path))
            self.assertEqual(document.get_validated()["mode"], "cw")
            with self.assertRaises(OutputError):
                ConfigDocument.from_path(Path(tmp) / "missing.json")

    def test_raw_must_be_bytes(self):
        with self.assertRaises(AssertionError):
            ConfigDocument('{"mode": "cw"}')
