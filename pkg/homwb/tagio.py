"""
TagStream files.

CSV: header `channel,timestamp_ps`, one `A|B|CLK,<int>` row per tag, LF.
Binary: magic `HOMT`, little-endian u64 record count, then packed records of
u8 channel + u64 timestamp (ps).
"""
from pathlib import Path
from typing import Union

import numpy as np

from homwb.exceptions import InputError, OutputError, StreamFormatError
from homwb.montecarlo import TagStream
from homwb.outputs import BaseOutput, BinaryOutput, TextOutput
from homwb.types import Channel, StreamFormat

CSV_HEADER = "channel,timestamp_ps"
MAGIC = b"HOMT"
RECORD_DTYPE = np.dtype([("channel", "<u1"), ("timestamp", "<u8")])
_COUNT_DTYPE = np.dtype("<u8")
_LABELS = np.array([c.name for c in sorted(Channel)])


def stream_to_csv(stream: TagStream) -> str:
    labels = _LABELS[stream.channels]
    rows = [CSV_HEADER]
    rows += [f"{label},{stamp}" for label, stamp in zip(labels.tolist(), stream.timestamps.tolist())]
    return "\n".join(rows) + "\n"


def stream_from_csv(text: str) -> TagStream:
    lines = text.split("\n")
    if not lines or lines[0].strip() != CSV_HEADER:
        raise StreamFormatError(1, f"expected header '{CSV_HEADER}'")

    channels = np.empty(len(lines), dtype=np.uint8)
    stamps = np.empty(len(lines), dtype=np.int64)
    n = 0
    last = None
    for number, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        label, sep, value = line.partition(",")
        if not sep or "," in value:
            raise StreamFormatError(number, "expected 'channel,timestamp_ps'")
        try:
            channel = Channel.from_label(label)
        except KeyError:
            raise StreamFormatError(number, f"unknown channel '{label}'")
        try:
            stamp = int(value)
        except ValueError:
            raise StreamFormatError(number, f"timestamp '{value}' is not an integer")
        if stamp < 0:
            raise StreamFormatError(number, "negative timestamp")
        if last is not None and stamp < last:
            raise StreamFormatError(number, "timestamps must be nondecreasing")
        channels[n] = channel
        stamps[n] = stamp
        last = stamp
        n += 1
    return TagStream(channels[:n].copy(), stamps[:n].copy())


def stream_to_bytes(stream: TagStream) -> bytes:
    records = np.empty(len(stream), dtype=RECORD_DTYPE)
    records["channel"] = stream.channels
    records["timestamp"] = stream.timestamps.astype(np.uint64)
    return MAGIC + np.array([len(stream)], dtype=_COUNT_DTYPE).tobytes() + records.tobytes()


def stream_from_bytes(data: bytes) -> TagStream:
    header = len(MAGIC) + _COUNT_DTYPE.itemsize
    if len(data) < header or data[:len(MAGIC)] != MAGIC:
        raise InputError("binary stream: missing HOMT header")
    count = int(np.frombuffer(data, dtype=_COUNT_DTYPE, count=1, offset=len(MAGIC))[0])
    expected = header + count * RECORD_DTYPE.itemsize
    if len(data) != expected:
        raise InputError(f"binary stream: header declares {count} records, file holds {len(data) - header} bytes")
    records = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=header)

    channels = records["channel"].astype(np.uint8)
    bad = np.flatnonzero(channels > max(Channel))
    if bad.size:
        raise InputError(f"binary stream: record {bad[0]} has unknown channel {channels[bad[0]]}")
    stamps = records["timestamp"]
    if count and stamps.max() > np.iinfo(np.int64).max:
        raise InputError("binary stream: timestamp overflows int64")
    stamps = stamps.astype(np.int64)
    unordered = np.flatnonzero(np.diff(stamps) < 0)
    if unordered.size:
        raise InputError(f"binary stream: record {unordered[0] + 1} goes back in time")
    return TagStream(channels, stamps)


def read_stream(path: Union[str, Path]) -> TagStream:
    """
    Reads either format; binary files are recognized by their magic.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise OutputError(f"cannot read stream {path}: {e.strerror or e}")
    if data.startswith(MAGIC):
        return stream_from_bytes(data)
    try:
        return stream_from_csv(data.decode("utf-8"))
    except UnicodeDecodeError:
        raise InputError(f"{path}: neither a HOMT binary stream nor UTF-8 CSV")


def stream_output(stream: TagStream, path: Union[str, Path], fmt: StreamFormat = StreamFormat.CSV) -> BaseOutput:
    if fmt is StreamFormat.BINARY:
        return BinaryOutput(stream_to_bytes(stream), path)
    return TextOutput(stream_to_csv(stream), path)


def stream_filename(fmt: StreamFormat) -> str:
    return "stream.bin" if fmt is StreamFormat.BINARY else "stream.csv"
