# Writers and readers for the three files the device produces per recording session: 16-bit mono WAV audio, the
# vibration CSV, and the label CSV. Every writer streams to a binary file object, so the simulator can write
# straight onto its SD card model.

import io
import logging
import math
import struct

import numpy as np

import pyautolabel
from pyautolabel import (
    EVENT_KINDS,
    AUDIO_RATE,
    PCM_SCALE,
    LabelRecord,
    VibrationFrame,
    FormatException,
    PyAutoLabelException,
    formatRtc,
    parseRtc,
    _raiseFormatException,
    _csvRows,
    _csvText,
)

log = logging.getLogger(__name__)

_RIFF_HEADER = struct.Struct("<4sI4s")
_CHUNK_HEADER = struct.Struct("<4sI")
_FMT_BODY = struct.Struct("<HHIIHH")
_PCM = 1

VIBRATION_HEADER = "timestamp,ax,ay,az"
LABEL_HEADER = "timestamp,label"


def quantizeAudio(samples):
    """
    Returns an int16 array for float samples in [-1, 1]: values are clipped, scaled by ``PCM_SCALE``, and rounded
    half away from zero.
    """
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * PCM_SCALE
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int16)


def _asInt16(samples):
    arr = np.asarray(samples)
    if arr.size == 0:
        return np.zeros(0, dtype="<i2")
    if arr.dtype.kind not in "iu":
        raise PyAutoLabelException("WAV samples must be integers, not %s (use quantizeAudio() first)" % (arr.dtype,))
    if arr.min() < -32768 or arr.max() > 32767:
        raise PyAutoLabelException("WAV samples must be in the 16-bit range [-32768, 32767]")
    return arr.astype("<i2")


class WavWriter(object):
    """
    Streams 16-bit mono PCM samples into a RIFF/WAVE file object. A header with zero sizes is written first and
    back-patched by ``finalize()``, so the file object must be seekable.
    """

    def __init__(self, fileObj, rate=AUDIO_RATE):
        if not rate > 0:
            raise PyAutoLabelException("WAV sample rate must be greater than 0, not %r" % (rate,))
        self.fileObj = fileObj
        self.rate = int(rate)
        self.sampleCount = 0
        self._start = fileObj.tell()
        fileObj.write(self._header(0))

    def _header(self, dataBytes):
        channels, bytesPerSample = 1, 2
        return (
            _RIFF_HEADER.pack(b"RIFF", 36 + dataBytes, b"WAVE")
            + _CHUNK_HEADER.pack(b"fmt ", _FMT_BODY.size)
            + _FMT_BODY.pack(_PCM, channels, self.rate, self.rate * channels * bytesPerSample,
                             channels * bytesPerSample, 8 * bytesPerSample)
            + _CHUNK_HEADER.pack(b"data", dataBytes)
        )

    def writeSamples(self, samples):
        data = _asInt16(samples)
        self.fileObj.write(data.tobytes())
        self.sampleCount += int(data.size)

    def finalize(self):
        end = self.fileObj.tell()
        self.fileObj.seek(self._start)
        self.fileObj.write(self._header(2 * self.sampleCount))
        self.fileObj.seek(end)

    def close(self):
        self.finalize()
        self.fileObj.close()


def writeWav(samples, rate=AUDIO_RATE):
    """Returns the bytes of a 16-bit mono WAV file holding the integer ``samples``."""
    buf = io.BytesIO()
    writer = WavWriter(buf, rate)
    writer.writeSamples(samples)
    writer.finalize()
    return buf.getvalue()


@_raiseFormatException("WAV file")
def readWav(data):
    """
    Returns ``(samples, rate)`` for the bytes of a 16-bit mono PCM WAV file, with samples as an int16 array.

    Raises:
      FormatException: If a chunk is malformed or truncated. The message names the chunk.
    """
    data = bytes(data)
    if len(data) < _RIFF_HEADER.size:
        raise FormatException("Malformed WAV: RIFF chunk is truncated (%d bytes)" % (len(data),))
    riff, riffSize, wave = _RIFF_HEADER.unpack_from(data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise FormatException("Malformed WAV: RIFF chunk has id %r and form %r" % (riff, wave))
    rate, samples = None, None
    offset = _RIFF_HEADER.size
    while offset + _CHUNK_HEADER.size <= len(data):
        chunkId, size = _CHUNK_HEADER.unpack_from(data, offset)
        body = offset + _CHUNK_HEADER.size
        name = chunkId.decode("ascii", "replace").strip()
        if body + size > len(data):
            raise FormatException("Malformed WAV: %s chunk is truncated (needs %d bytes, %d present)"
                                  % (name, size, len(data) - body))
        if chunkId == b"fmt ":
            if size < _FMT_BODY.size:
                raise FormatException("Malformed WAV: fmt chunk is only %d bytes" % (size,))
            formatTag, channels, rate, byteRate, blockAlign, bits = _FMT_BODY.unpack_from(data, body)
            if formatTag != _PCM or channels != 1 or bits != 16:
                raise FormatException("Malformed WAV: fmt chunk describes format %d, %d channel(s), %d bits; only "
                                      "16-bit mono PCM is supported" % (formatTag, channels, bits))
            if byteRate != rate * 2 or blockAlign != 2:
                raise FormatException("Malformed WAV: fmt chunk byte rate %d doesn't match sample rate %d"
                                      % (byteRate, rate))
        elif chunkId == b"data":
            if rate is None:
                raise FormatException("Malformed WAV: data chunk comes before the fmt chunk")
            if size % 2:
                raise FormatException("Malformed WAV: data chunk has an odd size %d" % (size,))
            samples = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body).astype(np.int16)
        offset = body + size + (size % 2)

    if rate is None:
        raise FormatException("Malformed WAV: fmt chunk is missing")
    if samples is None:
        raise FormatException("Malformed WAV: data chunk is missing")
    if riffSize + 8 != len(data):
        raise FormatException("Malformed WAV: RIFF chunk size %d doesn't match the %d bytes present"
                              % (riffSize + 8, len(data)))
    return samples, rate


def _formatValue(value):
    if math.isnan(value):
        return ""
    return "%.*g" % (pyautolabel.CSV_SIGNIFICANT_DIGITS, value)


class VibrationCsvWriter(object):
    """
    Streams rows of ``timestamp,ax,ay,az`` to a binary file object. Timestamps are written with microsecond
    precision and accelerations with ``CSV_SIGNIFICANT_DIGITS`` significant digits. NaN values become empty cells.
    """

    def __init__(self, fileObj):
        self.fileObj = fileObj
        self.rowCount = 0
        self.fileObj.write(_csvText([VIBRATION_HEADER.split(",")]).encode("ascii"))

    def writeRows(self, timestamps, ax, ay, az):
        timestamps, ax, ay, az = (np.asarray(v, dtype=np.float64) for v in (timestamps, ax, ay, az))
        if not (timestamps.shape == ax.shape == ay.shape == az.shape) or timestamps.ndim != 1:
            raise PyAutoLabelException("timestamps, ax, ay and az must be 1-D sequences of the same length")
        rows = [
            ("%.6f" % t, _formatValue(x), _formatValue(y), _formatValue(z))
            for t, x, y, z in zip(timestamps.tolist(), ax.tolist(), ay.tolist(), az.tolist())
        ]
        self.fileObj.write(_csvText(rows).encode("ascii"))
        self.rowCount += len(rows)

    def close(self):
        self.fileObj.close()


def writeVibrationCsv(timestamps, ax, ay, az):
    """Returns the text of a vibration CSV file for aligned timestamp and x/y/z sequences."""
    buf = io.BytesIO()
    VibrationCsvWriter(buf).writeRows(timestamps, ax, ay, az)
    return buf.getvalue().decode("ascii")


def _parseCell(cell, row, column, allowMissing=True):
    cell = cell.strip()
    if cell == "":
        if not allowMissing:
            raise FormatException("Invalid vibration CSV at row %d: %s is empty" % (row, column))
        return pyautolabel.MISSING
    try:
        value = float(cell)
    except ValueError:
        raise FormatException("Invalid vibration CSV at row %d: could not parse %s value %r" % (row, column, cell))
    if not math.isfinite(value):
        raise FormatException("Invalid vibration CSV at row %d: %s value %r is not finite" % (row, column, cell))
    return value


def readVibrationCsv(text):
    """
    Returns a ``VibrationFrame`` of float arrays for the text of a vibration CSV file. Empty cells come back as NaN
    (``MISSING``), never as zero. Rows are numbered from 1 after the header.

    Raises:
      FormatException: For a bad header, a ragged row, an unparseable number, or a timestamp that goes backwards.
    """
    columns = ([], [], [], [])
    previous = -math.inf
    for row, cells in _csvRows(text, VIBRATION_HEADER, "vibration CSV"):
        if len(cells) != 4:
            raise FormatException("Invalid vibration CSV at row %d: expected 4 cells, found %d" % (row, len(cells)))
        t = _parseCell(cells[0], row, "timestamp", allowMissing=False)
        if t < previous:
            raise FormatException("Invalid vibration CSV at row %d: timestamp %r is earlier than the row above"
                                  % (row, cells[0]))
        previous = t
        columns[0].append(t)
        for i, name in enumerate(("ax", "ay", "az"), start=1):
            columns[i].append(_parseCell(cells[i], row, name))
    return VibrationFrame(*(np.array(c, dtype=np.float64) for c in columns))


class LabelCsvWriter(object):
    """Streams ``timestamp,label`` rows to a binary file object."""

    def __init__(self, fileObj):
        self.fileObj = fileObj
        self.rowCount = 0
        self.fileObj.write(_csvText([LABEL_HEADER.split(",")]).encode("ascii"))

    def writeLabel(self, label):
        if label.kind not in EVENT_KINDS:
            raise PyAutoLabelException("label kind must be one of %s, not %r" % (", ".join(EVENT_KINDS), label.kind))
        self.fileObj.write(_csvText([(formatRtc(label.timestamp), label.kind)]).encode("ascii"))
        self.rowCount += 1

    def close(self):
        self.fileObj.close()


def writeLabelCsv(labels):
    """Returns the text of a label CSV file for a sequence of ``LabelRecord`` objects."""
    buf = io.BytesIO()
    writer = LabelCsvWriter(buf)
    for label in labels:
        writer.writeLabel(label)
    return buf.getvalue().decode("ascii")


def readLabelCsv(text):
    """
    Returns a list of ``LabelRecord`` objects for the text of a label CSV file.

    Raises:
      FormatException: For a bad header, an unparseable timestamp, or a label outside the valid set (the message
      lists the valid labels).
    """
    labels = []
    for row, cells in _csvRows(text, LABEL_HEADER, "label CSV"):
        cells = [c.strip() for c in cells]
        if len(cells) != 2:
            raise FormatException("Invalid label CSV at row %d: expected 2 cells, found %d" % (row, len(cells)))
        if cells[1] not in EVENT_KINDS:
            raise FormatException("Invalid label CSV at row %d: unknown label %r, valid labels are %s"
                                  % (row, cells[1], ", ".join(EVENT_KINDS)))
        try:
            stamp = parseRtc(cells[0])
        except FormatException as excObj:
            raise FormatException("Invalid label CSV at row %d: %s" % (row, excObj))
        labels.append(LabelRecord(stamp, cells[1]))
    return labels
