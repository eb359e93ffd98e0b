# PyAutoLabel simulates an autonomous sensor-logging device that labels its own recordings, and runs the
# validation pipeline (preprocessing, CNN training, cross-validated evaluation) over what the device recorded.
# https://github.com/pyautolabel/pyautolabel


__version__ = "0.1.0"

import collections
import csv
import datetime
import functools
import io
import logging
import platform
import sys
import struct

import numpy as np


class PyAutoLabelException(Exception):
    """
    PyAutoLabel code will raise this exception class for any invalid actions. If PyAutoLabel raises some other
    exception, you should assume that this is caused by a bug in PyAutoLabel itself. (Including a failure to catch
    potential exceptions raised by numpy or the standard library.)
    """

    pass


class ConfigurationException(PyAutoLabelException):
    """
    Raised when a configuration value is invalid, when a config file can't be parsed, or when a scenario can't be
    built from the requested event counts (for example, the events don't fit in the scenario length with the
    required gaps between them).
    """

    pass


class SimulationFaultException(PyAutoLabelException):
    """
    Raised by the logger simulation when the simulated device hits a fault. The run report of the simulator that
    raised it lists the fault as well.
    """

    pass


class BufferOverrunException(SimulationFaultException):
    """
    Raised when the sampling task needs to write into a ping-pong buffer that is still being transferred by DMA.
    This happens when the storage writer is slower than the data acquisition.
    """

    def __init__(self, message, channel=None, sampleIndex=None, time=None):
        super(BufferOverrunException, self).__init__(message)
        self.channel = channel
        self.sampleIndex = sampleIndex
        self.time = time


class StorageFaultException(SimulationFaultException):
    """
    Raised when the simulated SD card is asked to hold more files open at once than the file system supports.
    """

    pass


class FormatException(PyAutoLabelException):
    """
    Raised when a WAV file, CSV file, scenario file or feature bundle can't be parsed. The message names the chunk,
    row, line or file that was at fault.
    """

    pass


class ShapeException(PyAutoLabelException):
    """
    Raised by the numerical core when an array doesn't have the shape a layer expects.
    """

    pass


class NonFiniteException(PyAutoLabelException):
    """
    Raised when NaN or infinite values show up where they aren't allowed: audio input, gradients, losses.
    """

    pass


class DatasetException(PyAutoLabelException):
    """
    Raised when a dataset operation (padding, imputation, splitting, oversampling, normalization) can't be carried
    out on the data it was given.
    """

    pass


# Event kinds. These strings are also the labels written to the label CSV files.
DOOR_OPEN = "door_open"
DOOR_CLOSE = "door_close"
WATER_BOILED = "water_boiled"
EVENT_KINDS = (DOOR_OPEN, DOOR_CLOSE, WATER_BOILED)  # The index in this tuple is the class id.
NUM_CLASSES = len(EVENT_KINDS)

# Channel ids for sample streams:
AUDIO = "audio"
VIB_X = "vib_x"
VIB_Y = "vib_y"
VIB_Z = "vib_z"
CURRENT = "current"
REED = "reed"
VIBRATION = "vibration"  # Key for the three vibration axes, taken together.
CHANNEL_IDS = (AUDIO, VIB_X, VIB_Y, VIB_Z, CURRENT, REED)

# Where an event flag came from:
EDGE_INTERRUPT = "edge_interrupt"
ADC_THRESHOLD = "adc_threshold"

# Reed switch edges:
RISING = "rising"
FALLING = "falling"

# Default sampling rates, in Hz:
AUDIO_RATE = 16000
VIBRATION_RATE = 4000
CURRENT_RATE = 1000

# Full-scale value of 16-bit PCM audio. Float samples in [-1, 1] map onto [-PCM_SCALE, PCM_SCALE].
PCM_SCALE = 32767.0

# White background noise level of the synthesized feature sensors, in dB relative to full scale.
BACKGROUND_DBFS = -40.0

# A door that is pushed open and swings shut again holds the reed closed for this many seconds. It's shorter than
# the firmware's reed debounce, so the swing's falling edge never raises a flag.
DOOR_SWING_DWELL = 0.02

# The FatFs configuration on the device supports up to four files open at once.
MAX_OPEN_FILES = 4

# Fraction of the raw SPI byte rate (clock / 8) that's left for payload after protocol overhead.
WRITER_EFFICIENCY = 0.8

# Acceleration values are printed to the vibration CSV with this many significant digits:
CSV_SIGNIFICANT_DIGITS = 6

# Missing cells in a vibration CSV are read back as this value, never as zero.
MISSING = float("nan")

# If True, the numerical functions decorated with _checkFinite raise NonFiniteException when they get NaN or
# infinite array arguments. Set this to False to skip the check in tight loops.
CHECK_FINITE = True

# Where the RTC of the simulated device starts counting, unless the logger config says otherwise.
RTC_START = "2024-05-01T10:00:00Z"

# Version of the model checkpoint format written by EventCNN.saveCheckpoint():
CHECKPOINT_VERSION = 1


EventSpec = collections.namedtuple("EventSpec", "kind onset duration")
Scenario = collections.namedtuple("Scenario", "seed length events classCounts")
SampleStream = collections.namedtuple("SampleStream", "channelId rate samples t0")

ScenarioConfig = collections.namedtuple(
    "ScenarioConfig",
    "length doorOpenCount doorCloseCount waterBoiledCount postEventWindow minGap doorOpenDuration "
    "doorCloseDuration boilDuration heatUpDuration kettleCurrent audioRate vibRate currentRate vibrationDropout "
    "backgroundDbfs",
    defaults=(
        4 * 3600.0,  # length, in seconds
        40,  # doorOpenCount
        29,  # doorCloseCount
        37,  # waterBoiledCount
        1.0,  # postEventWindow
        None,  # minGap (None means twice the post-event window)
        0.3,  # doorOpenDuration
        0.8,  # doorCloseDuration
        5.0,  # boilDuration
        30.0,  # heatUpDuration
        8.7,  # kettleCurrent, in amperes
        AUDIO_RATE,
        VIBRATION_RATE,
        CURRENT_RATE,
        0.001,  # vibrationDropout
        BACKGROUND_DBFS,
    ),
)

LoggerConfig = collections.namedtuple(
    "LoggerConfig",
    "audioRate vibRate bufferCapacity vibBufferCapacity adcPollPeriod postEventWindow spiClock currentThreshold "
    "reedDebounce maxOpenFiles writerEfficiency rtcStart",
    defaults=(
        AUDIO_RATE,
        VIBRATION_RATE,
        1024,  # bufferCapacity, audio samples per ping/pong buffer
        256,  # vibBufferCapacity, vibration frames (x, y, z) per ping/pong buffer
        0.01,  # adcPollPeriod
        1.0,  # postEventWindow
        50e6,  # spiClock
        0.0,  # currentThreshold
        0.05,  # reedDebounce
        MAX_OPEN_FILES,
        WRITER_EFFICIENCY,
        RTC_START,
    ),
)

EventFlag = collections.namedtuple("EventFlag", "kind raisedAt source")
LabelRecord = collections.namedtuple("LabelRecord", "timestamp kind")
SessionArtifacts = collections.namedtuple(
    "SessionArtifacts", "index audioFile vibrationFile labelFile start end labels audioSpan vibrationSpan"
)
DmaRequest = collections.namedtuple("DmaRequest", "channelId bufferIndex start count nbytes time samples")
DmaCompletion = collections.namedtuple("DmaCompletion", "request time")
VibrationFrame = collections.namedtuple("VibrationFrame", "timestamps ax ay az")

MelConfig = collections.namedtuple(
    "MelConfig", "nMels nFft hopLength topDb fMin fMax", defaults=(64, 1024, 512, 80.0, 0.0, None)
)
FeatureTensor = collections.namedtuple("FeatureTensor", "data labels provenance")
SplitPlan = collections.namedtuple("SplitPlan", "train validation test folds classCounts seed")

TrainConfig = collections.namedtuple(
    "TrainConfig",
    "epochs runs batchSize lr beta1 beta2 eps stepSize gamma patience bnMomentum bnEps layerOrder oversampleEval "
    "workers dtype",
    defaults=(50, 10, 16, 0.001, 0.9, 0.98, 1e-9, 3, 0.5, 10, 0.1, 1e-5, "relu_bn", False, 1, "float32"),
)
RunRecord = collections.namedtuple(
    "RunRecord", "fold run seed accuracy epochsTrained stoppedEarly failed confusion"
)
FoldReport = collections.namedtuple("FoldReport", "fold accuracies minimum median maximum confusion runs failedRuns")

PipelineConfig = collections.namedtuple("PipelineConfig", "paths scenario logger mel train seed")


def _normalizeKind(kind):
    """
    Returns one of ``DOOR_OPEN``, ``DOOR_CLOSE``, or ``WATER_BOILED`` for the ``kind`` argument, which can be one of
    those strings, a class id ``0``, ``1``, or ``2``, or a CamelCase name like ``'DoorOpen'``.

    Raises:
      PyAutoLabelException: If kind isn't one of the three event kinds.
    """
    if isinstance(kind, (int, np.integer)) and not isinstance(kind, bool):
        if 0 <= kind < NUM_CLASSES:
            return EVENT_KINDS[kind]
    elif isinstance(kind, str):
        lowered = kind.strip().lower()
        if lowered in EVENT_KINDS:
            return lowered
        compact = {k.replace("_", ""): k for k in EVENT_KINDS}
        if lowered in compact:
            return compact[lowered]  # 'DoorOpen' and 'dooropen' map to 'door_open'
    raise PyAutoLabelException(
        "kind argument must be one of ('door_open', 'door_close', 'water_boiled', 0, 1, 2), not %r" % (kind,)
    )


def kindToClassId(kind):
    """Returns the class id (0, 1, or 2) of an event kind."""
    return EVENT_KINDS.index(_normalizeKind(kind))


def classIdToKind(classId):
    """Returns the event kind string for a class id."""
    return _normalizeKind(int(classId))


def parseRtc(text):
    """
    Returns a timezone-aware UTC ``datetime`` for an ISO-8601 timestamp string such as
    ``'2024-05-01T10:00:03Z'`` or ``'2024-05-01T10:00:03.125000Z'``.

    Raises:
      FormatException: If the string isn't a timestamp.
    """
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        stamp = datetime.datetime.fromisoformat(text)
    except ValueError:
        raise FormatException("Invalid timestamp: %r is not an ISO-8601 time" % (text,))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=datetime.timezone.utc)
    return stamp.astimezone(datetime.timezone.utc)


def formatRtc(stamp):
    """
    Returns the ISO-8601 string for a UTC ``datetime``, with a ``Z`` suffix. Fractional seconds are only written
    when they aren't zero.
    """
    stamp = stamp.astimezone(datetime.timezone.utc)
    if stamp.microsecond:
        return stamp.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")


def _checkFinite(wrappedFunction):
    """
    A decorator that raises ``NonFiniteException`` if any numpy array argument of the decorated function holds NaN
    or infinite values. The check is skipped while ``CHECK_FINITE`` is False.
    """

    @functools.wraps(wrappedFunction)
    def wrapper(*args, **kwargs):
        if CHECK_FINITE:
            for arg in list(args) + list(kwargs.values()):
                if isinstance(arg, np.ndarray) and arg.dtype.kind in "fc" and not np.all(np.isfinite(arg)):
                    raise NonFiniteException("%s() was passed an array with NaN or infinite values" % (
                        wrappedFunction.__name__,
                    ))
        return wrappedFunction(*args, **kwargs)

    return wrapper


def _raiseFormatException(what):
    """
    A decorator factory for parsers. Low-level errors (``struct.error``, ``csv.Error``, ``ValueError``,
    ``UnicodeDecodeError``, ``IndexError``) raised inside the decorated parser are turned into PyAutoLabel's
    ``FormatException``, so callers only ever see PyAutoLabel's own exceptions.
    """

    def decorator(wrappedFunction):
        @functools.wraps(wrappedFunction)
        def wrapper(*args, **kwargs):
            try:
                return wrappedFunction(*args, **kwargs)
            except PyAutoLabelException:
                raise
            except (ValueError, IndexError, UnicodeDecodeError, struct.error, csv.Error) as excObj:
                raise FormatException("Malformed %s: %s" % (what, excObj))

        return wrapper

    return decorator


def _csvText(rows):
    """Returns the CSV text for ``rows`` (sequences of already formatted cells), one ``\\n``-terminated line each."""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _csvRows(text, header, what):
    """
    Returns ``(rowNumber, cells)`` pairs for the data rows of the CSV ``text``, after checking that its first row is
    ``header`` (a comma-separated string). Row 0 is the header. Blank rows are skipped.

    Raises:
      FormatException: For non-ASCII bytes, a reader error, or a bad header. The message names ``what`` and the row.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("ascii")
        except UnicodeDecodeError as excObj:
            raise FormatException("Invalid %s: not ASCII text (%s)" % (what, excObj))
    rows = []
    try:
        for cells in csv.reader(io.StringIO(text, newline="")):
            rows.append(cells)
    except csv.Error as excObj:
        raise FormatException("Invalid %s at row %d: %s" % (what, len(rows), excObj))
    if not rows or [cell.strip() for cell in rows[0]] != header.split(","):
        raise FormatException("Invalid %s at row 0: expected header %r" % (what, header))
    return [(number, cells) for number, cells in enumerate(rows[1:], start=1) if any(c.strip() for c in cells)]


log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


from ._pyautolabel_scenario import (
    buildScenario,
    checkScenarioConfig,
    synthFeatureStreams,
    synthLabelingStreams,
    formatScenario,
    parseScenario,
    writeScenarioFile,
    readScenarioFile,
    doorIntervals,
    kettleIntervals,
)
from ._pyautolabel_storage import (
    quantizeAudio,
    WavWriter,
    writeWav,
    readWav,
    VibrationCsvWriter,
    writeVibrationCsv,
    readVibrationCsv,
    LabelCsvWriter,
    writeLabelCsv,
    readLabelCsv,
)
from ._pyautolabel_logger import (
    checkLoggerConfig,
    writerThroughput,
    acquisitionByteRate,
    onReedEdge,
    pollAdc,
    PingPongBuffer,
    pingpongPush,
    DmaEngine,
    dmaTransfer,
    SdCard,
    Simulator,
    runSimulation,
)
from ._pyautolabel_preprocess import (
    checkMelConfig,
    padToMax,
    imputeMissing,
    melFilterbank,
    melPowerSpectrogram,
    melSpectrogram,
    splitDataset,
    oversample,
    fitNormalization,
    normalize,
    loadSessionRecordings,
    extractAudioFeatures,
    extractVibrationFeatures,
    saveFeatureBundle,
    loadFeatureBundle,
)
from ._pyautolabel_nn import (
    conv1dForward,
    conv1dBackward,
    batchnormForward,
    batchnormBackward,
    relu,
    reluBackward,
    adaptiveAvgPool,
    adaptiveAvgPoolBackward,
    linear,
    linearBackward,
    softmax,
    crossEntropy,
    adamInit,
    adamStep,
    stepLr,
    EventCNN,
)
from ._pyautolabel_train import (
    checkTrainConfig,
    confusion,
    accuracy,
    lowerMedian,
    trainRun,
    runExperiment,
    summarize,
    formatResultsCsv,
    parseResultsCsv,
    formatConfusionCsv,
    parseConfusionCsv,
    aggregateRuns,
    formatConfusionMatrix,
)
from ._pyautolabel_cli import (
    defaultConfig,
    parseConfigText,
    loadConfig,
    checkPipelineConfig,
    formatManifest,
    parseManifest,
    loadSplitPlan,
    cmdSimulate,
    cmdPreprocess,
    cmdTrain,
    cmdEvaluate,
    cmdReport,
    main,
)


try:
    from ._pyautolabel_plot import plotFoldAccuracies, plotConfusionMatrix, plotMelSpectrogram
except ImportError:
    # If matplotlib is not found, the plotting functions will not be available.
    def _couldNotImportMatplotlib(*unused_args, **unused_kwargs):
        """
        This function raises ``PyAutoLabelException``. It's used for the plotting function names if the matplotlib
        module failed to be imported.
        """
        raise PyAutoLabelException(
            "PyAutoLabel was unable to import matplotlib. Please install this module to enable the function you tried to call."
        )

    plotFoldAccuracies = plotConfusionMatrix = plotMelSpectrogram = _couldNotImportMatplotlib


def printInfo(dontPrint=False):
    msg = '''
           Platform: {}
     Python Version: {}
PyAutoLabel Version: {}
      Numpy Version: {}
         Executable: {}
          Timestamp: {}'''.format(
        *getInfo()
    )
    if not dontPrint:
        print(msg)
    return msg


def getInfo():
    return (platform.platform(), sys.version, __version__, np.__version__, sys.executable, datetime.datetime.now())
