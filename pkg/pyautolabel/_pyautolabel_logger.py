# Discrete-event model of the logging device's firmware: sampling into ping-pong buffers, DMA transfers to the SD
# card through one shared writer, reed switch interrupts, periodic current polling, and the recording sessions
# that event flags open and close.

import collections
import datetime
import heapq
import io
import itertools
import json
import logging
import math

import numpy as np

import pyautolabel
from pyautolabel import (
    DOOR_OPEN,
    DOOR_CLOSE,
    WATER_BOILED,
    EVENT_KINDS,
    AUDIO,
    VIBRATION,
    CURRENT,
    REED,
    EDGE_INTERRUPT,
    ADC_THRESHOLD,
    RISING,
    FALLING,
    LoggerConfig,
    EventFlag,
    LabelRecord,
    SessionArtifacts,
    DmaRequest,
    DmaCompletion,
    PyAutoLabelException,
    ConfigurationException,
    BufferOverrunException,
    StorageFaultException,
    parseRtc,
)
from ._pyautolabel_storage import quantizeAudio, WavWriter, VibrationCsvWriter, LabelCsvWriter

log = logging.getLogger(__name__)

# Ties in virtual time go to the lowest number: an interrupt service routine runs before anything else, and a DMA
# completion frees its buffer before the sampling task looks at it.
_INTERRUPT = 0
_DMA_COMPLETE = 1
_SAMPLING = 2
_ADC_POLL = 3

_AUDIO_BYTES_PER_FRAME = 2
_VIBRATION_BYTES_PER_FRAME = 6  # x, y, z as 16-bit readings

# Absorbs float error when a poll time like 0.07 lands on a sample boundary.
_POLL_EPSILON = 1e-6


def writerThroughput(config):
    """Returns the modeled SD writer payload throughput in bytes per second: ``spiClock / 8 * writerEfficiency``."""
    return config.spiClock / 8.0 * config.writerEfficiency


def acquisitionByteRate(config):
    """Returns the bytes per second that the microphone and the three accelerometer axes produce together."""
    return config.audioRate * _AUDIO_BYTES_PER_FRAME + config.vibRate * _VIBRATION_BYTES_PER_FRAME


def checkLoggerConfig(config, strictThroughput=True):
    """
    Raises ``ConfigurationException`` if the ``LoggerConfig`` has invalid values. Returns the config.

    If ``strictThroughput`` is True, the raw SPI byte rate (``spiClock / 8``) must also exceed the acquisition byte
    rate. The simulator itself skips that check so that writer overruns can be provoked on purpose.
    """
    for name in ("bufferCapacity", "vibBufferCapacity", "maxOpenFiles"):
        value = getattr(config, name)
        if not isinstance(value, (int, np.integer)) or value <= 0:
            raise ConfigurationException("%s must be a positive integer, not %r" % (name, value))
    for name in ("audioRate", "vibRate", "adcPollPeriod", "spiClock"):
        if not getattr(config, name) > 0:
            raise ConfigurationException("%s must be greater than 0, not %r" % (name, getattr(config, name)))
    if config.postEventWindow < 0 or config.reedDebounce < 0:
        raise ConfigurationException("postEventWindow and reedDebounce must be >= 0")
    if not 0 < config.writerEfficiency <= 1:
        raise ConfigurationException("writerEfficiency must be in (0, 1], not %r" % (config.writerEfficiency,))
    try:
        parseRtc(config.rtcStart)
    except PyAutoLabelException:
        raise ConfigurationException("rtcStart %r is not an ISO-8601 time" % (config.rtcStart,))
    if strictThroughput and not config.spiClock / 8.0 > acquisitionByteRate(config):
        raise ConfigurationException(
            "spiClock %s gives %.0f bytes/s, which doesn't exceed the acquisition rate of %.0f bytes/s"
            % (config.spiClock, config.spiClock / 8.0, acquisitionByteRate(config))
        )
    return config


def onReedEdge(edge, t):
    """
    Returns the ``EventFlag`` that the reed switch interrupt raises: a rising edge is a DoorOpen and a falling edge
    is a DoorClose.
    """
    if edge == RISING:
        return EventFlag(DOOR_OPEN, t, EDGE_INTERRUPT)
    elif edge == FALLING:
        return EventFlag(DOOR_CLOSE, t, EDGE_INTERRUPT)
    raise PyAutoLabelException("edge argument must be RISING or FALLING, not %r" % (edge,))


def pollAdc(window, threshold=0.0, t=0.0):
    """
    Returns a WaterBoiled ``EventFlag`` if the latest current reading in ``window`` is at or below ``threshold``
    while the reading before it was above, otherwise None. ``window`` holds the most recent readings, oldest first.
    """
    if len(window) < 2:
        return None
    if window[-2] > threshold and window[-1] <= threshold:
        return EventFlag(WATER_BOILED, t, ADC_THRESHOLD)
    return None


class PingPongBuffer(object):
    """
    Two fixed-capacity buffers for one channel. Samples go into the active buffer. When it fills up the buffers
    swap and a ``DmaRequest`` for the full one is returned. A buffer stays busy until ``release()`` is called for
    it, and writing into a busy buffer raises ``BufferOverrunException``.
    """

    def __init__(self, capacity, channelId=AUDIO, bytesPerFrame=_AUDIO_BYTES_PER_FRAME):
        if not isinstance(capacity, (int, np.integer)) or capacity <= 0:
            raise ConfigurationException("capacity must be a positive integer, not %r" % (capacity,))
        self.capacity = int(capacity)
        self.channelId = channelId
        self.bytesPerFrame = bytesPerFrame
        self.active = 0
        self.fillLevel = 0
        self.busy = [False, False]
        self.busyUntil = [None, None]
        self.startIndex = 0  # Stream index of the active buffer's first sample.
        self.highWater = 0  # Most buffers busy at the same time.
        self._data = [[], []]

    def _overrun(self, t):
        index = self.startIndex + self.fillLevel
        raise BufferOverrunException(
            "Buffer overrun on %s at sample %d: buffer %d is still being transferred by DMA"
            % (self.channelId, index, self.active),
            channel=self.channelId,
            sampleIndex=index,
            time=t,
        )

    def push(self, sample, t=None):
        if self.busy[self.active]:
            self._overrun(t)
        self._data[self.active].append(sample)
        self.fillLevel += 1
        if self.fillLevel == self.capacity:
            return self._swap(t, tuple(self._data[self.active]))
        return None

    def fill(self, t=None):
        """
        Marks the rest of the active buffer as filled and swaps, returning the ``DmaRequest``. The request carries
        the sample index span but not the sample values, which the simulator reads from the stream.
        """
        if self.busy[self.active]:
            self._overrun(t)
        self.fillLevel = self.capacity
        return self._swap(t, None)

    def _swap(self, t, samples):
        filled = self.active
        request = DmaRequest(self.channelId, filled, self.startIndex, self.capacity,
                             self.capacity * self.bytesPerFrame, t, samples)
        self.busy[filled] = True
        self.highWater = max(self.highWater, sum(self.busy))
        self.active = 1 - filled
        self.fillLevel = 0
        self.startIndex += self.capacity
        self._data[self.active] = []
        return request

    def release(self, bufferIndex):
        self.busy[bufferIndex] = False
        self.busyUntil[bufferIndex] = None


def pingpongPush(buffer, sample, t=None):
    """Pushes one sample into a ``PingPongBuffer``. Returns a ``DmaRequest`` when a buffer filled up, else None."""
    return buffer.push(sample, t)


class DmaEngine(object):
    """
    The SD writer, shared by every channel. Requests are served first-come first-served: a transfer starts when
    both the request has been made and the writer has finished the transfer before it.
    """

    def __init__(self, throughput):
        if not throughput > 0:
            raise ConfigurationException("throughput must be greater than 0, not %r" % (throughput,))
        self.throughput = float(throughput)
        self.freeAt = 0.0
        self.queueHighWater = 0
        self.bytesTransferred = 0
        self.transfers = 0
        self._outstanding = collections.deque()

    def submit(self, request):
        requestTime = request.time if request.time is not None else 0.0
        completion = max(requestTime, self.freeAt) + request.nbytes / self.throughput
        self.freeAt = completion
        while self._outstanding and self._outstanding[0] <= requestTime:
            self._outstanding.popleft()
        self._outstanding.append(completion)
        self.queueHighWater = max(self.queueHighWater, len(self._outstanding))
        self.bytesTransferred += request.nbytes
        self.transfers += 1
        return DmaCompletion(request, completion)


def dmaTransfer(request, storage):
    """Hands a ``DmaRequest`` to the ``DmaEngine`` ``storage`` and returns its ``DmaCompletion``."""
    return storage.submit(request)


class _SdFile(io.BytesIO):
    def __init__(self, card, name):
        super(_SdFile, self).__init__()
        self._card = card
        self.name = name

    def close(self):
        if not self.closed and self._card.openFiles.get(self.name) is self:
            self._card._fileClosed(self)
        super(_SdFile, self).close()


class SdCard(object):
    """
    In-memory model of the SD card's file system. ``open()`` returns a writable binary file object, and the card
    refuses to hold more than ``maxOpenFiles`` open at once. Closed files are kept in ``files`` by name.
    """

    def __init__(self, maxOpenFiles=None):
        self.maxOpenFiles = pyautolabel.MAX_OPEN_FILES if maxOpenFiles is None else maxOpenFiles
        self.files = collections.OrderedDict()
        self.openFiles = collections.OrderedDict()
        self.maxOpenObserved = 0

    def open(self, name):
        if name in self.openFiles:
            raise StorageFaultException("File %s is already open" % (name,))
        if len(self.openFiles) >= self.maxOpenFiles:
            raise StorageFaultException(
                "Can't open %s: %d files are already open and the limit is %d"
                % (name, len(self.openFiles), self.maxOpenFiles)
            )
        fileObj = _SdFile(self, name)
        self.openFiles[name] = fileObj
        self.maxOpenObserved = max(self.maxOpenObserved, len(self.openFiles))
        return fileObj

    def _fileClosed(self, fileObj):
        self.files[fileObj.name] = fileObj.getvalue()
        del self.openFiles[fileObj.name]


class _Channel(object):
    def __init__(self, name, rate, length, buffer, readers):
        self.name = name
        self.rate = rate
        self.length = length
        self.buffer = buffer
        self.readers = readers

    def timeOf(self, index):
        return index / float(self.rate)


class _Session(object):
    def __init__(self, index, sim):
        self.index = index
        self.sim = sim
        self.labels = []
        self.deadline = None
        self.spans = {}
        stem = "session_%04d" % (index,)
        self.audioFile = stem + ".wav"
        self.vibrationFile = stem + "_vibration.csv" if sim.vibration is not None else None
        self.labelFile = stem + "_labels.csv"
        self.wav = WavWriter(sim.sdCard.open(self.audioFile), sim.audio.rate)
        self.vib = None
        if self.vibrationFile is not None:
            self.vib = VibrationCsvWriter(sim.sdCard.open(self.vibrationFile))
        self.labelWriter = LabelCsvWriter(sim.sdCard.open(self.labelFile))

    def append(self, channel, start, stop):
        if channel.name in self.spans:
            first, last = self.spans[channel.name]
            assert start == last, "session chunks of %s aren't contiguous" % (channel.name,)
            self.spans[channel.name] = (first, stop)
        else:
            first = start
            self.spans[channel.name] = (start, stop)
        if channel is self.sim.audio:
            self.wav.writeSamples(quantizeAudio(channel.readers[0][start:stop]))
        else:
            timestamps = (np.arange(start, stop) - first) / float(channel.rate)
            self.vib.writeRows(timestamps, *(reader[start:stop] for reader in channel.readers))

    def label(self, flag):
        record = LabelRecord(self.sim.rtcStart + datetime.timedelta(seconds=flag.raisedAt), flag.kind)
        self.labelWriter.writeLabel(record)
        self.labels.append(record)

    def complete(self):
        for channel in self.sim.channels:
            if channel.name not in self.spans or channel.timeOf(self.spans[channel.name][1]) < self.deadline:
                return False
        return True

    def close(self):
        self.wav.close()
        if self.vib is not None:
            self.vib.close()
        self.labelWriter.close()
        times = [(channel.timeOf(self.spans[channel.name][0]), channel.timeOf(self.spans[channel.name][1]))
                 for channel in self.sim.channels if channel.name in self.spans]
        return SessionArtifacts(
            index=self.index,
            audioFile=self.audioFile,
            vibrationFile=self.vibrationFile,
            labelFile=self.labelFile,
            start=min(a for a, b in times),
            end=max(b for a, b in times),
            labels=tuple(self.labels),
            audioSpan=self.spans.get(AUDIO),
            vibrationSpan=self.spans.get(VIBRATION),
        )


class Simulator(object):
    """
    Runs the firmware main loop in virtual time over a dict of sample streams: ``AUDIO`` is required, ``VIBRATION``
    (a tuple of x, y, z streams), ``REED`` and ``CURRENT`` are optional.

    Full buffers are transferred to the ``SdCard`` through a shared ``DmaEngine``. Event flags are only looked at
    right after a DMA transfer completes. A flag opens a recording session holding each channel's most recent chunk,
    writes its label, and keeps the session open until every channel has recorded ``postEventWindow`` seconds past
    that checkpoint. Chunks outside of sessions are dropped.

    Session start and end times in the returned ``SessionArtifacts`` are seconds from the start of the streams.
    """

    def __init__(self, streams, config=None, sdCard=None):
        if config is None:
            config = LoggerConfig()
        self.config = checkLoggerConfig(config, strictThroughput=False)
        self.sdCard = sdCard if sdCard is not None else SdCard(config.maxOpenFiles)
        self.dma = DmaEngine(writerThroughput(config))
        self.rtcStart = parseRtc(config.rtcStart)
        self.sessions = []
        self.faults = []
        self.flagCount = 0
        self.ignoredEdges = 0
        self.unconsumedFlags = 0
        self.now = 0.0

        audio = streams.get(AUDIO)
        if audio is None:
            raise ConfigurationException("the audio stream is required")
        if audio.rate != config.audioRate:
            raise ConfigurationException("audio stream rate %s doesn't match audioRate %s"
                                         % (audio.rate, config.audioRate))
        self.t0 = audio.t0
        self.audio = _Channel(AUDIO, audio.rate, len(audio.samples),
                              PingPongBuffer(config.bufferCapacity, AUDIO, _AUDIO_BYTES_PER_FRAME), [audio.samples])
        self.channels = [self.audio]
        self.vibration = None
        axes = streams.get(VIBRATION)
        if axes is not None:
            if len(axes) != 3:
                raise ConfigurationException("the vibration stream needs 3 axes, not %d" % (len(axes),))
            lengths = set(len(axis.samples) for axis in axes)
            if len(lengths) != 1 or any(axis.rate != config.vibRate for axis in axes):
                raise ConfigurationException("vibration axes must have equal lengths and the rate vibRate")
            self.vibration = _Channel(
                VIBRATION, config.vibRate, lengths.pop(),
                PingPongBuffer(config.vibBufferCapacity, VIBRATION, _VIBRATION_BYTES_PER_FRAME),
                [axis.samples for axis in axes],
            )
            self.channels.append(self.vibration)
        self.reed = streams.get(REED)
        self.current = streams.get(CURRENT)

        self._queue = []
        self._seq = itertools.count()
        self._pendingFlags = []
        self._staged = {}
        self._session = None
        self._lastEdgeAt = -math.inf
        self._lastReading = None
        self._nextBuffer = {}

    def _schedule(self, t, priority, kind, payload=None):
        heapq.heappush(self._queue, (t, priority, next(self._seq), kind, payload))

    def _reedEdges(self):
        samples = self.reed.samples
        if hasattr(samples, "transitions"):
            transitions = samples.transitions()
        else:
            levels = np.asarray(samples, dtype=np.float64)
            changes = np.flatnonzero(np.diff(np.concatenate(([0.0], levels))) != 0)
            transitions = [(int(i), levels[i - 1] if i else 0.0, levels[i]) for i in changes]
        for index, old, new in transitions:
            yield index / float(self.reed.rate), RISING if new > old else FALLING

    def _scheduleFull(self, channel, k):
        stop = (k + 1) * channel.buffer.capacity
        if stop <= channel.length:
            self._nextBuffer[channel.name] = k
            self._schedule(channel.timeOf(stop - 1), _SAMPLING, "full", channel)

    def _pollTime(self, k):
        return k * self.config.adcPollPeriod

    def run(self):
        """Runs the simulation to the end of the streams and returns the list of ``SessionArtifacts``."""
        if self.reed is not None:
            for t, edge in self._reedEdges():
                self._schedule(t, _INTERRUPT, "edge", edge)
        for channel in self.channels:
            self._scheduleFull(channel, 0)
        if self.current is not None and len(self.current.samples):
            self._currentEnd = (len(self.current.samples) - 1) / float(self.current.rate)
            if self._pollTime(1) <= self._currentEnd:
                self._schedule(self._pollTime(1), _ADC_POLL, "poll", 1)

        while self._queue:
            t, priority, seq, kind, payload = heapq.heappop(self._queue)
            self.now = t
            if kind == "edge":
                self._onEdge(payload, t)
            elif kind == "full":
                self._onBufferFull(payload, t)
            elif kind == "dma":
                self._onDmaComplete(payload, t)
            else:
                self._onPoll(payload, t)

        if self._session is not None:
            log.warning("Streams ended with session %d still recording; closing it early", self._session.index)
            self._closeSession()
        if self._pendingFlags:
            self.unconsumedFlags = len(self._pendingFlags)
            log.warning("%d event flag(s) were raised after the last DMA completion and never labeled",
                        self.unconsumedFlags)
        log.info("Simulated %.3f s: %d sessions, %d labels, %d DMA transfers",
                 self.now, len(self.sessions), sum(len(s.labels) for s in self.sessions), self.dma.transfers)
        return self.sessions

    def _raiseFlag(self, flag):
        self.flagCount += 1
        self._pendingFlags.append(flag)

    def _onEdge(self, edge, t):
        if t - self._lastEdgeAt < self.config.reedDebounce:
            self.ignoredEdges += 1
            return
        self._lastEdgeAt = t
        self._raiseFlag(onReedEdge(edge, self.t0 + t))

    def _onPoll(self, k, t):
        index = min(int(math.floor(t * self.current.rate + _POLL_EPSILON)), len(self.current.samples) - 1)
        reading = float(self.current.samples[index])
        window = (reading,) if self._lastReading is None else (self._lastReading, reading)
        flag = pollAdc(window, self.config.currentThreshold, self.t0 + t)
        if flag is not None:
            self._raiseFlag(flag)
        self._lastReading = reading
        if self._pollTime(k + 1) <= self._currentEnd:
            self._schedule(self._pollTime(k + 1), _ADC_POLL, "poll", k + 1)

    def _onBufferFull(self, channel, t):
        buffer = channel.buffer
        request = buffer.fill(t)
        completion = dmaTransfer(request, self.dma)
        buffer.busyUntil[request.bufferIndex] = completion.time
        self._schedule(completion.time, _DMA_COMPLETE, "dma", (channel, completion))

        # The next sample goes into the other buffer, which has to be free by the time it arrives.
        nextIndex = request.start + request.count
        nextAt = channel.timeOf(nextIndex)
        if nextIndex < channel.length and buffer.busy[buffer.active] and buffer.busyUntil[buffer.active] > nextAt:
            self.faults.append({"fault": "buffer_overrun", "channel": channel.name, "sampleIndex": nextIndex,
                                "time": nextAt})
            log.error("Buffer overrun on %s at sample %d (t=%.6f s)", channel.name, nextIndex, nextAt)
            raise BufferOverrunException(
                "Buffer overrun on %s at sample %d (t=%.6f s): the writer is slower than the acquisition"
                % (channel.name, nextIndex, nextAt),
                channel=channel.name,
                sampleIndex=nextIndex,
                time=nextAt,
            )
        self._scheduleFull(channel, self._nextBuffer[channel.name] + 1)

    def _onDmaComplete(self, payload, t):
        channel, completion = payload
        request = completion.request
        channel.buffer.release(request.bufferIndex)
        start, stop = request.start, request.start + request.count

        if self._session is not None:
            self._session.append(channel, start, stop)
        else:
            self._staged[channel.name] = (start, stop)

        # Checkpoint: flags are only looked at after a DMA transfer completes.
        if self._pendingFlags:
            if self._session is None:
                self._openSession()
            for flag in self._pendingFlags:
                self._session.label(flag)
            self._session.deadline = t + self.config.postEventWindow
            del self._pendingFlags[:]
        if self._session is not None and self._session.complete():
            self._closeSession()

    def _openSession(self):
        try:
            self._session = _Session(len(self.sessions), self)
        except StorageFaultException as excObj:
            self.faults.append({"fault": "storage", "message": str(excObj), "time": self.now})
            log.error("Storage fault: %s", excObj)
            raise
        log.debug("Session %d opened at t=%.6f s", self._session.index, self.now)
        for channel in self.channels:
            if channel.name in self._staged:
                self._session.append(channel, *self._staged[channel.name])
        self._staged.clear()

    def _closeSession(self):
        artifacts = self._session.close()
        self.sessions.append(artifacts)
        self._session = None
        log.debug("Session %d closed: %.6f-%.6f s, labels %s", artifacts.index, artifacts.start, artifacts.end,
                  [label.kind for label in artifacts.labels])

    @property
    def report(self):
        """The run report: a dict of counts, high-water marks, and faults. It holds no wall-clock values."""
        labelCounts = {kind: 0 for kind in EVENT_KINDS}
        for session in self.sessions:
            for label in session.labels:
                labelCounts[label.kind] += 1
        return {
            "virtualTime": self.now,
            "sessions": len(self.sessions),
            "labels": sum(labelCounts.values()),
            "labelCounts": labelCounts,
            "flags": self.flagCount,
            "ignoredEdges": self.ignoredEdges,
            "unconsumedFlags": self.unconsumedFlags,
            "bufferHighWater": {channel.name: channel.buffer.highWater for channel in self.channels},
            "dmaQueueHighWater": self.dma.queueHighWater,
            "dmaTransfers": self.dma.transfers,
            "bytesTransferred": self.dma.bytesTransferred,
            "writerThroughput": self.dma.throughput,
            "acquisitionByteRate": acquisitionByteRate(self.config),
            "maxOpenFiles": self.sdCard.maxOpenObserved,
            "faults": list(self.faults),
        }

    def reportJson(self):
        return json.dumps(self.report, indent=2, sort_keys=True)


def runSimulation(streams, config=None, sdCard=None):
    """
    Runs a ``Simulator`` over ``streams`` and returns one ``SessionArtifacts`` per recording session. Pass your own
    ``SdCard`` to get at the files afterwards.

    Raises:
      BufferOverrunException: If the writer falls behind the acquisition.
      StorageFaultException: If a session needs more open files than the card allows.
    """
    return Simulator(streams, config, sdCard).run()
