# Scenario generation for PyAutoLabel: seeded ground-truth event timelines, plus the sensor waveforms those events
# produce on the feature sensors (microphone, accelerometer) and the labeling sensors (reed switch, current sensor).

import bisect
import logging
import math
import re

import numpy as np
from scipy import signal

import pyautolabel
from pyautolabel import (
    DOOR_OPEN,
    DOOR_CLOSE,
    WATER_BOILED,
    EVENT_KINDS,
    AUDIO,
    VIB_X,
    VIB_Y,
    VIB_Z,
    CURRENT,
    REED,
    VIBRATION,
    CHANNEL_IDS,
    DOOR_SWING_DWELL,
    EventSpec,
    Scenario,
    SampleStream,
    ScenarioConfig,
    ConfigurationException,
    FormatException,
    _normalizeKind,
    _raiseFormatException,
)

log = logging.getLogger(__name__)

# Tags that keep the random streams for noise blocks, per-channel event templates, and per-event shared draws apart.
_BLOCK_TAG = 1
_TEMPLATE_TAG = 2
_SHARED_TAG = 3
_SHARED_CHANNEL = 99

# Per-axis weights of the door burst on the accelerometer (x, y, z):
_DOOR_AXIS_WEIGHTS = {
    DOOR_OPEN: {VIB_X: 0.6, VIB_Y: 1.0, VIB_Z: 0.4},
    DOOR_CLOSE: {VIB_X: 0.8, VIB_Y: 0.6, VIB_Z: 1.0},
}
_BOIL_AXIS_LEVELS = {VIB_X: 0.02, VIB_Y: 0.02, VIB_Z: 0.05}


def _ms(seconds):
    return int(round(seconds * 1000.0))


def _rng(seed, channelId, tag, index):
    if channelId == _SHARED_CHANNEL:
        code = _SHARED_CHANNEL
    else:
        code = CHANNEL_IDS.index(channelId)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(code, tag, index)))


def _checkSeed(seed):
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or not (0 <= seed < 2 ** 64):
        raise ConfigurationException("seed must be an integer in [0, 2**64), not %r" % (seed,))
    return int(seed)


def checkScenarioConfig(config):
    """
    Raises ``ConfigurationException`` if the ``ScenarioConfig`` has invalid values. Returns the config with
    ``minGap`` filled in (it defaults to twice the post-event window).
    """
    for name in ("doorOpenCount", "doorCloseCount", "waterBoiledCount"):
        value = getattr(config, name)
        if not isinstance(value, (int, np.integer)) or value < 0:
            raise ConfigurationException("%s must be a non-negative integer, not %r" % (name, value))
    if config.doorCloseCount > config.doorOpenCount:
        raise ConfigurationException(
            "doorCloseCount (%s) can't exceed doorOpenCount (%s): a door must be opened before it can be closed"
            % (config.doorCloseCount, config.doorOpenCount)
        )
    for name in ("length", "doorOpenDuration", "doorCloseDuration", "boilDuration", "audioRate", "vibRate",
                 "currentRate"):
        if not getattr(config, name) > 0:
            raise ConfigurationException("%s must be greater than 0, not %r" % (name, getattr(config, name)))
    if config.doorCloseDuration <= config.doorOpenDuration:
        raise ConfigurationException("doorCloseDuration must be longer than doorOpenDuration")
    if config.doorOpenDuration <= DOOR_SWING_DWELL:
        raise ConfigurationException("doorOpenDuration must be longer than %s seconds" % (DOOR_SWING_DWELL,))
    if config.heatUpDuration < 0 or config.postEventWindow < 0 or config.kettleCurrent <= 0:
        raise ConfigurationException("heatUpDuration and postEventWindow must be >= 0 and kettleCurrent > 0")
    if not 0.0 <= config.vibrationDropout < 1.0:
        raise ConfigurationException("vibrationDropout must be in [0, 1), not %r" % (config.vibrationDropout,))
    for name in ("audioRate", "vibRate", "currentRate"):
        if int(getattr(config, name)) % 1000 != 0:
            # Event times are whole milliseconds, so every edge must land on a sample.
            raise ConfigurationException("%s must be a multiple of 1000 Hz" % (name,))

    minGap = config.minGap
    if minGap is None:
        minGap = 2.0 * config.postEventWindow
    if minGap <= config.postEventWindow:
        raise ConfigurationException(
            "minGap (%s) must be greater than postEventWindow (%s) so recordings never overlap"
            % (minGap, config.postEventWindow)
        )
    return config._replace(minGap=minGap)


def buildScenario(config=None, seed=0):
    """
    Returns a ``Scenario`` with exactly the requested number of door openings, door closings, and boils, laid out in
    a random (but seed-determined) order with at least ``minGap`` seconds between any two events and at both ends.

    Door closings always follow a door opening. Openings beyond the number of closings are door swings: the door is
    pushed open and swings shut after ``DOOR_SWING_DWELL`` seconds, too fast for the firmware to see the closing.

    Each boil block starts with ``heatUpDuration`` seconds of the kettle drawing current, and the WaterBoiled event
    begins when the current drops to zero.

    Raises:
      ConfigurationException: If the config is invalid or the events can't fit in the scenario length.
    """
    if config is None:
        config = ScenarioConfig()
    config = checkScenarioConfig(config)
    seed = _checkSeed(seed)

    lengthMs = _ms(config.length)
    gapMs = _ms(config.minGap)
    openMs = _ms(config.doorOpenDuration)
    closeMs = _ms(config.doorCloseDuration)
    boilMs = _ms(config.boilDuration)
    heatMs = _ms(config.heatUpDuration)

    items = (["pair"] * config.doorCloseCount + ["swing"] * (config.doorOpenCount - config.doorCloseCount)
             + ["boil"] * config.waterBoiledCount)
    minimal = {"pair": openMs + gapMs + closeMs, "swing": openMs, "boil": heatMs + boilMs}
    required = sum(minimal[item] for item in items) + (len(items) + 1) * gapMs
    if required > lengthMs:
        raise ConfigurationException(
            "Infeasible scenario: %d events need at least %.3f seconds with %.3f second gaps, but length is %.3f"
            % (len(items), required / 1000.0, gapMs / 1000.0, lengthMs / 1000.0)
        )

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SHARED_CHANNEL, 0, 0)))
    order = [items[i] for i in rng.permutation(len(items))]

    # The slack is dealt out over the gaps and the time each door stays open, in whole milliseconds.
    slots = len(order) + 1 + order.count("pair")
    slack = lengthMs - required
    weights = rng.exponential(size=slots)
    shares = np.floor(slack * weights / weights.sum()).astype(np.int64)
    shares[-1] += slack - int(shares.sum())
    shares = [int(s) for s in shares]
    gapShares = shares[: len(order) + 1]
    dwellShares = iter(shares[len(order) + 1:])

    events = []
    t = gapMs + gapShares[0]
    for i, item in enumerate(order):
        if item == "pair":
            closeAt = t + openMs + gapMs + next(dwellShares)
            events.append(EventSpec(DOOR_OPEN, t / 1000.0, openMs / 1000.0))
            events.append(EventSpec(DOOR_CLOSE, closeAt / 1000.0, closeMs / 1000.0))
            end = closeAt + closeMs
        elif item == "swing":
            events.append(EventSpec(DOOR_OPEN, t / 1000.0, openMs / 1000.0))
            end = t + openMs
        else:
            onset = t + heatMs
            events.append(EventSpec(WATER_BOILED, onset / 1000.0, boilMs / 1000.0))
            end = onset + boilMs
        t = end + gapMs + gapShares[i + 1]
    assert t == lengthMs, "scenario layout doesn't add up to its length"

    classCounts = {kind: sum(1 for e in events if e.kind == kind) for kind in EVENT_KINDS}
    log.info("Built scenario seed=%s length=%.0fs with %d events %r", seed, config.length, len(events), classCounts)
    return Scenario(seed=seed, length=lengthMs / 1000.0, events=tuple(events), classCounts=classCounts)


def doorIntervals(scenario):
    """
    Returns a list of ``(openedAt, closedAt)`` times for each time the reed switch is held closed by an open door.
    A DoorOpen followed by a DoorClose spans the whole time between them. A DoorOpen followed by another DoorOpen
    (or nothing) is a door swing lasting ``DOOR_SWING_DWELL`` seconds.
    """
    doors = [e for e in scenario.events if e.kind in (DOOR_OPEN, DOOR_CLOSE)]
    intervals = []
    for i, event in enumerate(doors):
        if event.kind != DOOR_OPEN:
            continue
        if i + 1 < len(doors) and doors[i + 1].kind == DOOR_CLOSE:
            intervals.append((event.onset, doors[i + 1].onset))
        else:
            intervals.append((event.onset, round(event.onset + DOOR_SWING_DWELL, 3)))
    return intervals


def kettleIntervals(scenario, heatUpDuration=None):
    """
    Returns a list of ``(kettleOnAt, boiledAt)`` times, one per WaterBoiled event. ``heatUpDuration`` defaults to the
    ``ScenarioConfig`` default.
    """
    if heatUpDuration is None:
        heatUpDuration = ScenarioConfig().heatUpDuration
    return [(max(0.0, round(e.onset - heatUpDuration, 3)), e.onset) for e in scenario.events if e.kind == WATER_BOILED]


class _PiecewiseConstantSamples(object):
    """
    A read-only sample sequence that is zero except for a sorted list of disjoint ``(start, stop, level)`` index
    intervals. Point access is a binary search, so hours of reed or current samples never exist in memory.
    """

    def __init__(self, length, intervals):
        self._length = length
        self._intervals = sorted((int(a), int(b), float(level)) for a, b, level in intervals if b > a)
        self._starts = [a for a, b, level in self._intervals]
        for (a0, b0, l0), (a1, b1, l1) in zip(self._intervals, self._intervals[1:]):
            if a1 < b0:
                raise ConfigurationException("overlapping level intervals at sample %d" % (a1,))

    def __len__(self):
        return self._length

    def __getitem__(self, key):
        if isinstance(key, slice):
            start, stop, step = key.indices(self._length)
            if step != 1:
                return self[start:stop][::step] if stop > start else np.zeros(0)
            out = np.zeros(max(0, stop - start))
            first = max(0, bisect.bisect_right(self._starts, start) - 1)
            for a, b, level in self._intervals[first:]:
                if a >= stop:
                    break
                lo, hi = max(a, start), min(b, stop)
                if hi > lo:
                    out[lo - start:hi - start] = level
            return out
        index = int(key)
        if index < 0:
            index += self._length
        if not 0 <= index < self._length:
            raise IndexError("sample index %s out of range" % (key,))
        i = bisect.bisect_right(self._starts, index) - 1
        if i >= 0 and index < self._intervals[i][1]:
            return self._intervals[i][2]
        return 0.0

    def __array__(self, dtype=None, copy=None):
        out = self[0:self._length]
        return out if dtype is None else out.astype(dtype)

    def transitions(self):
        """Returns a list of ``(index, oldLevel, newLevel)`` for every sample where the level changes."""
        result = []
        level = 0.0
        for a, b, newLevel in self._intervals:
            if newLevel != level:
                result.append((a, level, newLevel))
            level = newLevel
            if b < self._length:
                result.append((b, level, 0.0))
                level = 0.0
        return result


class _SynthesizedSamples(object):
    """
    A read-only sample sequence of seeded background noise with event templates added on top. The noise is made in
    one-second blocks, each from its own random stream, so any slice can be produced on demand and always comes
    out the same.
    """

    def __init__(self, channelId, length, rate, seed, noiseStd, overlays, clip=False, dropout=0.0):
        self.channelId = channelId
        self._length = length
        self._rate = int(rate)
        self._seed = seed
        self._noiseStd = noiseStd
        self._overlays = sorted(overlays, key=lambda o: o[0])  # (startIndex, length, makeTemplate)
        self._starts = [o[0] for o in self._overlays]
        self._longest = max([o[1] for o in self._overlays] or [0])
        self._templates = {}
        self._clip = clip
        self._dropout = dropout

    def __len__(self):
        return self._length

    def _block(self, blockIndex):
        rng = _rng(self._seed, self.channelId, _BLOCK_TAG, blockIndex)
        noise = rng.standard_normal(self._rate) * self._noiseStd
        missing = rng.random(self._rate) < self._dropout if self._dropout else None
        return noise, missing

    def _render(self, start, stop):
        out = np.zeros(stop - start)
        missing = np.zeros(stop - start, dtype=bool) if self._dropout else None
        for blockIndex in range(start // self._rate, (stop - 1) // self._rate + 1):
            noise, blockMissing = self._block(blockIndex)
            b0 = blockIndex * self._rate
            lo, hi = max(start, b0), min(stop, b0 + self._rate)
            out[lo - start:hi - start] = noise[lo - b0:hi - b0]
            if missing is not None:
                missing[lo - start:hi - start] = blockMissing[lo - b0:hi - b0]

        first = bisect.bisect_left(self._starts, start - self._longest)
        for i in range(first, bisect.bisect_left(self._starts, stop)):
            s, n, makeTemplate = self._overlays[i]
            lo, hi = max(s, start), min(s + n, stop)
            if hi <= lo:
                continue
            if i not in self._templates:
                self._templates[i] = makeTemplate()
            out[lo - start:hi - start] += self._templates[i][lo - s:hi - s]

        if self._clip:
            np.clip(out, -1.0, 1.0, out=out)
        if missing is not None:
            out[missing] = np.nan
        return out

    def __getitem__(self, key):
        if isinstance(key, slice):
            start, stop, step = key.indices(self._length)
            if stop <= start:
                return np.zeros(0)
            out = self._render(start, stop)
            return out if step == 1 else out[::step]
        index = int(key)
        if index < 0:
            index += self._length
        if not 0 <= index < self._length:
            raise IndexError("sample index %s out of range" % (key,))
        return float(self._render(index, index + 1)[0])

    def __array__(self, dtype=None, copy=None):
        out = self[0:self._length]
        return out if dtype is None else out.astype(dtype)


def _burstEnvelope(n, rate):
    # 5 ms raised-cosine attack, exponential decay to -6 dB, 10 ms raised-cosine release to zero.
    t = np.arange(n) / float(rate)
    envelope = np.exp(-math.log(2.0) * t / (n / float(rate)))
    attack = min(n, int(0.005 * rate))
    if attack:
        envelope[:attack] *= 0.5 - 0.5 * np.cos(np.pi * (np.arange(attack) + 0.5) / attack)
    release = min(n - attack, int(0.01 * rate))
    if release:
        envelope[n - release:] *= 0.5 + 0.5 * np.cos(np.pi * (np.arange(release) + 1.0) / release)
    return envelope


def _fade(n, rate, seconds=0.05):
    envelope = np.ones(n)
    k = min(n // 2, int(seconds * rate))
    if k:
        ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(k) + 0.5) / k)
        envelope[:k] *= ramp
        envelope[n - k:] *= ramp[::-1]
    return envelope


def _filteredNoise(rng, n, rate, sos):
    pad = rate // 20
    x = signal.sosfilt(sos, rng.standard_normal(n + pad))[pad:]
    std = x.std()
    return x / std if std > 0 else x


def _audioTemplate(event, eventIndex, seed, rate):
    n = _ms(event.duration) * rate // 1000
    shared = _rng(seed, _SHARED_CHANNEL, _SHARED_TAG, eventIndex)
    rng = _rng(seed, AUDIO, _TEMPLATE_TAG, eventIndex)
    if event.kind == DOOR_OPEN:
        # Bright, short click: differenced white noise tilts the spectrum towards high frequencies.
        amplitude = shared.uniform(0.4, 0.5)
        burst = np.diff(rng.standard_normal(n + 1)) / math.sqrt(2.0)
        return amplitude * burst * _burstEnvelope(n, rate)
    if event.kind == DOOR_CLOSE:
        # Duller, longer slam: low-passed noise plus a damped 60 Hz thump.
        amplitude = shared.uniform(0.4, 0.5)
        sos = signal.butter(2, 2000.0, btype="lowpass", fs=rate, output="sos")
        burst = _filteredNoise(rng, n, rate, sos)
        t = np.arange(n) / float(rate)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        thump = 0.5 * np.sin(2.0 * math.pi * 60.0 * t + phase) * np.exp(-t / 0.05)
        return amplitude * (burst + thump) * _burstEnvelope(n, rate)
    # Boiling: sustained 100-400 Hz band noise with a slow bubbling modulation.
    amplitude = shared.uniform(0.15, 0.25)
    sos = signal.butter(4, [100.0, 400.0], btype="bandpass", fs=rate, output="sos")
    band = _filteredNoise(rng, n, rate, sos)
    t = np.arange(n) / float(rate)
    bubbling = 1.0 + 0.3 * np.sin(2.0 * math.pi * rng.uniform(3.0, 8.0) * t + rng.uniform(0.0, 2.0 * math.pi))
    return amplitude * band * bubbling * _fade(n, rate)


def _vibrationTemplate(axis, event, eventIndex, seed, rate):
    n = _ms(event.duration) * rate // 1000
    shared = _rng(seed, _SHARED_CHANNEL, _SHARED_TAG, eventIndex)
    rng = _rng(seed, axis, _TEMPLATE_TAG, eventIndex)
    if event.kind in (DOOR_OPEN, DOOR_CLOSE):
        shared.uniform()  # The first shared draw is the audio amplitude.
        amplitude = shared.uniform(0.2, 0.35) * _DOOR_AXIS_WEIGHTS[event.kind][axis]
        return amplitude * rng.standard_normal(n) * _burstEnvelope(n, rate)
    sos = signal.butter(4, [40.0, 160.0], btype="bandpass", fs=rate, output="sos")
    return _BOIL_AXIS_LEVELS[axis] * _filteredNoise(rng, n, rate, sos) * _fade(n, rate)


def _sampleCount(scenario, rate):
    return _ms(scenario.length) * int(rate) // 1000


def synthFeatureStreams(scenario, seed, config=None):
    """
    Returns a dict with the microphone stream under ``AUDIO`` and a tuple of the accelerometer's x, y, z streams under
    ``VIBRATION``. The sample sequences are produced lazily: slicing one renders only the requested samples.

    The background is white noise at ``config.backgroundDbfs``. Door events add a damped broadband burst and boils
    add sustained low-frequency band noise, with a per-event random amplitude. Audio is clipped to [-1, 1].
    Vibration samples lost to IMU dropouts are NaN.
    """
    if config is None:
        config = ScenarioConfig()
    seed = _checkSeed(seed)
    noiseStd = 10.0 ** (config.backgroundDbfs / 20.0)

    def overlays(rate, makeTemplate):
        result = []
        for i, event in enumerate(scenario.events):
            start = _ms(event.onset) * int(rate) // 1000
            n = _ms(event.duration) * int(rate) // 1000
            result.append((start, n, (lambda event=event, i=i: makeTemplate(event, i))))
        return result

    audioRate = int(config.audioRate)
    audio = _SynthesizedSamples(
        AUDIO, _sampleCount(scenario, audioRate), audioRate, seed, noiseStd,
        overlays(audioRate, lambda event, i: _audioTemplate(event, i, seed, audioRate)), clip=True,
    )
    vibRate = int(config.vibRate)
    axes = []
    for axis in (VIB_X, VIB_Y, VIB_Z):
        samples = _SynthesizedSamples(
            axis, _sampleCount(scenario, vibRate), vibRate, seed, noiseStd,
            overlays(vibRate, lambda event, i, axis=axis: _vibrationTemplate(axis, event, i, seed, vibRate)),
            dropout=config.vibrationDropout,
        )
        axes.append(SampleStream(axis, vibRate, samples, 0.0))
    return {AUDIO: SampleStream(AUDIO, audioRate, audio, 0.0), VIBRATION: tuple(axes)}


def synthLabelingStreams(scenario, config=None):
    """
    Returns a dict with the reed switch level stream under ``REED`` (sampled at the audio rate) and the kettle
    current stream under ``CURRENT``.

    The reed level is 1 while a door is open and 0 otherwise. The current is ``config.kettleCurrent`` amperes from
    kettle-on until the WaterBoiled onset, then exactly 0.
    """
    if config is None:
        config = ScenarioConfig()
    reedRate = int(config.audioRate)
    reed = _PiecewiseConstantSamples(
        _sampleCount(scenario, reedRate),
        [(_ms(a) * reedRate // 1000, _ms(b) * reedRate // 1000, 1.0) for a, b in doorIntervals(scenario)],
    )
    currentRate = int(config.currentRate)
    current = _PiecewiseConstantSamples(
        _sampleCount(scenario, currentRate),
        [(_ms(a) * currentRate // 1000, _ms(b) * currentRate // 1000, config.kettleCurrent)
         for a, b in kettleIntervals(scenario, config.heatUpDuration)],
    )
    return {REED: SampleStream(REED, reedRate, reed, 0.0), CURRENT: SampleStream(CURRENT, currentRate, current, 0.0)}


SCENARIO_HEADER = "# pyautolabel scenario"


def formatScenario(scenario):
    """Returns the text of a scenario file: a header, ``seed`` and ``length`` lines, then one event per line."""
    lines = [SCENARIO_HEADER, "seed = %d" % (scenario.seed,), "length = %.3f" % (scenario.length,),
             "# kind, onset_s, duration_s"]
    for event in scenario.events:
        lines.append("%s, %.3f, %.3f" % (event.kind, event.onset, event.duration))
    return "\n".join(lines) + "\n"


_SETTING_RE = re.compile(r"^\s*(seed|length)\s*=\s*(\S+)\s*$")


@_raiseFormatException("scenario file")
def parseScenario(text, heatUpDuration=None):
    """
    Returns the ``Scenario`` in the text of a scenario file. ``heatUpDuration`` is the kettle heat-up time the
    scenario will be synthesized with; it defaults to the ``ScenarioConfig`` default.

    Raises:
      FormatException: If a line can't be parsed, or the events are out of order, overlap the scenario's ends,
      overlap each other on the same labeling sensor (a boil's heat-up included), or close a door that isn't open.
      The message names the line.
    """
    if heatUpDuration is None:
        heatUpDuration = ScenarioConfig().heatUpDuration
    seed, length, events, lineNumbers = None, None, [], []
    for lineNumber, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        mo = _SETTING_RE.match(stripped)
        if mo is not None:
            if mo.group(1) == "seed":
                seed = int(mo.group(2))
            else:
                length = float(mo.group(2))
            continue
        parts = [p.strip() for p in stripped.split(",")]
        if len(parts) != 3:
            raise FormatException("Invalid scenario at line %d: expected 'kind, onset_s, duration_s', found %r"
                                  % (lineNumber, stripped))
        try:
            kind = _normalizeKind(parts[0])
            onset, duration = float(parts[1]), float(parts[2])
        except (pyautolabel.PyAutoLabelException, ValueError) as excObj:
            raise FormatException("Invalid scenario at line %d: %s" % (lineNumber, excObj))
        if onset < 0 or duration <= 0:
            raise FormatException("Invalid scenario at line %d: onset must be >= 0 and duration > 0" % (lineNumber,))
        events.append(EventSpec(kind, onset, duration))
        lineNumbers.append(lineNumber)

    if seed is None or length is None:
        raise FormatException("Invalid scenario: the 'seed' and 'length' lines are required")
    busyUntil = {}
    doorOpen = False
    for i, (event, lineNumber) in enumerate(zip(events, lineNumbers)):
        if i and event.onset < events[i - 1].onset:
            raise FormatException("Invalid scenario at line %d: event starts before the event ahead of it"
                                  % (lineNumber,))
        if event.onset + event.duration > length + 1e-9:
            raise FormatException("Invalid scenario at line %d: event runs past the scenario length" % (lineNumber,))
        if event.kind == WATER_BOILED:
            sensor, start = CURRENT, event.onset - heatUpDuration
        else:
            sensor, start = REED, event.onset
        if sensor in busyUntil and busyUntil[sensor] > start + 1e-9:
            what = "heat-up overlaps" if sensor == CURRENT else "event overlaps"
            raise FormatException("Invalid scenario at line %d: %s the event before it, which ends at %.3f"
                                  % (lineNumber, what, busyUntil[sensor]))
        busyUntil[sensor] = event.onset + event.duration
        if event.kind == DOOR_CLOSE:
            if not doorOpen:
                raise FormatException("Invalid scenario at line %d: door_close without a door_open before it"
                                      % (lineNumber,))
            doorOpen = False
        elif event.kind == DOOR_OPEN:
            doorOpen = True
    classCounts = {kind: sum(1 for e in events if e.kind == kind) for kind in EVENT_KINDS}
    return Scenario(seed=seed, length=length, events=tuple(events), classCounts=classCounts)


def writeScenarioFile(path, scenario):
    with open(path, "w", newline="\n") as fileObj:
        fileObj.write(formatScenario(scenario))


def readScenarioFile(path, heatUpDuration=None):
    try:
        with open(path) as fileObj:
            text = fileObj.read()
    except OSError as excObj:
        raise FormatException("Could not read scenario file %s: %s" % (path, excObj))
    return parseScenario(text, heatUpDuration)
