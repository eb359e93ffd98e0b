import json
import os
import unittest

import numpy as np
from hypothesis import given, settings
import hypothesis.strategies as st

import pyautolabel
from pyautolabel import (
    DOOR_OPEN,
    DOOR_CLOSE,
    WATER_BOILED,
    AUDIO,
    VIBRATION,
    REED,
    RISING,
    FALLING,
    SampleStream,
)

SLOW = os.environ.get("PYAUTOLABEL_SLOW_TESTS") == "1"

SHORT_CONFIG = pyautolabel.ScenarioConfig(
    length=60.0, doorOpenCount=2, doorCloseCount=1, waterBoiledCount=1, heatUpDuration=5.0
)


def shortStreams(seed):
    scenario = pyautolabel.buildScenario(SHORT_CONFIG, seed)
    streams = pyautolabel.synthFeatureStreams(scenario, seed, SHORT_CONFIG)
    streams.update(pyautolabel.synthLabelingStreams(scenario, SHORT_CONFIG))
    return scenario, streams


def audioOnlyStreams(seconds, reed=None):
    streams = {AUDIO: SampleStream(AUDIO, 16000, np.zeros(int(seconds * 16000)), 0.0)}
    if reed is not None:
        streams[REED] = SampleStream(REED, 16000, reed, 0.0)
    return streams


def configForThroughput(throughput, **kwargs):
    # spiClock that gives the writer exactly ``throughput`` bytes per second.
    return pyautolabel.LoggerConfig(spiClock=throughput * 8.0 / pyautolabel.WRITER_EFFICIENCY, **kwargs)


def overrunOracle(capacity, rate, length, throughput):
    # Single channel: request k is made when sample (k+1)C-1 arrives, and the writer serves requests in order.
    transfer = 2.0 * capacity / throughput
    previousDone = None
    k = 0
    while (k + 1) * capacity <= length:
        requested = ((k + 1) * capacity - 1) / float(rate)
        done = max(requested, previousDone if previousDone is not None else 0.0) + transfer
        nextIndex = (k + 1) * capacity
        if k >= 1 and previousDone > nextIndex / float(rate) and nextIndex < length:
            return nextIndex
        previousDone = done
        k += 1
    return None


class TestFlags(unittest.TestCase):
    def test_onReedEdge(self):
        flag = pyautolabel.onReedEdge(RISING, 1.5)
        self.assertEqual(flag, pyautolabel.EventFlag(DOOR_OPEN, 1.5, pyautolabel.EDGE_INTERRUPT))
        self.assertEqual(pyautolabel.onReedEdge(FALLING, 2.0).kind, DOOR_CLOSE)
        with self.assertRaises(pyautolabel.PyAutoLabelException):
            pyautolabel.onReedEdge("sideways", 0.0)

    def test_pollAdc(self):
        flag = pyautolabel.pollAdc([8.7, 0.0], 0.0, 3.25)
        self.assertEqual(flag, pyautolabel.EventFlag(WATER_BOILED, 3.25, pyautolabel.ADC_THRESHOLD))
        self.assertIsNone(pyautolabel.pollAdc([0.0, 0.0]))
        self.assertIsNone(pyautolabel.pollAdc([8.7, 8.7]))
        self.assertIsNone(pyautolabel.pollAdc([0.0, 8.7]))
        self.assertIsNone(pyautolabel.pollAdc([0.0]))
        self.assertIsNotNone(pyautolabel.pollAdc([8.7, 0.4], threshold=0.5))


class TestPingPongBuffer(unittest.TestCase):
    def test_swapAndOverrun(self):
        buffer = pyautolabel.PingPongBuffer(4, AUDIO, 2)
        for i in range(3):
            self.assertIsNone(pyautolabel.pingpongPush(buffer, i))
        request = pyautolabel.pingpongPush(buffer, 3, t=0.25)
        self.assertEqual((request.bufferIndex, request.start, request.count, request.nbytes), (0, 0, 4, 8))
        self.assertEqual(request.samples, (0, 1, 2, 3))
        self.assertEqual(request.time, 0.25)
        self.assertEqual(buffer.active, 1)

        for i in range(4, 8):
            request = buffer.push(i)
        self.assertEqual((request.bufferIndex, request.start), (1, 4))
        self.assertEqual(buffer.highWater, 2)

        with self.assertRaises(pyautolabel.BufferOverrunException) as cm:
            buffer.push(8, t=1.0)
        self.assertEqual(cm.exception.sampleIndex, 8)
        self.assertEqual(cm.exception.channel, AUDIO)

        buffer.release(0)
        self.assertIsNone(buffer.push(8))

    def test_invalidCapacity(self):
        with self.assertRaises(pyautolabel.ConfigurationException):
            pyautolabel.PingPongBuffer(0)

    @settings(max_examples=50, deadline=None)
    @given(capacity=st.integers(1, 16), values=st.lists(st.integers(-100, 100), max_size=200))
    def test_buffersPartitionTheStream(self, capacity, values):
        buffer = pyautolabel.PingPongBuffer(capacity)
        drained = []
        for value in values:
            request = buffer.push(value)
            if request is not None:
                self.assertEqual(request.start, len(drained))
                drained.extend(request.samples)
                buffer.release(request.bufferIndex)
        whole = len(values) // capacity * capacity
        self.assertEqual(drained, values[:whole])
        self.assertEqual(buffer.fillLevel, len(values) - whole)


class TestDmaAndStorage(unittest.TestCase):
    def test_dmaEngineIsFifo(self):
        engine = pyautolabel.DmaEngine(1000.0)

        def request(t):
            return pyautolabel.DmaRequest(AUDIO, 0, 0, 50, 100, t, None)

        self.assertAlmostEqual(pyautolabel.dmaTransfer(request(0.0), engine).time, 0.1)
        self.assertAlmostEqual(pyautolabel.dmaTransfer(request(0.05), engine).time, 0.2)
        self.assertAlmostEqual(pyautolabel.dmaTransfer(request(1.0), engine).time, 1.1)
        self.assertEqual(engine.queueHighWater, 2)
        self.assertEqual(engine.bytesTransferred, 300)
        self.assertEqual(engine.transfers, 3)

    def test_sdCardOpenFileLimit(self):
        card = pyautolabel.SdCard(maxOpenFiles=2)
        a = card.open("a.wav")
        card.open("b.csv")
        with self.assertRaises(pyautolabel.StorageFaultException):
            card.open("c.csv")
        a.write(b"hello")
        a.close()
        card.open("c.csv")
        self.assertEqual(card.files["a.wav"], b"hello")
        self.assertEqual(card.maxOpenObserved, 2)

    def test_throughputs(self):
        config = pyautolabel.LoggerConfig()
        self.assertEqual(pyautolabel.writerThroughput(config), 5e6)
        self.assertEqual(pyautolabel.acquisitionByteRate(config), 56000)
        pyautolabel.checkLoggerConfig(config)

        slow = config._replace(spiClock=400000.0)
        with self.assertRaises(pyautolabel.ConfigurationException):
            pyautolabel.checkLoggerConfig(slow)
        pyautolabel.checkLoggerConfig(slow, strictThroughput=False)

        for bad in (config._replace(bufferCapacity=0), config._replace(writerEfficiency=1.5),
                    config._replace(rtcStart="noon")):
            with self.assertRaises(pyautolabel.ConfigurationException):
                pyautolabel.checkLoggerConfig(bad)


class TestSimulator(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scenario, cls.streams = shortStreams(5)
        cls.card = pyautolabel.SdCard()
        cls.simulator = pyautolabel.Simulator(cls.streams, pyautolabel.LoggerConfig(), cls.card)
        cls.sessions = cls.simulator.run()
        cls.rtcStart = pyautolabel.parseRtc(pyautolabel.RTC_START)

    def labelSeconds(self, label):
        return (label.timestamp - self.rtcStart).total_seconds()

    def test_oneSessionPerLabeledEvent(self):
        # The door swing closes inside the debounce window, so its falling edge raises no flag.
        self.assertEqual(len(self.scenario.events), 4)
        self.assertEqual(len(self.sessions), 4)
        labels = [label.kind for session in self.sessions for label in session.labels]
        self.assertEqual(sorted(labels), sorted([DOOR_OPEN, DOOR_OPEN, DOOR_CLOSE, WATER_BOILED]))
        self.assertEqual(self.simulator.ignoredEdges, 1)
        for session in self.sessions:
            self.assertEqual(len(session.labels), 1)

    def test_labelTimes(self):
        for session in self.sessions:
            label = session.labels[0]
            t = self.labelSeconds(label)
            self.assertTrue(session.start - 1e-6 <= t <= session.end + 1e-6, "label outside its session")
            onsets = [e.onset for e in self.scenario.events if e.kind == label.kind and abs(e.onset - t) < 0.5]
            self.assertEqual(len(onsets), 1, "no ground-truth event near label %r" % (label,))
            if label.kind == WATER_BOILED:
                self.assertTrue(-1e-6 <= t - onsets[0] < 0.01 + 1e-6)
            else:
                self.assertAlmostEqual(t, onsets[0], delta=1.0 / 16000)

    def test_sessionsCoverThePostEventWindow(self):
        for session in self.sessions:
            t = self.labelSeconds(session.labels[0])
            self.assertGreaterEqual(session.end, t + 1.0)
            self.assertLess(session.end - session.start, 1.5)

    def test_audioIsLossless(self):
        audio = self.streams[AUDIO].samples
        for session in self.sessions:
            samples, rate = pyautolabel.readWav(self.card.files[session.audioFile])
            start, stop = session.audioSpan
            self.assertEqual(rate, 16000)
            self.assertEqual(len(samples), stop - start)
            np.testing.assert_array_equal(samples, pyautolabel.quantizeAudio(audio[start:stop]))

    def test_vibrationIsLossless(self):
        axes = [axis.samples for axis in self.streams[VIBRATION]]
        for session in self.sessions:
            frame = pyautolabel.readVibrationCsv(self.card.files[session.vibrationFile])
            start, stop = session.vibrationSpan
            np.testing.assert_allclose(frame.timestamps, np.arange(stop - start) / 4000.0, atol=1e-6)
            for column, axis in zip((frame.ax, frame.ay, frame.az), axes):
                expected = np.array([float("%.6g" % v) for v in axis[start:stop]])
                np.testing.assert_array_equal(column, expected)

    def test_labelFiles(self):
        for session in self.sessions:
            self.assertEqual(pyautolabel.readLabelCsv(self.card.files[session.labelFile]), list(session.labels))

    def test_report(self):
        report = self.simulator.report
        self.assertEqual(report["sessions"], 4)
        self.assertEqual(report["labels"], 4)
        self.assertEqual(report["faults"], [])
        self.assertEqual(report["maxOpenFiles"], 3)
        self.assertLessEqual(max(report["bufferHighWater"].values()), 2)
        self.assertEqual(report["unconsumedFlags"], 0)
        self.assertEqual(json.loads(self.simulator.reportJson())["labelCounts"][DOOR_OPEN], 2)

    def test_determinism(self):
        scenario, streams = shortStreams(5)
        card = pyautolabel.SdCard()
        simulator = pyautolabel.Simulator(streams, pyautolabel.LoggerConfig(), card)
        self.assertEqual(simulator.run(), self.sessions)
        self.assertEqual(card.files, self.card.files)
        self.assertEqual(simulator.reportJson(), self.simulator.reportJson())


class TestSimulatorEdgeCases(unittest.TestCase):
    def test_noEventsNoSessions(self):
        simulator = pyautolabel.Simulator(audioOnlyStreams(3.0))
        self.assertEqual(simulator.run(), [])
        self.assertEqual(simulator.report["sessions"], 0)
        self.assertGreater(simulator.report["dmaTransfers"], 0)

    def test_debounceIgnoresShortPulses(self):
        reed = np.zeros(5 * 16000)
        reed[16000:16000 + 320] = 1.0  # 20 ms pulse
        simulator = pyautolabel.Simulator(audioOnlyStreams(5.0, reed))
        sessions = simulator.run()
        self.assertEqual(len(sessions), 1)
        self.assertEqual([label.kind for label in sessions[0].labels], [DOOR_OPEN])
        self.assertEqual(simulator.ignoredEdges, 1)
        self.assertIsNone(sessions[0].vibrationFile)

    def test_laterFlagExtendsTheSession(self):
        reed = np.zeros(5 * 16000)
        reed[16000:24000] = 1.0  # Open for half a second.
        sessions = pyautolabel.runSimulation(audioOnlyStreams(5.0, reed))
        self.assertEqual(len(sessions), 1)
        self.assertEqual([label.kind for label in sessions[0].labels], [DOOR_OPEN, DOOR_CLOSE])
        self.assertGreaterEqual(sessions[0].end, 2.5)

    def test_slowWriterOverruns(self):
        scenario, streams = shortStreams(3)
        config = pyautolabel.LoggerConfig(spiClock=400000.0)
        simulator = pyautolabel.Simulator(streams, config)
        with self.assertRaises(pyautolabel.BufferOverrunException):
            simulator.run()
        self.assertEqual(simulator.faults[0]["fault"], "buffer_overrun")

    def test_overrunMatchesOracle(self):
        length = 3 * 16000
        for throughput, expected in ((40960.0, None), (32768.0, None), (10240.0, 2048), (31985.0, 4096)):
            oracle = overrunOracle(1024, 16000, length, throughput)
            self.assertEqual(oracle, expected)
            simulator = pyautolabel.Simulator(audioOnlyStreams(3.0), configForThroughput(throughput))
            if oracle is None:
                simulator.run()
                self.assertEqual(simulator.faults, [])
            else:
                with self.assertRaises(pyautolabel.BufferOverrunException) as cm:
                    simulator.run()
                self.assertEqual(cm.exception.sampleIndex, oracle)
                self.assertEqual(cm.exception.channel, AUDIO)

    def test_tooManyOpenFiles(self):
        scenario, streams = shortStreams(5)
        with self.assertRaises(pyautolabel.StorageFaultException):
            pyautolabel.runSimulation(streams, pyautolabel.LoggerConfig(maxOpenFiles=2))

    def test_audioIsRequired(self):
        with self.assertRaises(pyautolabel.ConfigurationException):
            pyautolabel.Simulator({})


class TestSeededScenarios(unittest.TestCase):
    """Every seeded scenario must come back lossless, with exactly one label per ground-truth event."""

    CONFIG = pyautolabel.ScenarioConfig(
        length=150.0, doorOpenCount=4, doorCloseCount=2, waterBoiledCount=2, heatUpDuration=10.0
    )
    SEEDS = range(100) if SLOW else range(10)

    def checkSeed(self, seed):
        scenario = pyautolabel.buildScenario(self.CONFIG, seed)
        streams = pyautolabel.synthFeatureStreams(scenario, seed, self.CONFIG)
        streams.update(pyautolabel.synthLabelingStreams(scenario, self.CONFIG))
        card = pyautolabel.SdCard()
        simulator = pyautolabel.Simulator(streams, pyautolabel.LoggerConfig(), card)
        sessions = simulator.run()
        self.assertEqual(simulator.faults, [], "seed %d" % (seed,))

        audio = streams[AUDIO].samples
        axes = [axis.samples for axis in streams[VIBRATION]]
        for session in sessions:
            samples, rate = pyautolabel.readWav(card.files[session.audioFile])
            start, stop = session.audioSpan
            np.testing.assert_array_equal(samples, pyautolabel.quantizeAudio(audio[start:stop]),
                                          "seed %d %s" % (seed, session.audioFile))
            frame = pyautolabel.readVibrationCsv(card.files[session.vibrationFile])
            start, stop = session.vibrationSpan
            for column, axis in zip((frame.ax, frame.ay, frame.az), axes):
                expected = np.array([float("%.6g" % v) for v in axis[start:stop]])
                np.testing.assert_array_equal(column, expected, "seed %d %s" % (seed, session.vibrationFile))

        rtcStart = pyautolabel.parseRtc(pyautolabel.RTC_START)
        labels = [label for session in sessions for label in session.labels]
        self.assertEqual(sorted(label.kind for label in labels), sorted(e.kind for e in scenario.events),
                         "seed %d" % (seed,))
        for kind in (DOOR_OPEN, DOOR_CLOSE, WATER_BOILED):
            times = sorted((label.timestamp - rtcStart).total_seconds() for label in labels if label.kind == kind)
            onsets = sorted(e.onset for e in scenario.events if e.kind == kind)
            for t, onset in zip(times, onsets):
                if kind == WATER_BOILED:
                    self.assertTrue(-1e-6 <= t - onset < 0.01 + 1e-6, "seed %d: boil at %r labeled at %r"
                                    % (seed, onset, t))
                else:
                    self.assertAlmostEqual(t, onset, delta=1.0 / 16000, msg="seed %d %s" % (seed, kind))

    def test_seededScenarios(self):
        for seed in self.SEEDS:
            self.checkSeed(seed)


if __name__ == "__main__":
    unittest.main()
