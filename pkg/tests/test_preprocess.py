import datetime
import json
import math
import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings
import hypothesis.strategies as st

import pyautolabel
from pyautolabel import MelConfig, FeatureTensor


def referenceFilterbank(nMels, nFft, rate, fMin=0.0, fMax=None):
    # Triangles drawn one bin at a time, straight from the HTK mel formulas.
    fMax = rate / 2.0 if fMax is None else fMax
    toMel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
    toHz = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    melEdges = [toMel(fMin) + i * (toMel(fMax) - toMel(fMin)) / (nMels + 1) for i in range(nMels + 2)]
    hzEdges = [toHz(m) for m in melEdges]
    bank = np.zeros((nMels, nFft // 2 + 1))
    for m in range(nMels):
        left, center, right = hzEdges[m], hzEdges[m + 1], hzEdges[m + 2]
        for k in range(nFft // 2 + 1):
            f = k * rate / float(nFft)
            if left < f <= center:
                bank[m, k] = (f - left) / (center - left)
            elif center < f < right:
                bank[m, k] = (right - f) / (right - center)
    return bank


def referenceMelPower(audio, nMels, nFft, hop, rate):
    padded = np.pad(audio, nFft // 2, mode="reflect")
    n = np.arange(nFft)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / nFft)
    dft = np.exp(-2j * np.pi * np.outer(np.arange(nFft // 2 + 1), n) / nFft)
    frames = []
    for t in range(len(audio) // hop + 1):
        segment = padded[t * hop:t * hop + nFft] * window
        frames.append(np.abs(dft @ segment) ** 2)
    return referenceFilterbank(nMels, nFft, rate) @ np.array(frames).T


class TestPadding(unittest.TestCase):
    def test_padToMax(self):
        padded = pyautolabel.padToMax([[1.0, 2.0, 3.0, 4.0], [5.0], [6.0, 7.0, 8.0]])
        np.testing.assert_array_equal(padded, [[1, 2, 3, 4], [0, 5, 0, 0], [6, 7, 8, 0]])

    def test_multiChannel(self):
        padded = pyautolabel.padToMax([np.ones((3, 5)), np.ones((3, 2))])
        self.assertEqual(padded.shape, (2, 3, 5))
        np.testing.assert_array_equal(padded[1, 0], [0, 1, 1, 0, 0])
        with self.assertRaises(pyautolabel.DatasetException):
            pyautolabel.padToMax([np.ones((3, 5)), np.ones((2, 5))])

    def test_empty(self):
        with self.assertRaises(pyautolabel.DatasetException):
            pyautolabel.padToMax([])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), min_size=1, max_size=8))
    def test_paddingIsIdempotent(self, signals):
        once = pyautolabel.padToMax(signals)
        np.testing.assert_array_equal(pyautolabel.padToMax(list(once)), once)
        self.assertEqual(once.shape, (len(signals), max(len(s) for s in signals)))


class TestImputeMissing(unittest.TestCase):
    def test_axisMean(self):
        nan = float("nan")
        data = pyautolabel.imputeMissing([[1.0, nan, 3.0], [nan, 4.0, 4.0], [1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(data, [[1, 2, 3], [4, 4, 4], [1, 2, 3]])

    def test_frameInput(self):
        frame = pyautolabel.readVibrationCsv("timestamp,ax,ay,az\n0.0,1,2,\n0.1,3,,6\n")
        np.testing.assert_array_equal(pyautolabel.imputeMissing(frame), [[1, 3], [2, 2], [6, 6]])

    def test_allMissing(self):
        nan = float("nan")
        with self.assertRaises(pyautolabel.DatasetException) as cm:
            pyautolabel.imputeMissing([[1.0, 2.0], [nan, nan], [1.0, 2.0]], name="session_0007")
        self.assertIn("session_0007", str(cm.exception))
        self.assertIn("ay", str(cm.exception))


class TestMelSpectrogram(unittest.TestCase):
    def test_filterbank(self):
        bank = pyautolabel.melFilterbank(MelConfig(), 16000)
        self.assertEqual(bank.shape, (64, 513))
        self.assertGreaterEqual(bank.min(), 0.0)
        self.assertLessEqual(bank.max(), 1.0 + 1e-12)
        self.assertTrue(np.all(bank.max(axis=1) > 0), "a mel filter covers no FFT bin")
        np.testing.assert_allclose(bank, referenceFilterbank(64, 1024, 16000), atol=1e-9)

    def test_frameCount(self):
        spectrogram = pyautolabel.melSpectrogram(np.zeros(16000), MelConfig(), 16000)
        self.assertEqual(spectrogram.shape, (64, 32))
        np.testing.assert_allclose(spectrogram, -100.0)

    def test_matchesBruteForceDft(self):
        rng = np.random.default_rng(0)
        cfg = MelConfig(nMels=20, nFft=256, hopLength=128)
        for trial in range(50):
            audio = rng.normal(0.0, 0.1, size=int(rng.integers(200, 4096)))
            np.testing.assert_allclose(pyautolabel.melPowerSpectrogram(audio, cfg, 8000),
                                       referenceMelPower(audio, 20, 256, 128, 8000), rtol=0, atol=1e-6)

    def test_defaultConfigMatchesBruteForceDft(self):
        rng = np.random.default_rng(2)
        for trial in range(4):
            # A silent stretch pushes part of the spectrogram onto the topDb floor.
            audio = np.concatenate([np.zeros(int(rng.integers(0, 6000))),
                                    rng.normal(0.0, 0.2, size=int(rng.integers(1000, 12000)))])
            power = pyautolabel.melPowerSpectrogram(audio, MelConfig(), 16000)
            expected = referenceMelPower(audio, 64, 1024, 512, 16000)
            np.testing.assert_allclose(power, expected, rtol=1e-9, atol=1e-9)
            db = 10.0 * np.log10(np.maximum(expected, 1e-10))
            db = np.maximum(db, db.max() - 80.0)
            np.testing.assert_allclose(pyautolabel.melSpectrogram(audio, MelConfig(), 16000), db, rtol=0, atol=1e-6)

    def test_sineLandsInItsBand(self):
        t = np.arange(16000) / 16000.0
        power = pyautolabel.melPowerSpectrogram(0.5 * np.sin(2 * np.pi * 1000.0 * t), MelConfig(), 16000)
        bank = pyautolabel.melFilterbank(MelConfig(), 16000)
        near = np.flatnonzero(bank[:, 63:66].max(axis=1) > 0)  # 1000 Hz is FFT bin 64.
        energy = power.sum(axis=1)
        self.assertGreater(energy[near].sum() / energy.sum(), 0.9)

    def test_topDbClamp(self):
        rng = np.random.default_rng(1)
        audio = np.concatenate([np.zeros(8000), rng.normal(0, 0.5, 8000)])
        db = pyautolabel.melSpectrogram(audio, MelConfig(), 16000)
        self.assertAlmostEqual(db.max() - db.min(), 80.0, places=6)
        db = pyautolabel.melSpectrogram(audio, MelConfig(topDb=20.0), 16000)
        self.assertAlmostEqual(db.max() - db.min(), 20.0, places=6)

    def test_badInput(self):
        with self.assertRaises(pyautolabel.DatasetException):
            pyautolabel.melSpectrogram(np.zeros(0))
        with self.assertRaises(pyautolabel.NonFiniteException):
            pyautolabel.melSpectrogram(np.array([0.0, float("nan"), 0.0] * 1000))
        with self.assertRaises(pyautolabel.ConfigurationException):
            pyautolabel.melSpectrogram(np.zeros(4000), MelConfig(nFft=1000))
        with self.assertRaises(pyautolabel.ConfigurationException):
            pyautolabel.checkMelConfig(MelConfig(fMax=9000.0), 16000)


class TestSplitDataset(unittest.TestCase):
    def setUp(self):
        self.labels = np.array([0] * 40 + [1] * 29 + [2] * 37)

    def test_counts(self):
        plan = pyautolabel.splitDataset(self.labels, seed=42)
        self.assertEqual(plan.classCounts["train"], {"door_open": 24, "door_close": 17, "water_boiled": 22})
        self.assertEqual(plan.classCounts["validation"], {"door_open": 8, "door_close": 6, "water_boiled": 8})
        self.assertEqual(plan.classCounts["test"], {"door_open": 8, "door_close": 6, "water_boiled": 7})
        self.assertEqual(len(plan.test), 21)
        self.assertEqual(len(plan.folds), 4)
        self.assertEqual(plan.folds[0], plan.validation)
        self.assertEqual([len(f) for f in plan.folds[1:]], [21, 21, 21])

    def test_determinism(self):
        self.assertEqual(pyautolabel.splitDataset(self.labels, 42), pyautolabel.splitDataset(self.labels, 42))
        self.assertNotEqual(pyautolabel.splitDataset(self.labels, 42).test,
                            pyautolabel.splitDataset(self.labels, 43).test)

    def test_tooFewSamples(self):
        with self.assertRaises(pyautolabel.DatasetException):
            pyautolabel.splitDataset([0] * 10 + [1] * 4 + [2] * 10, 0)
        with self.assertRaises(pyautolabel.DatasetException):
            pyautolabel.splitDataset([0] * 10 + [5] * 10, 0)

    @settings(max_examples=100, deadline=None)
    @given(counts=st.tuples(st.integers(5, 60), st.integers(5, 60), st.integers(5, 60)),
           seed=st.integers(0, 2 ** 32))
    def test_splitIntegrity(self, counts, seed):
        labels = np.repeat([0, 1, 2], counts)
        plan = pyautolabel.splitDataset(labels, seed)
        inFolds = [i for fold in plan.folds for i in fold]
        self.assertEqual(sorted(inFolds), sorted(plan.train + plan.validation))
        self.assertEqual(len(set(inFolds)), len(inFolds))
        self.assertFalse(set(plan.test) & set(inFolds))
        self.assertEqual(sorted(inFolds + plan.test), list(range(len(labels))))
        for classId, n in enumerate(counts):
            members = [i for i in plan.test if labels[i] == classId]
            exact = n / 5.0
            self.assertLessEqual(abs(len(members) - exact), 1.0)


class TestOversampleAndNormalize(unittest.TestCase):
    def test_oversample(self):
        labels = np.array([0] * 10 + [1] * 4 + [2] * 7)
        indices = np.arange(21)
        balanced = pyautolabel.oversample(indices, labels, seed=3)
        self.assertEqual(len(balanced), 30)
        np.testing.assert_array_equal(balanced[:21], indices)
        self.assertEqual(np.bincount(labels[balanced]).tolist(), [10, 10, 10])
        np.testing.assert_array_equal(balanced, pyautolabel.oversample(indices, labels, seed=3))

    def test_oversampleMissingClass(self):
        with self.assertRaises(pyautolabel.DatasetException):
            pyautolabel.oversample([0, 1], np.array([0, 1, 2]), seed=0)

    def test_normalize(self):
        rng = np.random.default_rng(2)
        features = rng.normal([[[3.0]], [[-2.0]]], [[[2.0]], [[0.5]]], size=(10, 2, 30))
        stats = pyautolabel.fitNormalization(features)
        normalized = pyautolabel.normalize(features, stats)
        np.testing.assert_allclose(normalized.mean(axis=(0, 2)), [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(normalized.std(axis=(0, 2)), [1.0, 1.0], atol=1e-12)

    def test_zeroVarianceChannel(self):
        features = np.ones((4, 3, 5))
        features[:, 0, :] = np.arange(5)
        features[:, 2, :] = np.arange(5)
        with self.assertRaises(pyautolabel.DatasetException) as cm:
            pyautolabel.fitNormalization(features)
        self.assertIn("channel 1", str(cm.exception))


class TestSessionFiles(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.TemporaryDirectory()
        self.dir = self.tempdir.name
        rng = np.random.default_rng(4)
        start = pyautolabel.parseRtc(pyautolabel.RTC_START)
        for i, (kind, seconds) in enumerate((("door_open", 1.0), ("water_boiled", 1.5), ("door_close", 1.25))):
            stem = os.path.join(self.dir, "session_%04d" % (i,))
            audio = pyautolabel.quantizeAudio(rng.normal(0, 0.1, int(seconds * 16000)))
            with open(stem + ".wav", "wb") as fileObj:
                fileObj.write(pyautolabel.writeWav(audio, 16000))
            n = int(seconds * 4000)
            ax = rng.normal(0, 0.01, n)
            ax[::97] = np.nan
            with open(stem + "_vibration.csv", "w") as fileObj:
                fileObj.write(pyautolabel.writeVibrationCsv(np.arange(n) / 4000.0, ax, rng.normal(0, 0.01, n),
                                                            rng.normal(0, 0.01, n)))
            with open(stem + "_labels.csv", "w") as fileObj:
                fileObj.write(pyautolabel.writeLabelCsv([pyautolabel.LabelRecord(start, kind)]))
        self.names = ["session_0000", "session_0001", "session_0002"]

    def tearDown(self):
        self.tempdir.cleanup()

    def test_extractFeatures(self):
        recordings = pyautolabel.loadSessionRecordings(self.dir, self.names)
        self.assertEqual([r["label"] for r in recordings], [0, 2, 1])

        audio = pyautolabel.extractAudioFeatures(recordings)
        self.assertEqual(audio.data.shape, (3, 64, 24000 // 512 + 1))
        self.assertEqual(audio.labels.tolist(), [0, 2, 1])
        self.assertEqual(audio.provenance, ["session_0000.wav", "session_0001.wav", "session_0002.wav"])

        vibration = pyautolabel.extractVibrationFeatures(recordings)
        self.assertEqual(vibration.data.shape, (3, 3, 6000))
        self.assertFalse(np.isnan(vibration.data).any())

    def test_corruptWavNamesTheFile(self):
        path = os.path.join(self.dir, "session_0001.wav")
        with open(path, "rb") as fileObj:
            data = fileObj.read()
        with open(path, "wb") as fileObj:
            fileObj.write(data[:-100])
        with self.assertRaises(pyautolabel.FormatException) as cm:
            pyautolabel.loadSessionRecordings(self.dir, self.names)
        self.assertIn("session_0001.wav", str(cm.exception))

    def test_missingFile(self):
        with self.assertRaises(pyautolabel.FormatException) as cm:
            pyautolabel.loadSessionRecordings(self.dir, ["session_0009"])
        self.assertIn("session_0009.wav", str(cm.exception))

    def test_audioScaleMatchesQuantizer(self):
        stem = os.path.join(self.dir, "session_0003")
        audio = np.array([1.0, -1.0, 0.4, -0.25, 0.0, 0.999] * 200)
        with open(stem + ".wav", "wb") as fileObj:
            fileObj.write(pyautolabel.writeWav(pyautolabel.quantizeAudio(audio), 16000))
        start = pyautolabel.parseRtc(pyautolabel.RTC_START)
        with open(stem + "_labels.csv", "w") as fileObj:
            fileObj.write(pyautolabel.writeLabelCsv([pyautolabel.LabelRecord(start, "door_close")]))
        recording, = pyautolabel.loadSessionRecordings(self.dir, ["session_0003"])
        self.assertEqual(recording["audio"].max(), 1.0)
        self.assertEqual(recording["audio"].min(), -1.0)
        np.testing.assert_allclose(recording["audio"], audio, rtol=0, atol=0.5 / pyautolabel.PCM_SCALE)
        self.assertIsNone(recording["vibration"])

    def test_multipleLabelsWarn(self):
        start = pyautolabel.parseRtc(pyautolabel.RTC_START)
        labels = [pyautolabel.LabelRecord(start, "water_boiled"),
                  pyautolabel.LabelRecord(start + datetime.timedelta(seconds=1), "door_open")]
        with open(os.path.join(self.dir, "session_0001_labels.csv"), "w") as fileObj:
            fileObj.write(pyautolabel.writeLabelCsv(labels))
        with self.assertLogs("pyautolabel._pyautolabel_preprocess", level="WARNING") as cm:
            recordings = pyautolabel.loadSessionRecordings(self.dir, self.names)
        self.assertEqual([r["label"] for r in recordings], [0, 2, 1])
        self.assertEqual(len(cm.output), 1)
        self.assertIn("session_0001", cm.output[0])
        self.assertIn("dropping door_open", cm.output[0])

    def test_featureBundle(self):
        tensor = FeatureTensor(np.arange(24.0).reshape(2, 3, 4), np.array([1, 2]), ["a.wav", "b.wav"])
        stem = os.path.join(self.dir, "audio")
        pyautolabel.saveFeatureBundle(stem, tensor, {"note": "x"})
        loaded, metadata = pyautolabel.loadFeatureBundle(stem)
        np.testing.assert_array_equal(loaded.data, tensor.data)
        self.assertEqual(loaded.labels.tolist(), [1, 2])
        self.assertEqual(loaded.provenance, ["a.wav", "b.wav"])
        self.assertEqual(metadata["note"], "x")

        with open(stem + ".json") as fileObj:
            sidecar = json.load(fileObj)
        sidecar["shape"] = [3, 3, 4]
        with open(stem + ".json", "w") as fileObj:
            json.dump(sidecar, fileObj)
        with self.assertRaises(pyautolabel.FormatException):
            pyautolabel.loadFeatureBundle(stem)


if __name__ == "__main__":
    unittest.main()
