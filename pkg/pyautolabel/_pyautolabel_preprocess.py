# Preprocessing: turning recorded sessions into fixed-shape feature tensors (mel spectrograms for audio, raw x/y/z
# series for vibration), and the dataset bookkeeping around them (stratified splits, folds, oversampling,
# normalization, feature bundles on disk).

import json
import logging
import os

import numpy as np

import pyautolabel
from pyautolabel import (
    EVENT_KINDS,
    NUM_CLASSES,
    AUDIO_RATE,
    PCM_SCALE,
    MelConfig,
    FeatureTensor,
    SplitPlan,
    VibrationFrame,
    ConfigurationException,
    DatasetException,
    FormatException,
    NonFiniteException,
    kindToClassId,
)
from ._pyautolabel_storage import readWav, readVibrationCsv, readLabelCsv

log = logging.getLogger(__name__)

AXIS_NAMES = ("ax", "ay", "az")
AMIN = 1e-10  # Power floor before taking dB.


def checkMelConfig(cfg, rate=AUDIO_RATE):
    """Raises ``ConfigurationException`` if the ``MelConfig`` is invalid for the sample ``rate``. Returns cfg."""
    if not isinstance(cfg.nFft, (int, np.integer)) or cfg.nFft < 2 or cfg.nFft & (cfg.nFft - 1):
        raise ConfigurationException("nFft must be a power of two, not %r" % (cfg.nFft,))
    if not 0 < cfg.hopLength <= cfg.nFft:
        raise ConfigurationException("hopLength must be in (0, nFft], not %r" % (cfg.hopLength,))
    if not cfg.topDb > 0:
        raise ConfigurationException("topDb must be greater than 0, not %r" % (cfg.topDb,))
    if cfg.nMels <= 0:
        raise ConfigurationException("nMels must be greater than 0, not %r" % (cfg.nMels,))
    fMax = rate / 2.0 if cfg.fMax is None else cfg.fMax
    if not 0 <= cfg.fMin < fMax <= rate / 2.0:
        raise ConfigurationException("need 0 <= fMin < fMax <= rate / 2, got fMin=%r fMax=%r" % (cfg.fMin, fMax))
    return cfg


def padToMax(signals):
    """
    Returns an array stacking the ``signals`` after zero-padding each one along its last axis to the longest length.
    A signal ``d`` samples short gets ``d // 2`` zeros in front and the rest at the end.

    Raises:
      DatasetException: If ``signals`` is empty or the signals disagree on their leading shape.
    """
    signals = [np.asarray(s, dtype=np.float64) for s in signals]
    if not signals:
        raise DatasetException("padToMax() needs at least one signal")
    leading = set(s.shape[:-1] for s in signals)
    if len(leading) != 1:
        raise DatasetException("signals must agree on every axis but the last, got shapes %s"
                               % (sorted(s.shape for s in signals),))
    longest = max(s.shape[-1] for s in signals)
    padded = []
    for s in signals:
        d = longest - s.shape[-1]
        widths = [(0, 0)] * (s.ndim - 1) + [(d // 2, d - d // 2)]
        padded.append(np.pad(s, widths))
    return np.stack(padded)


def imputeMissing(triplets, name="recording"):
    """
    Returns a complete 3 x T array for one recording's vibration values, where each NaN cell is replaced by the mean
    of the other values on the same axis. ``triplets`` is a ``VibrationFrame`` or a 3 x T array-like.

    Raises:
      DatasetException: If an axis has no values at all. The message names the recording and the axis.
    """
    if isinstance(triplets, VibrationFrame):
        triplets = (triplets.ax, triplets.ay, triplets.az)
    data = np.array(triplets, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != 3:
        raise DatasetException("vibration values of %s must be 3 x T, not %s" % (name, data.shape))
    for axis in range(3):
        row = data[axis]
        missing = np.isnan(row)
        if not missing.any():
            continue
        if missing.all():
            raise DatasetException("%s has no %s values to impute from" % (name, AXIS_NAMES[axis]))
        row[missing] = row[~missing].mean()
    return data


def _hzToMel(frequency):
    return 2595.0 * np.log10(1.0 + np.asarray(frequency, dtype=np.float64) / 700.0)


def _melToHz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def melFilterbank(cfg=None, rate=AUDIO_RATE):
    """
    Returns the ``nMels`` x ``nFft // 2 + 1`` matrix of triangular filters, spaced evenly on the HTK mel scale
    between ``fMin`` and ``fMax``, with a peak weight of 1 and no area normalization.
    """
    if cfg is None:
        cfg = MelConfig()
    fMax = rate / 2.0 if cfg.fMax is None else cfg.fMax
    binFrequencies = np.fft.rfftfreq(cfg.nFft, 1.0 / rate)
    edges = _melToHz(np.linspace(_hzToMel(cfg.fMin), _hzToMel(fMax), cfg.nMels + 2))
    widths = np.diff(edges)
    ramps = edges[:, np.newaxis] - binFrequencies[np.newaxis, :]
    lower = -ramps[:-2] / widths[:-1, np.newaxis]
    upper = ramps[2:] / widths[1:, np.newaxis]
    return np.maximum(0.0, np.minimum(lower, upper))


def _frames(audio, cfg):
    padded = np.pad(audio, cfg.nFft // 2, mode="reflect")
    count = len(audio) // cfg.hopLength + 1
    windows = np.lib.stride_tricks.sliding_window_view(padded, cfg.nFft)[::cfg.hopLength][:count]
    return windows


def _checkAudio(audio):
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size < 1:
        raise DatasetException("audio must be a 1-D sequence of at least 1 sample")
    if not np.all(np.isfinite(audio)):
        raise NonFiniteException("audio has NaN or infinite samples")
    return audio


def melPowerSpectrogram(audio, cfg=None, rate=AUDIO_RATE):
    """
    Returns the mel power spectrogram (``nMels`` x frames) of ``audio``: a centered STFT over reflect-padded audio
    with a periodic Hann window, squared magnitudes, then the mel filterbank. There are ``len(audio) // hopLength
    + 1`` frames.
    """
    if cfg is None:
        cfg = MelConfig()
    checkMelConfig(cfg, rate)
    audio = _checkAudio(audio)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.nFft) / cfg.nFft)
    spectrum = np.fft.rfft(_frames(audio, cfg) * window, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    return melFilterbank(cfg, rate) @ power.T


def melSpectrogram(audio, cfg=None, rate=AUDIO_RATE):
    """
    Returns the mel spectrogram of ``audio`` in dB: ``10 * log10(max(power, 1e-10))``, clamped to no more than
    ``topDb`` below the spectrogram's own maximum.

    Raises:
      DatasetException: If the audio is empty.
      NonFiniteException: If the audio has NaN or infinite samples.
    """
    if cfg is None:
        cfg = MelConfig()
    db = 10.0 * np.log10(np.maximum(melPowerSpectrogram(audio, cfg, rate), AMIN))
    return np.maximum(db, db.max() - cfg.topDb)


def _largestRemainder(n, ratios):
    total = float(sum(ratios))
    exact = [n * r / total for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    # Ties go to the earlier part.
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def splitDataset(labels, seed, ratios=(3, 1, 1), folds=4):
    """
    Returns a ``SplitPlan`` dividing sample indices into train, validation and test sets in the ratio ``ratios``
    within each class, with per-class counts rounded by the largest-remainder rule.

    The plan's ``folds`` partition train and validation together: the first fold is the validation set and the
    training samples are dealt out over the other ``folds - 1`` folds, class by class, so every fold is stratified.

    Raises:
      DatasetException: If a class has fewer than ``sum(ratios)`` samples.
    """
    labels = np.asarray(labels)
    unknown = set(np.unique(labels).tolist()) - set(range(NUM_CLASSES))
    if unknown:
        raise DatasetException("labels must be class ids 0..%d, found %s" % (NUM_CLASSES - 1, sorted(unknown)))
    rng = np.random.default_rng(seed)
    minimum = int(sum(ratios))
    train, validation, test = [], [], []
    foldLists = [[] for i in range(folds)]
    counts = {"train": {}, "validation": {}, "test": {}}
    dealt = 0
    for classId, kind in enumerate(EVENT_KINDS):
        members = np.flatnonzero(labels == classId)
        if len(members) < minimum:
            raise DatasetException("class %s has %d samples; at least %d are needed to split it %s"
                                   % (kind, len(members), minimum, ":".join(str(r) for r in ratios)))
        members = members[rng.permutation(len(members))]
        nTrain, nValidation, nTest = _largestRemainder(len(members), ratios)
        classTrain = members[:nTrain]
        classValidation = members[nTrain:nTrain + nValidation]
        classTest = members[nTrain + nValidation:]
        train.extend(classTrain.tolist())
        validation.extend(classValidation.tolist())
        test.extend(classTest.tolist())
        foldLists[0].extend(classValidation.tolist())
        for j, index in enumerate(classTrain.tolist()):
            foldLists[1 + (j + dealt) % (folds - 1)].append(index)
        dealt += len(classTrain)
        counts["train"][kind] = int(nTrain)
        counts["validation"][kind] = int(nValidation)
        counts["test"][kind] = int(nTest)
    return SplitPlan(
        train=sorted(train),
        validation=sorted(validation),
        test=sorted(test),
        folds=[sorted(f) for f in foldLists],
        classCounts=counts,
        seed=seed,
    )


def oversample(indices, labels, seed, nClasses=NUM_CLASSES):
    """
    Returns the ``indices`` followed by extra indices drawn with replacement from the minority classes, so that
    every class ends up as frequent as the largest one. ``labels`` is indexed by the sample indices.

    Raises:
      DatasetException: If a class has no samples among ``indices``.
    """
    indices = np.asarray(indices, dtype=np.int64)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    byClass = [indices[labels[indices] == c] for c in range(nClasses)]
    for c, members in enumerate(byClass):
        if len(members) == 0:
            raise DatasetException("can't oversample: class %s has no samples" % (EVENT_KINDS[c],))
    target = max(len(members) for members in byClass)
    extras = [rng.choice(members, size=target - len(members), replace=True) for members in byClass]
    return np.concatenate([indices] + extras).astype(np.int64)


def fitNormalization(features):
    """
    Returns ``(mean, std)`` arrays with one value per channel of a batch x channel x time array, taken over batch and
    time together.

    Raises:
      DatasetException: If a channel has zero variance. The message names the channel.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise DatasetException("features must be batch x channel x time, not %s" % (features.shape,))
    mean = features.mean(axis=(0, 2))
    std = features.std(axis=(0, 2))
    flat = np.flatnonzero(~(std > 0))
    if flat.size:
        raise DatasetException("channel %d has zero variance in the training data" % (flat[0],))
    return mean, std


def normalize(features, stats):
    """Returns ``features`` standardized per channel with the ``(mean, std)`` from ``fitNormalization()``."""
    mean, std = stats
    features = np.asarray(features)
    return (features - mean[np.newaxis, :, np.newaxis]) / std[np.newaxis, :, np.newaxis]


def _readFile(path, mode="rb"):
    try:
        with open(path, mode) as fileObj:
            return fileObj.read()
    except OSError as excObj:
        raise FormatException("Could not read %s: %s" % (path, excObj))


def loadSessionRecordings(sessionDir, sessionNames):
    """
    Returns a list of dicts, one per session stem in ``sessionNames`` (like ``'session_0003'``), with the keys
    ``name``, ``label`` (a class id taken from the session's first label), ``audio`` (float samples in [-1, 1]),
    ``rate`` and ``vibration`` (a ``VibrationFrame``, or None if the session has no vibration file).

    A session with several labels is classified by its first label only, and a warning names the labels that are
    dropped. ``imputeMissing()`` runs later, so the vibration frame may still hold gaps.

    Raises:
      FormatException: If a file is missing or corrupt. The message names the file.
    """
    recordings = []
    for name in sessionNames:
        paths = {
            "audio": os.path.join(sessionDir, name + ".wav"),
            "vibration": os.path.join(sessionDir, name + "_vibration.csv"),
            "labels": os.path.join(sessionDir, name + "_labels.csv"),
        }
        try:
            samples, rate = readWav(_readFile(paths["audio"]))
        except FormatException as excObj:
            raise FormatException("%s: %s" % (paths["audio"], excObj))
        try:
            labels = readLabelCsv(_readFile(paths["labels"]))
        except FormatException as excObj:
            raise FormatException("%s: %s" % (paths["labels"], excObj))
        if not labels:
            raise FormatException("%s: the session has no labels" % (paths["labels"],))
        if len(labels) > 1:
            log.warning("%s has %d labels; classifying it as %s and dropping %s", name, len(labels), labels[0].kind,
                        ", ".join(label.kind for label in labels[1:]))
        vibration = None
        if os.path.exists(paths["vibration"]):
            try:
                vibration = readVibrationCsv(_readFile(paths["vibration"]))
            except FormatException as excObj:
                raise FormatException("%s: %s" % (paths["vibration"], excObj))
        recordings.append({
            "name": name,
            "label": kindToClassId(labels[0].kind),
            "audio": samples.astype(np.float64) / PCM_SCALE,
            "rate": rate,
            "vibration": vibration,
        })
    return recordings


def extractAudioFeatures(recordings, cfg=None):
    """
    Returns a ``FeatureTensor`` of mel spectrograms (batch x ``nMels`` x frames) for the recordings from
    ``loadSessionRecordings()``. Audio is zero-padded to the longest recording first.
    """
    if cfg is None:
        cfg = MelConfig()
    if not recordings:
        raise DatasetException("no recordings to extract features from")
    rates = set(r["rate"] for r in recordings)
    if len(rates) != 1:
        raise DatasetException("recordings have different sample rates: %s" % (sorted(rates),))
    rate = rates.pop()
    padded = padToMax([r["audio"] for r in recordings])
    data = np.stack([melSpectrogram(audio, cfg, rate) for audio in padded])
    labels = np.array([r["label"] for r in recordings], dtype=np.int64)
    log.info("Extracted audio features %s from %d recordings", data.shape, len(recordings))
    return FeatureTensor(data, labels, [r["name"] + ".wav" for r in recordings])


def extractVibrationFeatures(recordings):
    """
    Returns a ``FeatureTensor`` of raw vibration series (batch x 3 x time) for the recordings from
    ``loadSessionRecordings()``. Missing values are imputed per recording, then every recording is zero-padded to the
    longest one.
    """
    recordings = [r for r in recordings if r["vibration"] is not None]
    if not recordings:
        raise DatasetException("no vibration recordings to extract features from")
    data = padToMax([imputeMissing(r["vibration"], r["name"]) for r in recordings])
    labels = np.array([r["label"] for r in recordings], dtype=np.int64)
    log.info("Extracted vibration features %s from %d recordings", data.shape, len(recordings))
    return FeatureTensor(data, labels, [r["name"] + "_vibration.csv" for r in recordings])


def saveFeatureBundle(stem, tensor, metadata=None):
    """
    Writes ``stem + '.npy'`` with the tensor's data and a JSON sidecar ``stem + '.json'`` with its shape, labels,
    provenance and any extra ``metadata``.
    """
    data = np.ascontiguousarray(tensor.data, dtype=np.float64)
    np.save(stem + ".npy", data, allow_pickle=False)
    sidecar = {
        "version": pyautolabel.__version__,
        "shape": list(data.shape),
        "labels": [int(v) for v in tensor.labels],
        "provenance": list(tensor.provenance),
    }
    sidecar.update(metadata or {})
    with open(stem + ".json", "w", newline="\n") as fileObj:
        json.dump(sidecar, fileObj, indent=2, sort_keys=True)
        fileObj.write("\n")


def loadFeatureBundle(stem):
    """
    Returns ``(tensor, metadata)`` for a bundle written by ``saveFeatureBundle()``.

    Raises:
      FormatException: If either file is missing or they don't agree with each other.
    """
    try:
        with open(stem + ".json") as fileObj:
            metadata = json.load(fileObj)
    except (OSError, ValueError) as excObj:
        raise FormatException("Could not read feature bundle sidecar %s.json: %s" % (stem, excObj))
    try:
        data = np.load(stem + ".npy", allow_pickle=False)
    except (OSError, ValueError) as excObj:
        raise FormatException("Could not read feature bundle array %s.npy: %s" % (stem, excObj))
    if list(data.shape) != metadata.get("shape") or len(metadata.get("labels", [])) != data.shape[0]:
        raise FormatException("Feature bundle %s: array shape %s doesn't match its sidecar" % (stem, data.shape))
    tensor = FeatureTensor(data, np.array(metadata["labels"], dtype=np.int64), metadata["provenance"])
    return tensor, metadata
