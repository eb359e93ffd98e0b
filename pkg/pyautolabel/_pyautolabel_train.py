# Training and evaluation: repeated training runs over cross-validation folds, early stopping, test-set
# confusion matrices, per-fold accuracy statistics, and the result files that record them.

import concurrent.futures
import logging
import math
import os

import numpy as np

import pyautolabel
from pyautolabel import (
    EVENT_KINDS,
    NUM_CLASSES,
    TrainConfig,
    RunRecord,
    FoldReport,
    ConfigurationException,
    DatasetException,
    FormatException,
    NonFiniteException,
    ShapeException,
    _csvRows,
    _csvText,
)
from ._pyautolabel_nn import LAYER_ORDERS, EventCNN, adamInit, adamStep, crossEntropy, stepLr
from ._pyautolabel_preprocess import fitNormalization, normalize, oversample

log = logging.getLogger(__name__)

RESULTS_HEADER = "fold,run,seed,accuracy,epochs_trained,stopped_early"
CONFUSION_HEADER = "true\\pred," + ",".join(EVENT_KINDS)


def checkTrainConfig(config):
    """Raises ``ConfigurationException`` if the ``TrainConfig`` has invalid values. Returns the config."""
    for name in ("epochs", "runs", "batchSize", "stepSize", "patience", "workers"):
        value = getattr(config, name)
        if not isinstance(value, (int, np.integer)) or value < 1:
            raise ConfigurationException("%s must be a positive integer, not %r" % (name, value))
    if not config.lr > 0:
        raise ConfigurationException("lr must be greater than 0, not %r" % (config.lr,))
    if not 0 < config.gamma <= 1:
        raise ConfigurationException("gamma must be in (0, 1], not %r" % (config.gamma,))
    if not (0 <= config.beta1 < 1 and 0 <= config.beta2 < 1 and config.eps > 0):
        raise ConfigurationException("beta1 and beta2 must be in [0, 1) and eps greater than 0")
    if config.layerOrder not in LAYER_ORDERS:
        raise ConfigurationException("layerOrder must be one of %s, not %r" % (LAYER_ORDERS, config.layerOrder))
    if config.dtype not in ("float32", "float64"):
        raise ConfigurationException("dtype must be 'float32' or 'float64', not %r" % (config.dtype,))
    return config


def confusion(predictions, labels, nClasses=NUM_CLASSES):
    """
    Returns the ``nClasses`` x ``nClasses`` confusion matrix: ``cm[i][j]`` counts samples of true class ``i``
    predicted as class ``j``.

    Raises:
      DatasetException: If there are no samples, or a class id is out of range.
      ShapeException: If ``predictions`` and ``labels`` differ in length.
    """
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if predictions.shape != labels.shape:
        raise ShapeException("%d predictions but %d labels" % (predictions.size, labels.size))
    if labels.size == 0:
        raise DatasetException("can't build a confusion matrix from zero samples")
    for values in (predictions, labels):
        if values.min() < 0 or values.max() >= nClasses:
            raise DatasetException("class ids must be in 0..%d" % (nClasses - 1,))
    cm = np.zeros((nClasses, nClasses), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def accuracy(cm):
    """Returns the fraction of correct predictions in a confusion matrix: trace / total."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise DatasetException("confusion matrix is empty")
    return float(np.trace(cm)) / float(total)


def lowerMedian(values):
    """Returns the median of ``values``; for an even count, the lower of the two middle values."""
    ordered = sorted(values)
    if not ordered:
        raise DatasetException("lowerMedian() of an empty sequence")
    return ordered[(len(ordered) - 1) // 2]


def _runSeed(seed, fold, run):
    return int(np.random.SeedSequence([int(seed), int(fold), int(run)]).generate_state(1, np.uint32)[0])


def trainRun(trainX, trainY, valX, valY, config=None, seed=0):
    """
    Trains a fresh ``EventCNN`` and returns ``(model, epochsTrained, stoppedEarly)``.

    Each epoch goes over the shuffled training set in mini-batches with Adam at the step-decayed learning rate, then
    scores the validation set in eval mode. Training stops once the validation loss hasn't improved for ``patience``
    epochs, and the model is left with the weights of its best epoch, in eval mode. With an empty validation set the
    training loss is watched instead.

    Raises:
      NonFiniteException: If the loss or a gradient stops being finite.
    """
    if config is None:
        config = TrainConfig()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.dtype)
    trainX = np.asarray(trainX, dtype=dtype)
    trainY = np.asarray(trainY, dtype=np.int64)
    if len(valY):
        valX, valY = np.asarray(valX, dtype=dtype), np.asarray(valY, dtype=np.int64)
    else:
        valX, valY = trainX, trainY
    model = EventCNN(trainX.shape[1], seed=int(rng.integers(2 ** 32)), layerOrder=config.layerOrder, dtype=dtype,
                     bnMomentum=config.bnMomentum, bnEps=config.bnEps)
    state = adamInit(model.params)

    bestLoss, bestState, waited = math.inf, model.stateDict(), 0
    epochsTrained, stoppedEarly = 0, False
    for epoch in range(config.epochs):
        lr = stepLr(epoch, config.lr, config.stepSize, config.gamma)
        model.train()
        order = rng.permutation(len(trainY))
        for start in range(0, len(order), config.batchSize):
            batch = order[start:start + config.batchSize]
            loss, gradLogits = crossEntropy(model.forward(trainX[batch]), trainY[batch])
            if not np.isfinite(loss):
                raise NonFiniteException("training loss is not finite at epoch %d" % (epoch,))
            adamStep(model.params, model.backward(gradLogits), state, lr, config.beta1, config.beta2, config.eps)
        epochsTrained = epoch + 1

        model.eval()
        valLoss = float(crossEntropy(model.forward(valX), valY)[0])
        if valLoss < bestLoss:
            bestLoss, bestState, waited = valLoss, model.stateDict(), 0
        else:
            waited += 1
            if waited >= config.patience:
                stoppedEarly = True
                break
    model.loadStateDict(bestState)
    model.eval()
    return model, epochsTrained, stoppedEarly


def _trainAndTest(task):
    # Runs in a worker process when TrainConfig.workers > 1, so it takes and returns plain picklable values.
    X, y, trainIdx, valIdx, testIdx, config, fold, run, seed = task
    rng = np.random.default_rng(seed)
    trainIdx = oversample(trainIdx, y, int(rng.integers(2 ** 32)))
    if config.oversampleEval:
        valIdx = oversample(valIdx, y, int(rng.integers(2 ** 32)))
        testIdx = oversample(testIdx, y, int(rng.integers(2 ** 32)))
    try:
        model, epochs, stoppedEarly = trainRun(X[trainIdx], y[trainIdx], X[valIdx], y[valIdx], config,
                                               int(rng.integers(2 ** 32)))
    except NonFiniteException as excObj:
        log.warning("Fold %d run %d diverged: %s", fold, run, excObj)
        return RunRecord(fold, run, seed, float("nan"), 0, False, True, None), None
    cm = confusion(model.predict(X[testIdx]), y[testIdx])
    record = RunRecord(fold, run, seed, accuracy(cm), epochs, stoppedEarly, False, cm)
    log.info("Fold %d run %d: accuracy %.4f after %d epochs", fold, run, record.accuracy, epochs)
    return record, model.stateDict()


def aggregateRuns(records):
    """
    Returns a list of ``FoldReport`` objects, one per fold in ``records`` (a list of ``RunRecord``), in fold order.
    Failed runs are counted but left out of the statistics. The fold's confusion matrix is the one of its most
    accurate run (the earliest, on a tie).
    """
    reports = []
    for fold in sorted(set(r.fold for r in records)):
        runs = sorted((r for r in records if r.fold == fold), key=lambda r: r.run)
        good = [r for r in runs if not r.failed]
        accuracies = [r.accuracy for r in good]
        best = max(good, key=lambda r: r.accuracy) if good else None  # max() keeps the first of equals
        reports.append(FoldReport(
            fold=fold,
            accuracies=[r.accuracy for r in runs],
            minimum=min(accuracies) if good else float("nan"),
            median=lowerMedian(accuracies) if good else float("nan"),
            maximum=max(accuracies) if good else float("nan"),
            confusion=best.confusion if best is not None else None,
            runs=runs,
            failedRuns=len(runs) - len(good),
        ))
    return reports


def runExperiment(features, plan, trainConfig=None, seed=0, folds=None, checkpointDir=None):
    """
    Runs the cross-validation experiment and returns a list of ``FoldReport`` objects.

    For each fold (1-based; ``folds`` picks a subset, default all), the other folds form the training set and the
    fold itself the validation set. Features are standardized with statistics from the fold's training set. Each of
    ``trainConfig.runs`` runs oversamples the training set, trains with early stopping, and is scored once on the
    test set. Every run's seed is derived from ``(seed, fold, run)``, so results don't depend on ``workers``.

    If ``checkpointDir`` is given, the best run of each fold is saved there as ``fold<N>.npz`` together with its
    normalization statistics.

    Raises:
      DatasetException: If a test index also appears in a fold.
    """
    if trainConfig is None:
        trainConfig = TrainConfig()
    checkTrainConfig(trainConfig)
    data = np.asarray(features.data)
    y = np.asarray(features.labels, dtype=np.int64)
    foldSets = [list(f) for f in plan.folds]
    testIdx = np.asarray(plan.test, dtype=np.int64)
    leaked = set(plan.test) & set(i for f in foldSets for i in f)
    if leaked:
        raise DatasetException("test indices %s also appear in the folds" % (sorted(leaked)[:10],))
    if folds is None:
        folds = range(1, len(foldSets) + 1)

    records, stats, states = [], {}, {}
    for fold in folds:
        valIdx = np.asarray(foldSets[fold - 1], dtype=np.int64)
        trainIdx = np.asarray(sorted(i for k, f in enumerate(foldSets) if k != fold - 1 for i in f), dtype=np.int64)
        stats[fold] = fitNormalization(data[trainIdx])
        X = normalize(data, stats[fold]).astype(trainConfig.dtype)
        tasks = [(X, y, trainIdx, valIdx, testIdx, trainConfig, fold, run, _runSeed(seed, fold, run))
                 for run in range(1, trainConfig.runs + 1)]
        if trainConfig.workers > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=trainConfig.workers) as pool:
                results = list(pool.map(_trainAndTest, tasks))
        else:
            results = [_trainAndTest(task) for task in tasks]
        for record, state in results:
            records.append(record)
            states[(fold, record.run)] = state

    reports = aggregateRuns(records)
    if checkpointDir is not None:
        os.makedirs(checkpointDir, exist_ok=True)
        for report in reports:
            good = [r for r in report.runs if not r.failed]
            if not good:
                continue
            best = max(good, key=lambda r: r.accuracy)
            model = EventCNN(data.shape[1], layerOrder=trainConfig.layerOrder, dtype=trainConfig.dtype)
            model.loadStateDict(states[(report.fold, best.run)])
            mean, std = stats[report.fold]
            model.saveCheckpoint(os.path.join(checkpointDir, "fold%d.npz" % (report.fold,)), mean=mean, std=std,
                                 run=best.run)
    return reports


def _percent(fraction):
    return "%.2f" % (100.0 * fraction) if not math.isnan(fraction) else "n/a"


def formatConfusionMatrix(cm):
    """Returns a text rendering of a confusion matrix, rows true classes and columns predictions."""
    width = max(len(k) for k in EVENT_KINDS) + 2
    lines = ["%-*s" % (width, "true \\ pred") + "".join("%*s" % (width, k) for k in EVENT_KINDS)]
    for kind, row in zip(EVENT_KINDS, np.asarray(cm)):
        lines.append("%-*s" % (width, kind) + "".join("%*d" % (width, v) for v in row))
    return "\n".join(lines)


def summarize(reports, title=None):
    """
    Returns ``(text, data)``: a text table of each fold's run count, failed runs, and minimum, median and maximum
    test accuracy in percent with 2 decimals, followed by the best run and its confusion matrix; and the same
    information as a JSON-ready dict.
    """
    if not reports:
        raise DatasetException("summarize() needs at least one fold report")
    lines = [title] if title else []
    lines.append("%4s %5s %7s %8s %8s %8s" % ("Fold", "Runs", "Failed", "Min %", "Median %", "Max %"))
    data = {"folds": [], "best": None}
    for report in reports:
        lines.append("%4d %5d %7d %8s %8s %8s" % (report.fold, len(report.runs), report.failedRuns,
                                                  _percent(report.minimum), _percent(report.median),
                                                  _percent(report.maximum)))
        data["folds"].append({
            "fold": report.fold,
            "runs": len(report.runs),
            "failedRuns": report.failedRuns,
            "min": report.minimum,
            "median": report.median,
            "max": report.maximum,
        })
    candidates = [r for report in reports for r in report.runs if not r.failed]
    if candidates:
        best = max(candidates, key=lambda r: r.accuracy)
        lines.append("")
        lines.append("Best run: fold %d run %d, test accuracy %s%%" % (best.fold, best.run, _percent(best.accuracy)))
        bestReport = [report for report in reports if report.fold == best.fold][0]
        if bestReport.confusion is not None:
            lines.append(formatConfusionMatrix(bestReport.confusion))
        data["best"] = {
            "fold": best.fold,
            "run": best.run,
            "accuracy": best.accuracy,
            "confusion": np.asarray(bestReport.confusion).tolist() if bestReport.confusion is not None else None,
        }
    return "\n".join(lines) + "\n", data


def formatResultsCsv(reports):
    """Returns the results CSV text: one row per run, in fold-then-run order. Failed runs have accuracy ``nan``."""
    rows = [RESULTS_HEADER.split(",")]
    for report in reports:
        for r in report.runs:
            rows.append(("%d" % r.fold, "%d" % r.run, "%d" % r.seed, repr(float(r.accuracy)), "%d" % r.epochsTrained,
                         "%d" % int(r.stoppedEarly)))
    return _csvText(rows)


def parseResultsCsv(text):
    """
    Returns the list of ``RunRecord`` objects in a results CSV (their ``confusion`` is None).

    Raises:
      FormatException: For a bad header or row. The message gives the row number.
    """
    records = []
    for row, cells in _csvRows(text, RESULTS_HEADER, "results CSV"):
        if len(cells) != 6:
            raise FormatException("Invalid results CSV at row %d: expected 6 cells, found %d" % (row, len(cells)))
        try:
            fold, run, seed = int(cells[0]), int(cells[1]), int(cells[2])
            acc, epochs, stopped = float(cells[3]), int(cells[4]), bool(int(cells[5]))
        except ValueError as excObj:
            raise FormatException("Invalid results CSV at row %d: %s" % (row, excObj))
        records.append(RunRecord(fold, run, seed, acc, epochs, stopped, math.isnan(acc), None))
    return records


def formatConfusionCsv(cm):
    """Returns CSV text for a confusion matrix, with the class names as the header row and first column."""
    rows = [CONFUSION_HEADER.split(",")]
    for kind, row in zip(EVENT_KINDS, np.asarray(cm)):
        rows.append([kind] + ["%d" % v for v in row])
    return _csvText(rows)


def parseConfusionCsv(text):
    """Returns the confusion matrix in CSV text written by ``formatConfusionCsv()``."""
    rows = _csvRows(text, CONFUSION_HEADER, "confusion CSV")
    if len(rows) != NUM_CLASSES:
        raise FormatException("Invalid confusion CSV: expected a header and %d rows" % (NUM_CLASSES,))
    cm = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for i, (row, cells) in enumerate(rows):
        if len(cells) != NUM_CLASSES + 1 or cells[0].strip() != EVENT_KINDS[i]:
            raise FormatException("Invalid confusion CSV at row %d" % (row,))
        try:
            cm[i] = [int(c) for c in cells[1:]]
        except ValueError as excObj:
            raise FormatException("Invalid confusion CSV at row %d: %s" % (row, excObj))
    return cm
