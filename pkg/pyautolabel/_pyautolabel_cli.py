# The pyautolabel command line: one config file drives simulate -> preprocess -> train -> evaluate -> report, with
# every stage reading the previous stage's files from the output directory.

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys

import numpy as np

import pyautolabel
from pyautolabel import (
    EVENT_KINDS,
    ScenarioConfig,
    LoggerConfig,
    MelConfig,
    TrainConfig,
    PipelineConfig,
    SplitPlan,
    PyAutoLabelException,
    ConfigurationException,
    DatasetException,
    FormatException,
    _csvRows,
    _csvText,
)
from ._pyautolabel_scenario import (
    buildScenario,
    checkScenarioConfig,
    readScenarioFile,
    synthFeatureStreams,
    synthLabelingStreams,
    writeScenarioFile,
)
from ._pyautolabel_logger import SdCard, Simulator, checkLoggerConfig
from ._pyautolabel_preprocess import (
    checkMelConfig,
    extractAudioFeatures,
    extractVibrationFeatures,
    loadFeatureBundle,
    loadSessionRecordings,
    normalize,
    saveFeatureBundle,
    splitDataset,
)
from ._pyautolabel_nn import EventCNN
from ._pyautolabel_train import (
    accuracy,
    aggregateRuns,
    checkTrainConfig,
    confusion,
    formatConfusionCsv,
    formatResultsCsv,
    parseConfusionCsv,
    parseResultsCsv,
    runExperiment,
    summarize,
)

log = logging.getLogger(__name__)

MODALITIES = ("audio", "vibration")
MANIFEST_HEADER = "session,audio_file,vibration_file,label_file,start,end,labels,truth"

_SECTIONS = {"scenario": ScenarioConfig, "logger": LoggerConfig, "mel": MelConfig, "train": TrainConfig}
_PATH_KEYS = ("out", "scenario")


def defaultConfig():
    """Returns the ``PipelineConfig`` used when no config file or flags say otherwise."""
    return PipelineConfig(
        paths={"out": "out", "scenario": None},
        scenario=ScenarioConfig(),
        logger=LoggerConfig(),
        mel=MelConfig(),
        train=TrainConfig(),
        seed=42,
    )


def _camelCase(key):
    head, *rest = key.split("_")
    return head + "".join(word[:1].upper() + word[1:] for word in rest)


def _coerce(value, default):
    if value.lower() == "none":
        return None
    if isinstance(default, bool):
        if value.lower() in ("true", "yes", "on", "1"):
            return True
        if value.lower() in ("false", "no", "off", "0"):
            return False
        raise ValueError("expected true or false, found %r" % (value,))
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float) or default is None:
        return float(value)
    return value


def _setValue(config, key, value, where):
    """Returns ``config`` with the ``section.key`` setting replaced. ``where`` names the setting in error messages."""
    section, dot, name = key.strip().partition(".")
    value = value.strip()
    if not dot or not name:
        raise ConfigurationException("Invalid config at %s: expected 'section.key = value', found key %r"
                                     % (where, key.strip()))
    if section == "pipeline":
        if name != "seed":
            raise ConfigurationException("Invalid config at %s: unknown key pipeline.%s" % (where, name))
        try:
            return config._replace(seed=int(value))
        except ValueError:
            raise ConfigurationException("Invalid config at %s: seed must be an integer, not %r" % (where, value))
    if section == "paths":
        if name not in _PATH_KEYS:
            raise ConfigurationException("Invalid config at %s: unknown key paths.%s (valid keys are %s)"
                                         % (where, name, ", ".join(_PATH_KEYS)))
        paths = dict(config.paths)
        paths[name] = value or None
        return config._replace(paths=paths)
    if section not in _SECTIONS:
        raise ConfigurationException("Invalid config at %s: unknown section %r (valid sections are %s)"
                                     % (where, section, ", ".join(("paths", "pipeline") + tuple(_SECTIONS))))
    current = getattr(config, section)
    field = _camelCase(name)
    if field not in current._fields:
        raise ConfigurationException("Invalid config at %s: unknown key %s.%s" % (where, section, name))
    try:
        coerced = _coerce(value, _SECTIONS[section]._field_defaults.get(field))
    except ValueError as excObj:
        raise ConfigurationException("Invalid config at %s: bad value for %s.%s: %s" % (where, section, name, excObj))
    return config._replace(**{section: current._replace(**{field: coerced})})


def parseConfigText(text, base=None):
    """
    Returns a ``PipelineConfig`` for the text of a config file: ``section.key = value`` lines, with ``#`` starting a
    comment. Keys are snake_case versions of the config fields, so ``train.batch_size = 16`` sets
    ``TrainConfig.batchSize``. Settings not in the text keep their value in ``base`` (default ``defaultConfig()``).

    Raises:
      ConfigurationException: For a malformed line, an unknown section or key, or a value of the wrong type. The
      message gives the line number.
    """
    config = base if base is not None else defaultConfig()
    for lineNumber, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigurationException("Invalid config at line %d: expected 'section.key = value', found %r"
                                         % (lineNumber, line))
        config = _setValue(config, key, value, "line %d" % (lineNumber,))
    return config


def checkPipelineConfig(config):
    """Raises ``ConfigurationException`` if a nested config is invalid or the stages disagree. Returns the config."""
    checkScenarioConfig(config.scenario)
    checkLoggerConfig(config.logger, strictThroughput=False)
    checkMelConfig(config.mel, config.scenario.audioRate)
    checkTrainConfig(config.train)
    if config.logger.audioRate != config.scenario.audioRate or config.logger.vibRate != config.scenario.vibRate:
        raise ConfigurationException("logger.audio_rate and logger.vib_rate must equal scenario.audio_rate and "
                                     "scenario.vib_rate")
    if not config.paths.get("out"):
        raise ConfigurationException("paths.out must be set")
    return config


def loadConfig(path=None, overrides=()):
    """
    Returns the validated ``PipelineConfig`` from the config file at ``path`` (or the defaults if None), with each
    ``'section.key=value'`` string in ``overrides`` applied on top.
    """
    config = defaultConfig()
    if path is not None:
        try:
            with open(path) as fileObj:
                text = fileObj.read()
        except OSError as excObj:
            raise ConfigurationException("Could not read config file %s: %s" % (path, excObj))
        config = parseConfigText(text, config)
    for override in overrides:
        key, eq, value = override.partition("=")
        if not eq:
            raise ConfigurationException("Invalid config at --set %r: expected section.key=value" % (override,))
        config = _setValue(config, key, value, "--set %r" % (override,))
    return checkPipelineConfig(config)


def _dirs(config):
    out = config.paths["out"]
    return {
        "simulate": os.path.join(out, "simulate"),
        "sessions": os.path.join(out, "simulate", "sessions"),
        "features": os.path.join(out, "features"),
        "results": os.path.join(out, "results"),
        "report": os.path.join(out, "report"),
    }


def _writeText(path, text):
    with open(path, "w", newline="\n") as fileObj:
        fileObj.write(text)


def _readText(path, what):
    try:
        with open(path) as fileObj:
            return fileObj.read()
    except OSError as excObj:
        raise FormatException("Could not read %s %s: %s (run the earlier pipeline stages first)" % (what, path, excObj))


def formatManifest(sessions, scenario):
    """
    Returns the manifest CSV text: one row per session, with its files, start and end in seconds, the labels the
    device wrote, and the ground-truth events (``truth``) whose onset falls within the session.
    """
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_HEADER.split(","), lineterminator="\n")
    writer.writeheader()
    for session in sessions:
        truth = [e.kind for e in scenario.events if session.start <= e.onset <= session.end]
        writer.writerow({
            "session": os.path.splitext(session.audioFile)[0],
            "audio_file": session.audioFile,
            "vibration_file": session.vibrationFile or "",
            "label_file": session.labelFile,
            "start": "%.6f" % (session.start,),
            "end": "%.6f" % (session.end,),
            "labels": ";".join(label.kind for label in session.labels),
            "truth": ";".join(truth),
        })
    return buf.getvalue()


def parseManifest(text):
    """Returns a list of dicts, one per manifest row, keyed by the manifest's column names."""
    columns = MANIFEST_HEADER.split(",")
    rows = []
    for row, cells in _csvRows(text, MANIFEST_HEADER, "manifest"):
        if len(cells) != len(columns):
            raise FormatException("Invalid manifest at row %d: expected %d cells, found %d"
                                  % (row, len(columns), len(cells)))
        rows.append(dict(zip(columns, cells)))
    return rows


def cmdSimulate(config):
    """
    Builds (or reads) the scenario, synthesizes its sensor streams, and runs the logger over them. Writes
    ``scenario.txt``, ``manifest.csv``, ``run_report.json`` and the session files under ``<out>/simulate``, replacing
    the files of any earlier run. Returns the list of ``SessionArtifacts``.

    Raises:
      ConfigurationException: If the writer can't keep up with the acquisition byte rate.
      SimulationFaultException: If the logger faults anyway; the run report is still written.
    """
    dirs = _dirs(config)
    checkLoggerConfig(config.logger, strictThroughput=True)
    if config.paths.get("scenario"):
        scenario = readScenarioFile(config.paths["scenario"], config.scenario.heatUpDuration)
    else:
        scenario = buildScenario(config.scenario, config.seed)

    if os.path.isdir(dirs["sessions"]):
        shutil.rmtree(dirs["sessions"])
    os.makedirs(dirs["sessions"])
    writeScenarioFile(os.path.join(dirs["simulate"], "scenario.txt"), scenario)

    streams = synthFeatureStreams(scenario, config.seed, config.scenario)
    streams.update(synthLabelingStreams(scenario, config.scenario))
    sdCard = SdCard(config.logger.maxOpenFiles)
    simulator = Simulator(streams, config.logger, sdCard)
    try:
        sessions = simulator.run()
    finally:
        _writeText(os.path.join(dirs["simulate"], "run_report.json"), simulator.reportJson() + "\n")

    for name, data in sdCard.files.items():
        with open(os.path.join(dirs["sessions"], name), "wb") as fileObj:
            fileObj.write(data)
    _writeText(os.path.join(dirs["simulate"], "manifest.csv"), formatManifest(sessions, scenario))
    log.info("Simulated %d sessions into %s", len(sessions), dirs["simulate"])
    return sessions


def _planToJson(plan):
    return {
        "seed": int(plan.seed),
        "train": [int(i) for i in plan.train],
        "validation": [int(i) for i in plan.validation],
        "test": [int(i) for i in plan.test],
        "folds": [[int(i) for i in fold] for fold in plan.folds],
        "classCounts": plan.classCounts,
    }


def loadSplitPlan(path):
    """Returns the ``SplitPlan`` stored by ``cmdPreprocess()``."""
    try:
        data = json.loads(_readText(path, "split plan"))
        return SplitPlan(data["train"], data["validation"], data["test"], data["folds"], data["classCounts"],
                         data["seed"])
    except (ValueError, KeyError, TypeError) as excObj:
        raise FormatException("Malformed split plan %s: %s" % (path, excObj))


def cmdPreprocess(config):
    """
    Turns the simulated sessions into feature bundles: ``audio`` (mel spectrograms) and ``vibration`` (imputed,
    padded accelerometer series) under ``<out>/features``, plus ``split_plan.json``. Returns a dict of modality to
    ``FeatureTensor``.

    Raises:
      FormatException: If a session file is missing or corrupt. The message names the file.
    """
    dirs = _dirs(config)
    rows = parseManifest(_readText(os.path.join(dirs["simulate"], "manifest.csv"), "manifest"))
    rows = [row for row in rows if row["labels"]]
    recordings = loadSessionRecordings(dirs["sessions"], [row["session"] for row in rows])
    if not recordings:
        raise DatasetException("the simulation produced no labeled sessions")

    os.makedirs(dirs["features"], exist_ok=True)
    bundles = {"audio": extractAudioFeatures(recordings, config.mel)}
    if all(r["vibration"] is not None for r in recordings):
        bundles["vibration"] = extractVibrationFeatures(recordings)
    else:
        log.warning("Not every session has a vibration file; skipping the vibration bundle")
    for modality in MODALITIES:
        stem = os.path.join(dirs["features"], modality)
        for suffix in (".npy", ".json"):
            if os.path.exists(stem + suffix):
                os.remove(stem + suffix)
    metadata = {"audio": {"mel": dict(config.mel._asdict())}, "vibration": {}}
    for modality, tensor in bundles.items():
        saveFeatureBundle(os.path.join(dirs["features"], modality), tensor, metadata[modality])

    plan = splitDataset(bundles["audio"].labels, config.seed)
    _writeText(os.path.join(dirs["features"], "split_plan.json"),
               json.dumps(_planToJson(plan), indent=2, sort_keys=True) + "\n")
    log.info("Wrote feature bundles %s", ", ".join("%s %s" % (m, t.data.shape) for m, t in bundles.items()))
    return bundles


def _modalities(config, modality):
    dirs = _dirs(config)
    wanted = MODALITIES if modality in (None, "both") else (modality,)
    found = [m for m in wanted if os.path.exists(os.path.join(dirs["features"], m + ".npy"))]
    if not found:
        raise DatasetException("no feature bundles in %s (run 'pyautolabel preprocess' first)" % (dirs["features"],))
    return found


def cmdTrain(config, modality=None):
    """
    Runs the cross-validation experiment on each feature bundle (or just ``modality``) separately and writes
    ``results.csv``, ``confusion_fold<N>.csv`` and the best-run checkpoints under ``<out>/results/<modality>``.
    Returns a dict of modality to a list of ``FoldReport``.
    """
    dirs = _dirs(config)
    plan = loadSplitPlan(os.path.join(dirs["features"], "split_plan.json"))
    allReports = {}
    for name in _modalities(config, modality):
        tensor, metadata = loadFeatureBundle(os.path.join(dirs["features"], name))
        resultDir = os.path.join(dirs["results"], name)
        if os.path.isdir(resultDir):
            shutil.rmtree(resultDir)
        os.makedirs(resultDir)
        log.info("Training on %s features %s", name, tensor.data.shape)
        reports = runExperiment(tensor, plan, config.train, config.seed,
                                checkpointDir=os.path.join(resultDir, "checkpoints"))
        _writeText(os.path.join(resultDir, "results.csv"), formatResultsCsv(reports))
        for report in reports:
            if report.confusion is not None:
                _writeText(os.path.join(resultDir, "confusion_fold%d.csv" % (report.fold,)),
                           formatConfusionCsv(report.confusion))
        allReports[name] = reports
    return allReports


def cmdEvaluate(config, modality=None):
    """
    Re-scores each fold's saved best-run checkpoint on the test set and writes ``evaluation.csv`` next to it.
    Returns a dict of modality to a list of ``(fold, accuracy, confusionMatrix)``.
    """
    dirs = _dirs(config)
    plan = loadSplitPlan(os.path.join(dirs["features"], "split_plan.json"))
    test = np.asarray(plan.test, dtype=np.int64)
    evaluations = {}
    for name in _modalities(config, modality):
        tensor, metadata = loadFeatureBundle(os.path.join(dirs["features"], name))
        checkpointDir = os.path.join(dirs["results"], name, "checkpoints")
        if not os.path.isdir(checkpointDir):
            raise DatasetException("no checkpoints in %s (run 'pyautolabel train' first)" % (checkpointDir,))
        folds = sorted(int(f[4:-4]) for f in os.listdir(checkpointDir) if f.startswith("fold") and f.endswith(".npz"))
        rows = [("fold", "run", "accuracy")]
        evaluations[name] = []
        for fold in folds:
            model, extra = EventCNN.loadCheckpoint(os.path.join(checkpointDir, "fold%d.npz" % (fold,)))
            x = normalize(tensor.data[test], (extra["mean"], extra["std"])).astype(model.dtype)
            cm = confusion(model.predict(x), np.asarray(tensor.labels)[test])
            evaluations[name].append((fold, accuracy(cm), cm))
            rows.append(("%d" % fold, "%d" % int(extra["run"]), repr(accuracy(cm))))
            log.info("%s fold %d checkpoint: test accuracy %.4f", name, fold, accuracy(cm))
        _writeText(os.path.join(dirs["results"], name, "evaluation.csv"), _csvText(rows))
    return evaluations


def _loadReports(resultDir):
    records = parseResultsCsv(_readText(os.path.join(resultDir, "results.csv"), "results"))
    reports = []
    for report in aggregateRuns(records):
        path = os.path.join(resultDir, "confusion_fold%d.csv" % (report.fold,))
        if os.path.exists(path):
            report = report._replace(confusion=parseConfusionCsv(_readText(path, "confusion matrix")))
        reports.append(report)
    return reports


def _plotClassSpectrograms(config, dirs):
    # One example mel spectrogram per class, the first session of that class in the audio bundle.
    stem = os.path.join(dirs["features"], "audio")
    if not os.path.exists(stem + ".npy"):
        return
    tensor, metadata = loadFeatureBundle(stem)
    hopLength = metadata.get("mel", {}).get("hopLength", config.mel.hopLength)
    for classId, kind in enumerate(EVENT_KINDS):
        found = np.flatnonzero(tensor.labels == classId)
        if not len(found):
            continue
        path = os.path.join(dirs["report"], "mel_%s.png" % (kind,))
        pyautolabel.plotMelSpectrogram(tensor.data[found[0]], path, config.logger.audioRate, hopLength)
        log.info("Plotted %s from %s", path, tensor.provenance[found[0]])


def cmdReport(config):
    """
    Recomputes the per-fold statistics from each modality's results files and writes ``summary.txt`` and
    ``summary.json`` under ``<out>/report``, plus plots when matplotlib is installed: fold accuracies, the best
    confusion matrix, and one mel spectrogram per class from the audio bundle. Returns the summary text.

    Raises:
      DatasetException: If there are no results to report on.
    """
    dirs = _dirs(config)
    found = [m for m in MODALITIES if os.path.exists(os.path.join(dirs["results"], m, "results.csv"))]
    if not found:
        raise DatasetException("no results in %s (run 'pyautolabel train' first)" % (dirs["results"],))
    os.makedirs(dirs["report"], exist_ok=True)
    texts, data = [], {}
    for name in found:
        reports = _loadReports(os.path.join(dirs["results"], name))
        text, data[name] = summarize(reports, title="%s test accuracy" % (name.capitalize(),))
        texts.append(text)
        try:
            pyautolabel.plotFoldAccuracies(reports, os.path.join(dirs["report"], "%s_folds.png" % (name,)), name)
            best = data[name]["best"]
            if best is not None and best["confusion"] is not None:
                pyautolabel.plotConfusionMatrix(best["confusion"],
                                                os.path.join(dirs["report"], "%s_confusion.png" % (name,)),
                                                best["accuracy"])
        except PyAutoLabelException as excObj:
            log.info("Skipping plots: %s", excObj)
    try:
        _plotClassSpectrograms(config, dirs)
    except PyAutoLabelException as excObj:
        log.info("Skipping spectrogram plots: %s", excObj)
    summary = "\n".join(texts)
    _writeText(os.path.join(dirs["report"], "summary.txt"), summary)
    _writeText(os.path.join(dirs["report"], "summary.json"), json.dumps(data, indent=2, sort_keys=True) + "\n")
    return summary


def _buildParser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Config file of 'section.key = value' lines.")
    common.add_argument("--seed", type=int, help="Master seed (overrides pipeline.seed).")
    common.add_argument("--out", help="Output directory (overrides paths.out).")
    common.add_argument("--runs", type=int, help="Training runs per fold (overrides train.runs).")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config setting. Can be given more than once.")
    common.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr.")

    parser = argparse.ArgumentParser(prog="pyautolabel",
                                     description="Simulate an auto-labeling sensor logger and evaluate event "
                                                 "classifiers on what it records.")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True
    commands.add_parser("simulate", parents=[common], help="Generate a scenario and run the logger over it.")
    commands.add_parser("preprocess", parents=[common], help="Build feature bundles and the split plan.")
    for name, text in (("train", "Run the cross-validation experiment."),
                       ("evaluate", "Re-score the saved checkpoints on the test set.")):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument("--modality", choices=MODALITIES + ("both",), default="both")
    commands.add_parser("report", parents=[common], help="Summarize the results.")
    commands.add_parser("info", help="Print platform and version information.")
    return parser


def main(argv=None):
    """Runs the command line and returns the exit status: 0 on success, 1 after reporting an error."""
    args = _buildParser().parse_args(argv)
    if args.command == "info":
        pyautolabel.printInfo()
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = loadConfig(args.config, args.set)
        if args.seed is not None:
            config = config._replace(seed=args.seed)
        if args.out is not None:
            config = config._replace(paths=dict(config.paths, out=args.out))
        if args.runs is not None:
            config = config._replace(train=checkTrainConfig(config.train._replace(runs=args.runs)))

        if args.command == "simulate":
            sessions = cmdSimulate(config)
            print("%d sessions written to %s" % (len(sessions), _dirs(config)["simulate"]))
        elif args.command == "preprocess":
            bundles = cmdPreprocess(config)
            for name, tensor in bundles.items():
                print("%s features: %s" % (name, "x".join(str(d) for d in tensor.data.shape)))
        elif args.command == "train":
            for name, reports in cmdTrain(config, args.modality).items():
                print(summarize(reports, title="%s test accuracy" % (name.capitalize(),))[0])
        elif args.command == "evaluate":
            for name, rows in cmdEvaluate(config, args.modality).items():
                for fold, acc, cm in rows:
                    print("%s fold %d: %.2f%%" % (name, fold, 100.0 * acc))
        elif args.command == "report":
            print(cmdReport(config), end="")
    except PyAutoLabelException as excObj:
        sys.stderr.write("pyautolabel: error: %s\n" % (excObj,))
        return 1
    except OSError as excObj:
        sys.stderr.write("pyautolabel: error: %s\n" % (excObj,))
        return 1
    return 0
