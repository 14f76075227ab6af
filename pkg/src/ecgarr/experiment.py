"""End-to-end evaluation runs over one or more ECG records.

A run ingests records, locates beats (from annotations or the wavelet
detector), builds morphology + spacing features, trains or applies a
classifier (or the unsupervised rhythm monitor), and scores everything
against the annotation labels, per record and pooled.  Given the same
configuration and seed the result is bit-for-bit reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import detect_r_peaks
from .features import (
    EdgeBeatError,
    WINDOW_HALF_WIDTH,
    build_feature_vector,
    fit_pca,
    project,
    window_beat,
)
from .fixedpoint import QFormat
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    compute_metrics,
    confusion_from_labels,
    format_report,
    match_beats,
)
from .mlp import init_model, predict_batch, quantize_model, train
from .selflearn import find_stable_window, run_self_learner
from .wfdb_io import BeatLabel, ingest_record, label_beat

__all__ = [
    "ExperimentResult",
    "PipelineConfig",
    "RecordResult",
    "SweepPoint",
    "render_experiment",
    "render_sweep",
    "run_experiment",
    "sweep_fraction_bits",
]

DETECTOR_MODES = ("ann", "uni-dwt")
CLASSIFIER_MODES = ("exact", "pla", "fixed", "self-learner")


@dataclass(frozen=True)
class PipelineConfig:
    record_paths: tuple
    channel: int = 0
    detector: str = "ann"
    classifier: str = "pla"
    total_bits: int = 24
    fraction_bits: int = 12
    tolerance_fraction: float = 0.15
    split: str = "chrono-half"
    seed: int = 0
    max_epochs: int = 1000
    hidden_units: int = 6
    pca_components: int = 10
    match_window_ms: float = 50.0
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "record_paths",
                           tuple(os.fspath(p) for p in self.record_paths))
        if not self.record_paths:
            raise ValueError("at least one record path is required")
        if self.detector not in DETECTOR_MODES:
            raise ValueError(f"unknown detector mode {self.detector!r}")
        if self.classifier not in CLASSIFIER_MODES:
            raise ValueError(f"unknown classifier mode {self.classifier!r}")
        if self.split != "chrono-half":
            raise ValueError(f"unknown split policy {self.split!r}")
        if self.channel < 0:
            raise ValueError("channel must be nonnegative")

    def echo(self) -> dict:
        """Configuration summary embedded in every report."""
        out = {
            "detector": self.detector,
            "classifier": self.classifier,
            "split": self.split if self.classifier != "self-learner" else "full-record",
            "seed": self.seed,
            "channel": self.channel,
        }
        if self.classifier == "fixed":
            out["total_bits"] = self.total_bits
            out["fraction_bits"] = self.fraction_bits
        if self.classifier == "self-learner":
            out["tolerance"] = self.tolerance_fraction
        return out


@dataclass(frozen=True)
class RecordResult:
    record_id: str
    report: MetricsReport


@dataclass(frozen=True)
class ExperimentResult:
    per_record: tuple
    pooled: MetricsReport
    mse_history: tuple = ()
    verdicts: tuple = ()  # (record_id, sample_index, true label, predicted label)


@dataclass(frozen=True)
class SweepPoint:
    fraction_bits: int
    disagreements: int
    total: int

    @property
    def disagreement_fraction(self) -> float:
        return self.disagreements / self.total if self.total else 0.0


# ---------------------------------------------------------------------------
# record loading and beat assembly


@dataclass(frozen=True)
class _BeatRow:
    r_index: int
    window: np.ndarray
    rr_prev_s: float
    rr_next_s: float
    label: int


@dataclass(frozen=True)
class _RecordData:
    record_id: str
    sampling_frequency: float
    rows: tuple              # _BeatRow, time ordered, classifier path
    beat_indices: np.ndarray   # the train driving windows and monitoring
    beat_labels: np.ndarray    # matches beat_indices; -1 marks unlabeled
    ann_indices: np.ndarray    # every annotated beat, ground truth anchor
    ann_labels: np.ndarray     # 0/1 per annotated beat


def _check_files_exist(config: PipelineConfig) -> None:
    missing = []
    for header in config.record_paths:
        if not os.path.exists(header):
            missing.append(header)
        atr = os.path.splitext(header)[0] + ".atr"
        if not os.path.exists(atr):
            missing.append(atr)
    if missing:
        raise FileNotFoundError("missing record files: " + ", ".join(missing))


def _beat_train(record, signal, config, ann_idx, ann_lab):
    """Beat positions plus a 0/1/-1 label per position."""
    fs = record.header.sampling_frequency
    if config.detector == "ann":
        return ann_idx, ann_lab
    peaks = detect_r_peaks(signal.astype(np.float64), fs)
    matched = match_beats(peaks.r_indices, ann_idx,
                          sampling_frequency=fs, window_ms=config.match_window_ms)
    label_by_ann = dict(zip(ann_idx.tolist(), ann_lab.tolist()))
    label_by_peak = {p: label_by_ann[a] for p, a in matched.pairs}
    labels = np.array([label_by_peak.get(int(p), -1) for p in peaks.r_indices],
                      dtype=np.int64)
    return peaks.r_indices, labels


def _load_record(header_path, config) -> _RecordData:
    record = ingest_record(header_path)
    if config.channel >= record.header.n_signals:
        raise ValueError(
            f"{header_path}: channel {config.channel} out of range "
            f"({record.header.n_signals} signals)"
        )
    signal = record.samples[config.channel]
    fs = record.header.sampling_frequency
    ann_idx = np.array([a.sample_index for a in record.annotations if a.is_beat],
                       dtype=np.int64)
    ann_lab = np.array(
        [0 if label_beat(a.symbol) is BeatLabel.NORMAL else 1
         for a in record.annotations if a.is_beat],
        dtype=np.int64,
    )
    indices, labels = _beat_train(record, signal, config, ann_idx, ann_lab)

    rows = []
    for i in range(1, len(indices) - 1):
        if labels[i] < 0:
            continue
        try:
            window = window_beat(signal.astype(np.float64), int(indices[i]),
                                 WINDOW_HALF_WIDTH)
        except EdgeBeatError:
            continue
        rows.append(_BeatRow(
            r_index=int(indices[i]),
            window=window.samples,
            rr_prev_s=float(indices[i] - indices[i - 1]) / fs,
            rr_next_s=float(indices[i + 1] - indices[i]) / fs,
            label=int(labels[i]),
        ))
    return _RecordData(
        record_id=record.header.record_name,
        sampling_frequency=fs,
        rows=tuple(rows),
        beat_indices=indices,
        beat_labels=labels,
        ann_indices=ann_idx,
        ann_labels=ann_lab,
    )


def _split_rows(rows):
    half = len(rows) // 2
    return rows[:half], rows[half:]


def _feature_matrix(pca_model, rows) -> np.ndarray:
    out = np.empty((len(rows), 12))
    for i, row in enumerate(rows):
        projection = project(pca_model, row.window)
        out[i] = build_feature_vector(pca_model, projection,
                                      row.rr_prev_s, row.rr_next_s).values
    return out


# ---------------------------------------------------------------------------
# classifier path


def _classifier_activations(classifier):
    if classifier == "exact":
        return "tanh", "ntanh"
    return "platanh", "ntanh_pla"


def _prepare_classifier_data(records, config):
    train_rows_per, test_rows_per = {}, {}
    pooled_train = []
    for rec in records:
        tr, te = _split_rows(rec.rows)
        train_rows_per[rec.record_id] = tr
        test_rows_per[rec.record_id] = te
        pooled_train.extend(tr)
    if not pooled_train:
        raise ValueError("no trainable beats across the given records")
    pca = fit_pca(np.stack([r.window for r in pooled_train]),
                  k=config.pca_components)
    x_train = _feature_matrix(pca, pooled_train)
    y_train = np.array([r.label for r in pooled_train], dtype=np.int64)
    return pca, x_train, y_train, test_rows_per


def _run_classifier(records, config):
    pca, x_train, y_train, test_rows_per = _prepare_classifier_data(records, config)
    hidden, output = _classifier_activations(config.classifier)
    arch = init_model(
        seed=config.seed,
        layer_sizes=(12, config.hidden_units, 2),
        hidden_activation=hidden,
        output_activation=output,
    )
    model, train_report = train(arch, x_train, y_train,
                                max_epochs=config.max_epochs, seed=config.seed)
    eval_model = model
    if config.classifier == "fixed":
        eval_model = quantize_model(
            model, QFormat(config.total_bits, config.fraction_bits))

    per_record = []
    verdicts = []
    pooled = ConfusionCounts()
    for rec in records:
        rows = test_rows_per[rec.record_id]
        if not rows:
            raise ValueError(f"record {rec.record_id}: empty test half")
        x_test = _feature_matrix(pca, rows)
        y_true = np.array([r.label for r in rows], dtype=np.int64)
        y_pred = predict_batch(eval_model, x_test)
        counts = confusion_from_labels(y_true, y_pred)
        pooled = pooled + counts
        per_record.append(RecordResult(
            rec.record_id, compute_metrics(counts, config.echo())))
        verdicts.extend(
            (rec.record_id, r.r_index, int(t), int(p))
            for r, t, p in zip(rows, y_true, y_pred)
        )
    return ExperimentResult(
        per_record=tuple(per_record),
        pooled=compute_metrics(pooled, config.echo()),
        mse_history=train_report.mse_history,
        verdicts=tuple(verdicts),
    )


# ---------------------------------------------------------------------------
# self-learner path


def _self_learner_verdicts(rec: _RecordData, config):
    """Annotation-anchored verdict per annotated beat.

    Beats consumed by the learning window are not judged.  An annotated
    beat matching a monitored peak inherits that peak's flag; one inside
    a gap the monitor timed out on counts as flagged; one the monitor
    silently passed over counts as unflagged.
    """
    events, _ = run_self_learner(
        rec.beat_indices, tolerance_fraction=config.tolerance_fraction)
    # monitoring starts at the peak that closed the learning window
    intervals = np.diff(rec.beat_indices)
    start, _ = find_stable_window(intervals, config.tolerance_fraction)
    monitor_from = int(rec.beat_indices[start + 4])

    monitored = rec.beat_indices[rec.beat_indices > monitor_from]
    deviant_peaks = {ev.sample_index for ev in events
                     if ev.kind == "interval_deviation"}
    gaps = []
    for ev in events:
        if ev.kind == "missing_beat":
            gap_start = ev.sample_index - int(ev.observed)
            nxt = monitored[monitored > ev.sample_index]
            gap_end = int(nxt[0]) if nxt.size else int(rec.ann_indices[-1]) + 1
            gaps.append((gap_start, gap_end))

    window = config.match_window_ms * rec.sampling_frequency / 1000.0
    out = []
    for idx, label in zip(rec.ann_indices, rec.ann_labels):
        idx = int(idx)
        if idx <= monitor_from:
            continue
        if monitored.size and np.min(np.abs(monitored - idx)) <= window:
            nearest = int(monitored[np.argmin(np.abs(monitored - idx))])
            flagged = 1 if nearest in deviant_peaks else 0
        elif any(gs < idx < ge for gs, ge in gaps):
            flagged = 1
        else:
            flagged = 0
        out.append((idx, int(label), flagged))
    return out


def _run_self_learner_eval(records, config):
    per_record = []
    verdicts = []
    pooled = ConfusionCounts()
    for rec in records:
        rows = _self_learner_verdicts(rec, config)
        if not rows:
            raise ValueError(f"record {rec.record_id}: nothing to monitor")
        y_true = np.array([t for _, t, _ in rows])
        y_pred = np.array([p for _, _, p in rows])
        counts = confusion_from_labels(y_true, y_pred)
        pooled = pooled + counts
        per_record.append(RecordResult(
            rec.record_id, compute_metrics(counts, config.echo())))
        verdicts.extend((rec.record_id, idx, t, p) for idx, t, p in rows)
    return ExperimentResult(
        per_record=tuple(per_record),
        pooled=compute_metrics(pooled, config.echo()),
        verdicts=tuple(verdicts),
    )


# ---------------------------------------------------------------------------
# entry points


def run_experiment(config: PipelineConfig) -> ExperimentResult:
    _check_files_exist(config)
    # self-learner judges raw beat trains; classifiers need labeled rows
    records = [_load_record(p, config) for p in config.record_paths]
    if config.classifier == "self-learner":
        return _run_self_learner_eval(records, config)
    return _run_classifier(records, config)


def sweep_fraction_bits(config: PipelineConfig,
                        fraction_bits_values=tuple(range(6, 15))):
    """Prediction disagreement of each quantization against the real
    piecewise-linear model, over the pooled test beats."""
    if config.classifier not in ("pla", "fixed"):
        raise ValueError("the sweep runs on the piecewise-linear classifier")
    _check_files_exist(config)
    records = [_load_record(p, config) for p in config.record_paths]
    pca, x_train, y_train, test_rows_per = _prepare_classifier_data(records, config)
    arch = init_model(seed=config.seed,
                      layer_sizes=(12, config.hidden_units, 2),
                      hidden_activation="platanh", output_activation="ntanh_pla")
    model, _ = train(arch, x_train, y_train,
                     max_epochs=config.max_epochs, seed=config.seed)
    x_test = np.vstack([
        _feature_matrix(pca, rows) for rows in test_rows_per.values() if rows
    ])
    reference = predict_batch(model, x_test)
    points = []
    for f in fraction_bits_values:
        q = quantize_model(model, QFormat(config.total_bits, int(f)))
        pred = predict_batch(q, x_test)
        points.append(SweepPoint(int(f), int(np.sum(pred != reference)),
                                 int(reference.size)))
    return tuple(points)


def render_experiment(result: ExperimentResult) -> str:
    parts = [f"records {len(result.per_record)}\n"]
    for rr in result.per_record:
        parts.append(f"-- record {rr.record_id}\n{format_report(rr.report)}")
    parts.append(f"-- pooled\n{format_report(result.pooled)}")
    if result.mse_history:
        parts.append(f"training epochs {len(result.mse_history)} "
                     f"final mse {result.mse_history[-1]:.8f}\n")
    return "".join(parts)


def render_sweep(points) -> str:
    lines = ["fraction_bits disagreements total fraction"]
    for p in points:
        lines.append(f"{p.fraction_bits} {p.disagreements} {p.total} "
                     f"{p.disagreement_fraction:.6f}")
    return "\n".join(lines) + "\n"
