"""Per-beat feature vectors: 10 principal components + 2 R-R intervals.

A beat is the 181-sample window centered on its R peak (90 either
side), mean-removed to kill baseline wander.  Windows are compressed
through PCA fitted on training beats only; the 10 projections are
scaled into a tanh-friendly range by the leading eigenvalue, and the
neighbouring R-R intervals (seconds) are halved to land in [0, 1] for
ordinary rhythms.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BeatFeatureRow",
    "BeatWindow",
    "EdgeBeatError",
    "FeatureVector",
    "PCAModel",
    "RankDeficiencyWarning",
    "WINDOW_HALF_WIDTH",
    "build_feature_vector",
    "fit_pca",
    "load_features",
    "load_pca_model",
    "project",
    "save_features",
    "save_pca_model",
    "window_beat",
]

WINDOW_HALF_WIDTH = 90  # 90 + peak + 90 = 181 samples


class EdgeBeatError(ValueError):
    """R peak too close to a record edge for a full window."""


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BeatWindow:
    samples: np.ndarray
    r_index: int


def window_beat(signal, r_index: int, half_width: int = WINDOW_HALF_WIDTH) -> BeatWindow:
    """Cut the mean-removed window around one R peak.

    Raises EdgeBeatError when the window would stick out of the record;
    callers drop such beats.
    """
    x = np.asarray(signal, dtype=np.float64)
    if r_index - half_width < 0 or r_index + half_width >= x.size:
        raise EdgeBeatError(
            f"beat at {r_index} needs samples "
            f"[{r_index - half_width}, {r_index + half_width}] "
            f"but record has {x.size}"
        )
    w = x[r_index - half_width : r_index + half_width + 1]
    return BeatWindow(samples=w - w.mean(), r_index=int(r_index))


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal except zero padding
    explained_variance: np.ndarray  # (k,), nonincreasing, >= 0

    @property
    def n_components(self) -> int:
        return int(self.components.shape[0])

    @property
    def window_length(self) -> int:
        return int(self.components.shape[1])


def _as_matrix(windows) -> np.ndarray:
    rows = [w.samples if isinstance(w, BeatWindow) else np.asarray(w, dtype=np.float64)
            for w in windows]
    return np.stack(rows).astype(np.float64)


def fit_pca(windows, k: int = 10) -> PCAModel:
    """Top-k eigendecomposition of the sample covariance of the windows.

    Components come out ordered by descending eigenvalue with a
    deterministic sign (largest-magnitude entry positive).  When the
    data has numerical rank below k, the missing directions are padded
    with zero vectors and zero variance and a RankDeficiencyWarning is
    emitted; downstream projections on those rows are identically zero.
    """
    x = _as_matrix(windows)
    n, d = x.shape
    if n < k:
        raise ValueError(f"need at least k={k} windows to fit, got {n}")
    if k < 1 or k > d:
        raise ValueError(f"k={k} outside 1..{d}")

    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1) if n > 1 else np.zeros((d, d))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.maximum(evals[order], 0.0)
    comps = evecs[:, order].T.copy()

    # relative cut for genuine spectra plus an absolute floor for pure
    # roundoff (duplicate windows center to ~eps-sized residuals whose
    # covariance still has 1e-30-ish eigenvalues)
    amp = float(np.max(np.abs(x))) if x.size else 0.0
    tol = max(
        float(evals[0]) * 1e-10,
        (np.finfo(np.float64).eps * amp) ** 2 * d * 100.0,
    )
    padded = 0
    for i in range(k):
        if evals[i] <= tol:
            comps[i] = 0.0
            evals[i] = 0.0
            padded += 1
        else:
            j = int(np.argmax(np.abs(comps[i])))
            if comps[i, j] < 0:
                comps[i] = -comps[i]
    if padded:
        warnings.warn(
            f"window data has numerical rank {k - padded}; "
            f"{padded} of {k} components zero-padded",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return PCAModel(mean=mean, components=comps, explained_variance=evals)


def project(model: PCAModel, window) -> np.ndarray:
    """Component scores of one window: components @ (window - mean)."""
    x = window.samples if isinstance(window, BeatWindow) else np.asarray(window, dtype=np.float64)
    if x.shape != model.mean.shape:
        raise ValueError(f"window shape {x.shape} does not match model ({model.mean.shape})")
    return model.components @ (x - model.mean)


# ---------------------------------------------------------------------------
# feature vectors


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # 10 scaled projections + scaled rr_prev + scaled rr_next

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (12,):
            raise ValueError(f"feature vector must have 12 values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def pca(self) -> np.ndarray:
        return self.values[:10]

    @property
    def rr_prev(self) -> float:
        return float(self.values[10])

    @property
    def rr_next(self) -> float:
        return float(self.values[11])


def build_feature_vector(model: PCAModel, projection, rr_prev: float, rr_next: float) -> FeatureVector:
    """Assemble the 12-value classifier input.

    Projections are divided by 4*sqrt(leading eigenvalue), putting
    roughly +-2 sigma of the dominant mode inside [-0.5, 0.5]; R-R
    intervals (seconds, must be positive) are divided by 2.
    """
    p = np.asarray(projection, dtype=np.float64)
    if p.shape != (10,):
        raise ValueError(f"projection must have 10 values, got shape {p.shape}")
    if not rr_prev > 0 or not rr_next > 0:
        raise ValueError(f"R-R intervals must be positive, got {rr_prev} and {rr_next}")
    ev0 = float(model.explained_variance[0])
    scale = 1.0 / (4.0 * np.sqrt(ev0)) if ev0 > 0 else 0.0
    return FeatureVector(np.concatenate([p * scale, [rr_prev / 2.0, rr_next / 2.0]]))


# ---------------------------------------------------------------------------
# text formats


@dataclass(frozen=True)
class BeatFeatureRow:
    record_id: str
    r_index: int
    features: np.ndarray
    label: str


def save_features(path, rows) -> None:
    """One beat per CSV row: record id, r_index, 12 values, label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["record", "r_index"] + [f"f{i:02d}" for i in range(12)] + ["label"]
        )
        for row in rows:
            writer.writerow(
                [row.record_id, row.r_index]
                + [format(v, ".17g") for v in row.features]
                + [row.label]
            )


def load_features(path) -> list[BeatFeatureRow]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 15:
            raise ValueError(f"{path}: not a feature table")
        for rec in reader:
            if len(rec) != 15:
                raise ValueError(f"{path}: row with {len(rec)} fields, expected 15")
            out.append(BeatFeatureRow(
                record_id=rec[0],
                r_index=int(rec[1]),
                features=np.asarray([float(v) for v in rec[2:14]]),
                label=rec[14],
            ))
    return out


def save_pca_model(path, model: PCAModel) -> None:
    k, d = model.components.shape
    with open(path, "w") as fh:
        fh.write("pca-model v1\n")
        fh.write(f"window {d}\n")
        fh.write(f"components {k}\n")
        fh.write("mean " + " ".join(format(v, ".17g") for v in model.mean) + "\n")
        fh.write("variance " + " ".join(format(v, ".17g") for v in model.explained_variance) + "\n")
        for row in model.components:
            fh.write("comp " + " ".join(format(v, ".17g") for v in row) + "\n")


def load_pca_model(path) -> PCAModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "pca-model v1":
        raise ValueError(f"{path}: not a PCA model file")

    def _field(line, tag):
        if not line.startswith(tag + " "):
            raise ValueError(f"{path}: expected '{tag} ...', got {line!r}")
        return line[len(tag) + 1 :]

    d = int(_field(lines[1], "window"))
    k = int(_field(lines[2], "components"))
    mean = np.asarray([float(v) for v in _field(lines[3], "mean").split()])
    variance = np.asarray([float(v) for v in _field(lines[4], "variance").split()])
    comps = np.asarray(
        [[float(v) for v in _field(lines[5 + i], "comp").split()] for i in range(k)]
    )
    if mean.shape != (d,) or variance.shape != (k,) or comps.shape != (k, d):
        raise ValueError(f"{path}: inconsistent dimensions")
    return PCAModel(mean=mean, components=comps, explained_variance=variance)
