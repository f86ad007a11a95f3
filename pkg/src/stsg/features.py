"""Feature pipeline: graph-Haar channels -> per-channel scattering moments.

The moments block of a feature vector lists, channel by channel (level-major,
folder-minor, scaling before wavelet), the scattering moments of every Haar
channel of a recording, each channel's block ordered like scattering_paths.
Static metadata (heater voltage, airflow rpm, nominal ppm) and location
coordinates (x_pos, x_board) are appended as separate blocks that never enter
PCA.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .graph_wavelet import FolderDecomposition, haar_analyze_series
from .scattering import FilterBank, _moments_matrix, build_filterbank, scattering_paths

__all__ = [
    "StsgConfig",
    "FeatureVector",
    "FeatureMatrix",
    "PcaModel",
    "stsg_moments",
    "assemble_features",
    "pca_fit",
    "pca_project",
    "Standardizer",
    "fit_standardizer",
    "write_feature_matrix",
    "read_feature_matrix",
]

STATIC_FIELDS = ("heater_voltage", "airflow_rpm", "nominal_ppm")
LOCATION_FIELDS = ("x_pos", "x_board")


class FeatureError(ValueError):
    """Invalid feature-pipeline input."""


@dataclass(frozen=True)
class StsgConfig:
    """Parameters tying a decomposition to a time-scattering filter bank."""

    decomposition: FolderDecomposition
    filter_j: int
    q1: int = 2
    q2: int = 1
    max_order: int = 2
    second_order: str = "increasing"
    include_static: bool = False
    include_location: bool = False
    pca_dim: int | None = None  # None: min(64, moments length)

    def __post_init__(self):
        if self.pca_dim is not None and self.pca_dim < 1:
            raise FeatureError("pca_dim must be >= 1")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[tuple[str, int], ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise FeatureError("feature vector must be 1-d")
        if not np.all(np.isfinite(v)):
            raise FeatureError("feature values must be finite")
        if v.shape[0] != sum(n for _, n in self.layout):
            raise FeatureError("layout does not cover the value vector")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def block(self, name: str) -> np.ndarray:
        start = 0
        for blk, n in self.layout:
            if blk == name:
                return self.values[start:start + n]
            start += n
        raise KeyError(name)


@dataclass(frozen=True)
class FeatureMatrix:
    """Stacked feature vectors sharing one layout, plus header metadata."""

    values: np.ndarray  # (n, p)
    layout: tuple[tuple[str, int], ...]
    meta: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != sum(n for _, n in self.layout):
            raise FeatureError("matrix shape does not match layout")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def pca_block_len(self) -> int:
        """Length of the leading block, the part PCA applies to."""
        return self.layout[0][1]


@lru_cache(maxsize=64)
def _bank(t_len: int, j: int, q1: int, q2: int) -> FilterBank:
    return build_filterbank(t_len, j, q1, q2)


def stsg_moments(recording, cfg: StsgConfig) -> FeatureVector:
    """Scattering moments of every graph-Haar channel of a (T, N) recording."""
    rec = np.asarray(recording, dtype=float)
    if rec.ndim != 2:
        raise FeatureError(f"recording must be 2-d, got shape {rec.shape}")
    if rec.shape[1] != cfg.decomposition.graph.vertex_count:
        raise FeatureError(
            f"recording width {rec.shape[1]} does not match the "
            f"{cfg.decomposition.graph.vertex_count}-vertex decomposition")
    t_len = rec.shape[0]
    if 2 ** cfg.filter_j > t_len:
        raise FeatureError(
            f"recording length {t_len} too short for filter scale "
            f"2**{cfg.filter_j}")
    channels = haar_analyze_series(cfg.decomposition, rec).values  # (C, T)
    fb = _bank(t_len, cfg.filter_j, cfg.q1, cfg.q2)
    moments, _ = _moments_matrix(channels, fb, cfg.max_order, cfg.second_order)
    flat = moments.reshape(-1)  # channel-major, path-minor
    return FeatureVector(flat, (("moments", flat.shape[0]),))


def moments_length(cfg: StsgConfig, t_len: int) -> int:
    fb = _bank(t_len, cfg.filter_j, cfg.q1, cfg.q2)
    paths = scattering_paths(fb, cfg.max_order, cfg.second_order)
    return cfg.decomposition.channel_count * len(paths)


def assemble_features(moments: FeatureVector, static=None, location=None, *,
                      require_static: bool = False,
                      require_location: bool = False) -> FeatureVector:
    """Concatenate moments | static(3) | location(2); absent blocks omitted."""
    if require_static and static is None:
        raise FeatureError("static block required but missing")
    if require_location and location is None:
        raise FeatureError("location block required but missing")
    parts = [moments.values]
    layout = list(moments.layout)
    if static is not None:
        triple = _as_block(static, STATIC_FIELDS)
        parts.append(triple)
        layout.append(("static", 3))
    if location is not None:
        pair = _as_block(location, LOCATION_FIELDS)
        parts.append(pair)
        layout.append(("location", 2))
    return FeatureVector(np.concatenate(parts), tuple(layout))


def _as_block(value, fields) -> np.ndarray:
    if isinstance(value, dict):
        missing = [f for f in fields if f not in value]
        if missing:
            raise FeatureError(f"missing fields {missing}")
        return np.array([float(value[f]) for f in fields])
    arr = np.asarray(value, dtype=float)
    if arr.shape != (len(fields),):
        raise FeatureError(f"expected {len(fields)} values, got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray         # (d, p) orthonormal rows
    explained_variance: np.ndarray  # (d,) non-increasing
    degenerate: bool = False

    def __post_init__(self):
        for name in ("mean", "components", "explained_variance"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.components.shape[0]


def _sample_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.values
    if isinstance(features, np.ndarray):
        return features
    return np.stack([f.values if isinstance(f, FeatureVector) else np.asarray(f)
                     for f in features])


def pca_fit(features, d: int) -> PcaModel:
    """Top-d principal directions of the sample covariance.

    Computed through an SVD of the centered sample matrix; each component's
    first nonzero coordinate is made positive so fits are reproducible.
    Degenerate (zero-variance) sample sets are allowed and flagged.
    """
    x = _sample_matrix(features)
    n, p = x.shape
    if n < 2:
        raise FeatureError("PCA needs at least 2 samples")
    if not 1 <= d <= min(n - 1, p):
        raise FeatureError(
            f"d must be in [1, {min(n - 1, p)}] for {n}x{p} samples, got {d}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:d].copy()
    for row in comps:
        nz = np.nonzero(np.abs(row) > 1e-12)[0]
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    variance = (svals[:d] ** 2) / (n - 1)
    return PcaModel(mean, comps, variance, degenerate=not np.any(svals > 0))


def pca_project(model: PcaModel, x) -> np.ndarray:
    """Coordinates of x (vector or matrix rows) in the component basis."""
    arr = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=float)
    if arr.shape[-1] != model.mean.shape[0]:
        raise FeatureError(
            f"length {arr.shape[-1]} does not match model width "
            f"{model.mean.shape[0]}")
    return (arr - model.mean) @ model.components.T


@dataclass(frozen=True)
class Standardizer:
    """Z-scoring of the leading feature block; trailing blocks pass through."""

    mean: np.ndarray
    scale: np.ndarray
    block_len: int

    def __post_init__(self):
        for name in ("mean", "scale"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def apply(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        out = arr.copy()
        out[..., :self.block_len] = \
            (arr[..., :self.block_len] - self.mean) / self.scale
        return out


def fit_standardizer(x: np.ndarray, block_len: int | None = None,
                     eps: float = 1e-12) -> Standardizer:
    """Per-coordinate mean and variance-floored scale over training rows."""
    arr = np.asarray(x, dtype=float)
    block_len = arr.shape[1] if block_len is None else block_len
    lead = arr[:, :block_len]
    return Standardizer(lead.mean(axis=0),
                        np.maximum(lead.std(axis=0), eps), block_len)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_feature_matrix(path, matrix: FeatureMatrix) -> None:
    with open(path, "w") as fh:
        fh.write("# stsg-features v1\n")
        layout = ",".join(f"{name}:{n}" for name, n in matrix.layout)
        fh.write(f"# layout: {layout}\n")
        for key, value in matrix.meta:
            fh.write(f"# {key}: {value}\n")
        for row in matrix.values:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_feature_matrix(path) -> FeatureMatrix:
    layout: tuple[tuple[str, int], ...] = ()
    meta = []
    rows = []
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# stsg-features v1"):
            raise FeatureError(f"{path}: not a feature-matrix file")
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# layout: "):
                layout = tuple(
                    (part.split(":")[0], int(part.split(":")[1]))
                    for part in line[len("# layout: "):].split(","))
            elif line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                meta.append((key, value))
            elif line:
                rows.append([float(tok) for tok in line.split()])
    if not layout:
        raise FeatureError(f"{path}: missing layout header")
    return FeatureMatrix(np.array(rows), layout, tuple(meta))
