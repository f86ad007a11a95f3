"""Graph-Haar time scattering features and random forests for sensor arrays."""

__version__ = "0.1.0"

from .graph_wavelet import (
    FolderDecomposition,
    HaarChannelSet,
    SensorGraph,
    build_decomposition,
    haar_analyze,
    haar_analyze_series,
    haar_synthesize,
)
from .scattering import (
    FilterBank,
    ScatteringMoments,
    ScatteringOutput,
    ScatteringPath,
    build_filterbank,
    propagate,
    scattering_moments,
    warp,
    windowed_scattering,
)

__all__ = [
    "SensorGraph",
    "FolderDecomposition",
    "HaarChannelSet",
    "build_decomposition",
    "haar_analyze",
    "haar_analyze_series",
    "haar_synthesize",
    "FilterBank",
    "ScatteringPath",
    "ScatteringOutput",
    "ScatteringMoments",
    "build_filterbank",
    "propagate",
    "windowed_scattering",
    "scattering_moments",
    "warp",
]
