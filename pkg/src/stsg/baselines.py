"""Comparison feature spaces: STFT power-spectrum moments and raw statistics.

Both emit the same flat feature-vector layout as the scattering pipeline, so
the forest consumes them interchangeably.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureError, FeatureVector

__all__ = ["StftConfig", "stft_features", "moment_features"]


def hann_window(width: int) -> np.ndarray:
    return np.hanning(width)


@dataclass(frozen=True)
class StftConfig:
    """Framing and smoothing parameters for the power-spectrum features.

    window is the length-W analysis taper; frames start every hop samples
    with circular wraparound.  frequencies lists DFT bin indices (within
    Nyquist of the W-point transform); None means bins 0 .. W//2.  smoothing,
    when given, is a normalized taper convolved circularly across frames
    before time-averaging (the average is unchanged, kept for fidelity to
    the smoothed-spectrogram definition).
    """

    window: np.ndarray
    hop: int
    frequencies: tuple[int, ...] | None = None
    smoothing: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.window, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise FeatureError("window must be a non-empty 1-d taper")
        w.flags.writeable = False
        object.__setattr__(self, "window", w)
        if self.hop < 1:
            raise FeatureError("hop must be >= 1")
        if self.frequencies is not None:
            freqs = tuple(int(f) for f in self.frequencies)
            if any(f < 0 or f > w.size // 2 for f in freqs):
                raise FeatureError("frequencies must lie within Nyquist")
            object.__setattr__(self, "frequencies", freqs)
        if self.smoothing is not None:
            s = np.asarray(self.smoothing, dtype=float)
            if abs(s.sum() - 1.0) > 1e-8:
                raise FeatureError("smoothing taper must sum to 1")
            s.flags.writeable = False
            object.__setattr__(self, "smoothing", s)

    @property
    def bins(self) -> tuple[int, ...]:
        if self.frequencies is not None:
            return self.frequencies
        return tuple(range(self.window.size // 2 + 1))


def default_stft_config(width: int = 64, hop: int = 32) -> StftConfig:
    return StftConfig(hann_window(width), hop)


def _frame_power(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """(n_frames, n_bins) squared-modulus spectra over circular frames."""
    t_len = x.shape[0]
    width = cfg.window.size
    starts = np.arange(0, t_len, cfg.hop)
    idx = (starts[:, None] + np.arange(width)[None, :]) % t_len
    frames = x[idx] * cfg.window
    spectra = np.fft.fft(frames, axis=1)[:, list(cfg.bins)]
    return np.abs(spectra) ** 2


def stft_features(recording, cfg: StftConfig | None = None) -> FeatureVector:
    """Time-averaged smoothed power spectra, one block of |bins| per channel."""
    rec = np.asarray(recording, dtype=float)
    if rec.ndim != 2:
        raise FeatureError(f"recording must be 2-d, got shape {rec.shape}")
    cfg = cfg or default_stft_config()
    if rec.shape[0] < cfg.window.size:
        raise FeatureError(
            f"recording length {rec.shape[0]} shorter than window "
            f"{cfg.window.size}")
    blocks = []
    for ch in range(rec.shape[1]):
        power = _frame_power(rec[:, ch], cfg)
        if cfg.smoothing is not None:
            smooth_hat = np.fft.fft(cfg.smoothing, n=power.shape[0])
            power = np.fft.ifft(
                np.fft.fft(power, axis=0) * smooth_hat[:, None], axis=0).real
        blocks.append(power.mean(axis=0))
    flat = np.concatenate(blocks)
    return FeatureVector(flat, (("moments", flat.shape[0]),))


def moment_features(recording) -> FeatureVector:
    """Per channel (sample mean, unbiased variance), concatenated.

    Sums run over value-sorted samples so the result is bit-identical under
    any permutation of the time axis.
    """
    rec = np.asarray(recording, dtype=float)
    if rec.ndim != 2:
        raise FeatureError(f"recording must be 2-d, got shape {rec.shape}")
    t_len = rec.shape[0]
    if t_len < 2:
        raise FeatureError("need at least 2 time samples for the variance")
    srt = np.sort(rec, axis=0)
    mean = srt.sum(axis=0) / t_len
    sq = np.sort((srt - mean) ** 2, axis=0)
    var = sq.sum(axis=0) / (t_len - 1)
    flat = np.stack([mean, var], axis=1).reshape(-1)
    return FeatureVector(flat, (("moments", flat.shape[0]),))
