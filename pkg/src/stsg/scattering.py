"""Complex wavelet filter banks and the time-scattering transform.

The transform cascades circular convolution with analytic band-pass wavelets
and pointwise modulus:

    U[(j1, .., jm)] x = | .. ||x * psi_j1| * psi_j2| .. * psi_jm |

Windowed coefficients smooth each propagator output with a unit-mass low-pass
phi covering scale 2**J; scattering moments average the propagator outputs
over time, which yields translation-invariant descriptors (the low-pass
preserves the mean, so averaging U and averaging S agree).

Wavelets are built directly on the DFT grid as Gaussian bumps centered at
xi0 * 2**(-j) (with a corrective DC term and negative frequencies zeroed), so
every psi_j has exactly zero mean, real and imaginary parts form a Hilbert
pair, and the low-pass sums to one.  After construction each wavelet family
is rescaled so the Littlewood-Paley sum

    |phi_hat(w)|^2 + 1/2 sum_j (|psi_hat_j(w)|^2 + |psi_hat_j(-w)|^2)

peaks at 1, which makes the transform non-expansive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "FilterBank",
    "ScatteringPath",
    "ScatteringOutput",
    "ScatteringMoments",
    "build_filterbank",
    "scattering_paths",
    "propagate",
    "windowed_scattering",
    "scattering_moments",
    "warp",
]

# Mother wavelet center frequency (cycles/sample) and the bandwidth rule
# sigma = xi * (1 - 2^(-1/Q)) / (2 * sqrt(ln 2)), which makes neighboring
# filters cross near amplitude 1/sqrt(2).
_XI0 = 0.40
_CROSS = 2.0 * np.sqrt(np.log(2.0))


class ScatteringError(ValueError):
    """Invalid filter-bank parameter or transform input."""


def _bandwidth(xi: float, q: int) -> float:
    return xi * (1.0 - 2.0 ** (-1.0 / q)) / _CROSS


def _analytic_wavelet_hat(t_len: int, xi: float, sigma: float) -> np.ndarray:
    """Sampled spectrum of an analytic Morlet-style wavelet.

    Gaussian bump at xi minus a DC-centered corrective Gaussian (so the value
    at frequency zero vanishes identically), restricted to strictly positive
    frequencies below Nyquist.
    """
    f = np.arange(t_len) / t_len
    beta = np.exp(-xi * xi / (2.0 * sigma * sigma))
    hat = np.exp(-((f - xi) ** 2) / (2.0 * sigma * sigma))
    hat -= beta * np.exp(-(f * f) / (2.0 * sigma * sigma))
    hat[0] = 0.0
    hat[(t_len + 1) // 2:] = 0.0  # negative frequencies
    if t_len % 2 == 0:
        hat[t_len // 2] = 0.0  # Nyquist bin stays empty as well
    return hat


def _lowpass_hat(t_len: int, sigma: float) -> np.ndarray:
    k = np.arange(t_len)
    f = np.where(k <= t_len // 2, k, k - t_len) / t_len
    return np.exp(-(f * f) / (2.0 * sigma * sigma))


def _littlewood_paley(phi_hat: np.ndarray, psi_hats: list[np.ndarray]) -> np.ndarray:
    t_len = phi_hat.shape[0]
    lp = np.abs(phi_hat) ** 2
    for hat in psi_hats:
        sq = np.abs(hat) ** 2
        lp = lp + 0.5 * (sq + sq[(-np.arange(t_len)) % t_len])
    return lp


def _frame_rescale(phi_hat: np.ndarray, psi_hats: list[np.ndarray]) -> float:
    """Largest family scale keeping the Littlewood-Paley sum <= 1 everywhere."""
    t_len = phi_hat.shape[0]
    a = np.abs(phi_hat) ** 2
    b = np.zeros(t_len)
    for hat in psi_hats:
        sq = np.abs(hat) ** 2
        b += 0.5 * (sq + sq[(-np.arange(t_len)) % t_len])
    mask = b > 0.0
    if not np.any(mask):
        return 1.0
    ratios = (1.0 - a[mask]) / b[mask]
    c2 = float(np.min(ratios))
    return float(np.sqrt(max(c2, 0.0)))


@dataclass(frozen=True)
class FilterBank:
    """Sampled wavelet families (frequency domain) for one signal length."""

    signal_length: int
    max_log_scale: int
    q1: int
    q2: int
    lambda1: tuple[float, ...]
    lambda2: tuple[float, ...]
    psi1_hat: np.ndarray  # (|lambda1|, T)
    psi2_hat: np.ndarray  # (|lambda2|, T)
    phi_hat: np.ndarray   # (T,)
    frame_bound: float

    def psi_time(self, layer: int, index: int) -> np.ndarray:
        hats = self.psi1_hat if layer == 1 else self.psi2_hat
        return np.fft.ifft(hats[index])

    def phi_time(self) -> np.ndarray:
        return np.fft.ifft(self.phi_hat).real

    def scale_index(self, layer: int, scale: float) -> int:
        scales = self.lambda1 if layer == 1 else self.lambda2
        for i, s in enumerate(scales):
            if s == scale:
                return i
        raise ScatteringError(f"scale {scale} not in layer-{layer} bank")


def build_filterbank(t_len: int, j: int, q1: int = 8, q2: int = 1) -> FilterBank:
    """Build the two wavelet families and the scale-2**j low-pass.

    Scales are z / q for z = 0 .. j*q - 1 per family; the wavelet at scale s
    is centered at 0.4 * 2**(-s).  Requires 2**j <= t_len.
    """
    if t_len < 4:
        raise ScatteringError(f"signal length must be >= 4, got {t_len}")
    if j < 1 or q1 < 1 or q2 < 1:
        raise ScatteringError("j, q1, q2 must be positive")
    if 2 ** j > t_len:
        raise ScatteringError(f"2**{j} exceeds signal length {t_len}")

    lambda1 = tuple(z / q1 for z in range(j * q1))
    lambda2 = tuple(z / q2 for z in range(j * q2))
    psi1 = [_analytic_wavelet_hat(t_len, _XI0 * 2.0 ** (-s), _bandwidth(_XI0 * 2.0 ** (-s), q1))
            for s in lambda1]
    psi2 = [_analytic_wavelet_hat(t_len, _XI0 * 2.0 ** (-s), _bandwidth(_XI0 * 2.0 ** (-s), q2))
            for s in lambda2]
    sigma_phi = _XI0 * 2.0 ** (-(j - 1.0 / q1)) / np.sqrt(np.log(2.0))
    phi = _lowpass_hat(t_len, sigma_phi)

    c1 = _frame_rescale(phi, psi1)
    c2 = _frame_rescale(phi, psi2)
    psi1_hat = np.array([c1 * h for h in psi1])
    psi2_hat = np.array([c2 * h for h in psi2])
    bound = max(
        float(np.max(_littlewood_paley(phi, list(psi1_hat)))),
        float(np.max(_littlewood_paley(phi, list(psi2_hat)))),
    )
    if bound > 1.0 + 1e-6:
        raise ScatteringError(
            f"frame bound {bound} exceeds 1 after normalization")
    for arr in (psi1_hat, psi2_hat, phi):
        arr.flags.writeable = False
    return FilterBank(t_len, j, q1, q2, lambda1, lambda2,
                      psi1_hat, psi2_hat, phi, bound)


@dataclass(frozen=True)
class ScatteringPath:
    """Scale sequence (j1, .., jm); order 0 is the empty path."""

    scales: tuple[float, ...]

    @property
    def order(self) -> int:
        return len(self.scales)


def _admissible(s1: float, q1: int, s2: float, q2: int, convention: str) -> bool:
    # Exact rational comparison of z1/q1 vs z2/q2.
    f1, f2 = Fraction(round(s1 * q1), q1), Fraction(round(s2 * q2), q2)
    return f2 > f1 if convention == "increasing" else f2 < f1


def scattering_paths(fb: FilterBank, max_order: int = 2,
                     second_order: str = "increasing") -> list[tuple[float, ...]]:
    """Ordered path list: (), order-1 ascending j1, order-2 lexicographic.

    second_order picks which (j1, j2) pairs are admissible: "increasing"
    keeps j2 > j1 (second layer strictly coarser), "decreasing" keeps j2 < j1.
    """
    if max_order not in (0, 1, 2):
        raise ScatteringError(f"max order must be 0, 1 or 2, got {max_order}")
    if second_order not in ("increasing", "decreasing"):
        raise ScatteringError(f"unknown ordering convention {second_order!r}")
    paths: list[tuple[float, ...]] = [()]
    if max_order >= 1:
        paths.extend((s,) for s in fb.lambda1)
    if max_order >= 2:
        paths.extend((s1, s2) for s1 in fb.lambda1 for s2 in fb.lambda2
                     if _admissible(s1, fb.q1, s2, fb.q2, second_order))
    return paths


def _check_signal(x, t_len: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != t_len:
        raise ScatteringError(
            f"expected a length-{t_len} signal, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScatteringError("signal must be finite")
    return arr


def propagate(x, path, fb: FilterBank) -> np.ndarray:
    """Apply the modulus-wavelet cascade along one path (circular convolution).

    The first step uses the layer-1 family, later steps the layer-2 family.
    """
    scales = path.scales if isinstance(path, ScatteringPath) else tuple(path)
    out = _check_signal(x, fb.signal_length)
    for step, scale in enumerate(scales):
        layer = 1 if step == 0 else 2
        hats = fb.psi1_hat if layer == 1 else fb.psi2_hat
        idx = fb.scale_index(layer, scale)
        out = np.abs(np.fft.ifft(np.fft.fft(out) * hats[idx]))
    return out


@dataclass(frozen=True)
class ScatteringOutput:
    """Windowed coefficients, one length-T series per path."""

    values: np.ndarray  # (P, T)
    paths: tuple[tuple[float, ...], ...]
    index: dict[tuple[float, ...], int] = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "index", {p: i for i, p in enumerate(self.paths)})

    def series(self, path: tuple[float, ...]) -> np.ndarray:
        return self.values[self.index[path]]


@dataclass(frozen=True)
class ScatteringMoments:
    """Per-path time averages with a stable block layout."""

    values: np.ndarray  # (P,)
    paths: tuple[tuple[float, ...], ...]
    order_counts: tuple[int, int, int]

    def block(self, order: int) -> np.ndarray:
        start = sum(self.order_counts[:order])
        return self.values[start:start + self.order_counts[order]]


def _propagator_batch(signals: np.ndarray, fb: FilterBank, max_order: int,
                      second_order: str):
    """Yield (path, U[path] applied to all rows) in scattering_paths order."""
    paths = scattering_paths(fb, max_order, second_order)
    yield paths[0], signals
    if max_order < 1:
        return
    sig_hat = np.fft.fft(signals, axis=-1)
    order2 = [p for p in paths if len(p) == 2]
    for i1, s1 in enumerate(fb.lambda1):
        u1 = np.abs(np.fft.ifft(sig_hat * fb.psi1_hat[i1], axis=-1))
        yield (s1,), u1
        if max_order < 2:
            continue
        seconds = [p[1] for p in order2 if p[0] == s1]
        if not seconds:
            continue
        u1_hat = np.fft.fft(u1, axis=-1)
        for s2 in seconds:
            i2 = fb.scale_index(2, s2)
            yield (s1, s2), np.abs(np.fft.ifft(u1_hat * fb.psi2_hat[i2], axis=-1))


def _moments_matrix(signals: np.ndarray, fb: FilterBank, max_order: int,
                    second_order: str) -> tuple[np.ndarray, list[tuple[float, ...]]]:
    """(n_signals, P) matrix of per-path time averages; shared by stsg."""
    paths, cols = [], []
    for path, u in _propagator_batch(signals, fb, max_order, second_order):
        paths.append(path)
        cols.append(u.mean(axis=-1))
    order = scattering_paths(fb, max_order, second_order)
    perm = [paths.index(p) for p in order]
    return np.stack([cols[i] for i in perm], axis=-1), order


def windowed_scattering(x, fb: FilterBank, max_order: int = 2,
                        second_order: str = "increasing") -> ScatteringOutput:
    """Low-pass-smoothed coefficients S[p] = U[p]x * phi for all paths."""
    sig = _check_signal(x, fb.signal_length)[None, :]
    rows, paths = [], []
    for path, u in _propagator_batch(sig, fb, max_order, second_order):
        paths.append(path)
        rows.append(np.fft.ifft(np.fft.fft(u[0]) * fb.phi_hat).real)
    order = scattering_paths(fb, max_order, second_order)
    perm = [paths.index(p) for p in order]
    return ScatteringOutput(np.stack([rows[i] for i in perm]), tuple(order))


def scattering_moments(x, fb: FilterBank, max_order: int = 2,
                       second_order: str = "increasing") -> ScatteringMoments:
    """Per-path time averages of the propagator outputs."""
    sig = _check_signal(x, fb.signal_length)[None, :]
    values, order = _moments_matrix(sig, fb, max_order, second_order)
    counts = (1,
              sum(1 for p in order if len(p) == 1),
              sum(1 for p in order if len(p) == 2))
    return ScatteringMoments(values[0], tuple(order), counts)


def warp(x, tau) -> np.ndarray:
    """Resample x at t - tau(t) with linear interpolation, circular boundary.

    Requires the circular forward differences of tau to stay below 1 in
    absolute value so the time change is invertible.
    """
    arr = np.asarray(x, dtype=float)
    disp = np.asarray(tau, dtype=float)
    if arr.shape != disp.shape or arr.ndim != 1:
        raise ScatteringError("signal and displacement must be equal-length 1-d")
    grad = np.roll(disp, -1) - disp
    if np.max(np.abs(grad)) >= 1.0:
        raise ScatteringError(
            f"deformation gradient reaches {np.max(np.abs(grad)):.3f} >= 1")
    t_len = arr.shape[0]
    pos = (np.arange(t_len) - disp) % t_len
    i0 = np.floor(pos).astype(int) % t_len
    frac = pos - np.floor(pos)
    return (1.0 - frac) * arr[i0] + frac * arr[(i0 + 1) % t_len]
