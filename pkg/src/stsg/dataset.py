"""Recordings, board aggregation, synthetic generation, and scenario targets.

A Recording is one board's raw time series plus the conditioning metadata of
its trial.  Aggregation turns trial recordings into GraphRecordings: either
one 72-channel recording over the whole nine-board column, or one 8-channel
recording per board.  The synthetic generator replaces the wind tunnel with a
seeded advection-diffusion plume read through per-gas sensor gain vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import erfc

from .graph_wavelet import SensorGraph

__all__ = [
    "GAS_VOCABULARY",
    "POSITIONS",
    "Recording",
    "GraphRecording",
    "ScenarioSpec",
    "SynthSpec",
    "ingest",
    "serialize_recording",
    "aggregate",
    "synth_generate",
    "extract_targets",
    "single_board_graph",
    "board_column_graph",
    "write_targets",
    "read_targets",
]

GAS_VOCABULARY = (
    "acetaldehyde", "acetone", "ammonia", "benzene", "butanol",
    "carbon_monoxide", "ethylene", "methane", "methanol", "toluene",
)
POSITIONS = (0.25, 0.5, 0.98, 1.18, 1.40, 1.45)
HEATER_VOLTAGES = (4.0, 4.5, 5.0, 5.5, 6.0)
AIRFLOW_RPMS = (1500, 3900, 550)
BOARD_SPACING = 0.13
BOARD_COUNT = 9
SENSORS_PER_BOARD = 8


class DatasetError(ValueError):
    """Base for recording-ingestion and aggregation failures."""


class MalformedRowError(DatasetError):
    pass


class UnknownGasError(DatasetError):
    pass


class NonMonotoneTimestampError(DatasetError):
    pass


class MissingBoardError(DatasetError):
    pass


def board_coordinate(board_index: int) -> float:
    return BOARD_SPACING * board_index


@dataclass(frozen=True)
class Recording:
    """One board's (T, S) samples plus trial metadata."""

    samples: np.ndarray
    sample_rate: float
    gas_label: str
    nominal_ppm: float
    heater_voltage: float
    airflow_rpm: float
    position_index: int
    board_index: int
    trial: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 2:
            raise DatasetError(f"samples must be 2-d, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DatasetError("samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        for name in ("sample_rate", "nominal_ppm", "heater_voltage",
                     "airflow_rpm"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.sample_rate <= 0:
            raise DatasetError("sample_rate must be positive")
        if self.gas_label not in GAS_VOCABULARY:
            raise UnknownGasError(f"unknown gas label {self.gas_label!r}")
        if not 0 <= self.position_index < len(POSITIONS):
            raise DatasetError(f"position_index {self.position_index} out of range")
        if not 1 <= self.board_index <= BOARD_COUNT:
            raise DatasetError(f"board_index {self.board_index} out of range")

    @property
    def x_pos(self) -> float:
        return POSITIONS[self.position_index]

    @property
    def x_board(self) -> float:
        return board_coordinate(self.board_index)

    @property
    def static_block(self) -> tuple[float, float, float]:
        return (self.heater_voltage, self.airflow_rpm, self.nominal_ppm)


@dataclass(frozen=True)
class GraphRecording:
    """Aggregated (T, N) recording bound to its sensor graph."""

    graph: SensorGraph
    samples: np.ndarray
    gas_label: str
    nominal_ppm: float
    heater_voltage: float
    airflow_rpm: float
    position_index: int
    board_index: int | None
    trial: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != self.graph.vertex_count:
            raise DatasetError(
                f"samples {arr.shape} do not match the "
                f"{self.graph.vertex_count}-vertex graph")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def x_pos(self) -> float:
        return POSITIONS[self.position_index]

    @property
    def x_board(self) -> float | None:
        return None if self.board_index is None \
            else board_coordinate(self.board_index)

    @property
    def static_block(self) -> tuple[float, float, float]:
        return (self.heater_voltage, self.airflow_rpm, self.nominal_ppm)

    @property
    def location_block(self) -> tuple[float, float]:
        return (self.x_pos,
                self.x_board if self.x_board is not None else 0.0)


TASKS = ("gas10", "co_binary", "localize")
AGGREGATIONS = ("board_column", "single_board")


@dataclass(frozen=True)
class ScenarioSpec:
    task: str
    aggregation: str
    include_static: bool = False
    include_location: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise DatasetError(f"unknown task {self.task!r}")
        if self.aggregation not in AGGREGATIONS:
            raise DatasetError(f"unknown aggregation {self.aggregation!r}")


# ---------------------------------------------------------------------------
# file schema
# ---------------------------------------------------------------------------

_MAGIC = "# stsg-recording v1"
_HEADER_KEYS = ("gas", "ppm", "heater_voltage", "airflow_rpm",
                "position_index", "board_index", "trial", "sample_rate")


def serialize_recording(path, rec: Recording) -> None:
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"gas: {rec.gas_label}\n")
        fh.write(f"ppm: {rec.nominal_ppm!r}\n")
        fh.write(f"heater_voltage: {rec.heater_voltage!r}\n")
        fh.write(f"airflow_rpm: {rec.airflow_rpm!r}\n")
        fh.write(f"position_index: {rec.position_index}\n")
        fh.write(f"board_index: {rec.board_index}\n")
        fh.write(f"trial: {rec.trial}\n")
        fh.write(f"sample_rate: {rec.sample_rate!r}\n")
        for t, row in enumerate(rec.samples):
            stamp = repr(t / rec.sample_rate)
            fh.write(stamp + "," + ",".join(repr(float(v)) for v in row))
            fh.write("\n")


def ingest(path) -> Recording:
    """Parse and validate one recording file."""
    header: dict[str, str] = {}
    rows: list[list[float]] = []
    last_stamp = None
    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != _MAGIC:
            raise MalformedRowError(f"{path}:1: not a recording file")
        lineno = 1
        in_header = True
        for line in fh:
            lineno += 1
            line = line.rstrip("\n")
            if not line:
                continue
            if in_header and ":" in line and "," not in line:
                key, _, value = line.partition(":")
                header[key.strip()] = value.strip()
                continue
            in_header = False
            parts = line.split(",")
            try:
                values = [float(tok) for tok in parts]
            except ValueError:
                raise MalformedRowError(
                    f"{path}:{lineno}: unparseable data row") from None
            if rows and len(values) != len(rows[0]) + 1:
                raise MalformedRowError(
                    f"{path}:{lineno}: expected {len(rows[0]) + 1} fields, "
                    f"got {len(values)}")
            if len(values) < 2:
                raise MalformedRowError(
                    f"{path}:{lineno}: data row needs a timestamp and at "
                    "least one sensor value")
            stamp = values[0]
            if last_stamp is not None and stamp <= last_stamp:
                raise NonMonotoneTimestampError(
                    f"{path}:{lineno}: timestamp {stamp} not increasing")
            last_stamp = stamp
            rows.append(values[1:])
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise MalformedRowError(f"{path}: missing header keys {missing}")
    if not rows:
        raise MalformedRowError(f"{path}: no data rows")
    gas = header["gas"]
    if gas not in GAS_VOCABULARY:
        raise UnknownGasError(f"{path}: unknown gas label {gas!r}")
    return Recording(
        samples=np.array(rows),
        sample_rate=float(header["sample_rate"]),
        gas_label=gas,
        nominal_ppm=float(header["ppm"]),
        heater_voltage=float(header["heater_voltage"]),
        airflow_rpm=float(header["airflow_rpm"]),
        position_index=int(header["position_index"]),
        board_index=int(header["board_index"]),
        trial=int(header["trial"]),
    )


# ---------------------------------------------------------------------------
# graphs and aggregation
# ---------------------------------------------------------------------------

def single_board_graph() -> SensorGraph:
    """The 8 sensors of one board as a chain in slot order."""
    n = SENSORS_PER_BOARD
    pos = np.stack([np.zeros(n), 0.02 * np.arange(n)], axis=1)
    edges = frozenset((i, i + 1) for i in range(n - 1))
    return SensorGraph(n, pos, edges)


def board_column_graph() -> SensorGraph:
    """All nine boards: per-board sensor cliques, chained board to board.

    Vertex (board b, slot s) has id (b-1)*8 + s; boards are linked by edges
    between equal slots of adjacent boards.
    """
    n = BOARD_COUNT * SENSORS_PER_BOARD
    pos = np.zeros((n, 2))
    edges = set()
    for b in range(BOARD_COUNT):
        base = b * SENSORS_PER_BOARD
        for s in range(SENSORS_PER_BOARD):
            pos[base + s] = (BOARD_SPACING * (b + 1), 0.02 * s)
            for s2 in range(s + 1, SENSORS_PER_BOARD):
                edges.add((base + s, base + s2))
            if b + 1 < BOARD_COUNT:
                edges.add((base + s, base + SENSORS_PER_BOARD + s))
    return SensorGraph(n, pos, frozenset(edges))


def _consistent(recordings: list[Recording], attr: str):
    values = {getattr(r, attr) for r in recordings}
    if len(values) != 1:
        raise DatasetError(f"recordings disagree on {attr}: {sorted(values)}")
    return values.pop()


def aggregate(recordings: list[Recording], mode: str) -> list[GraphRecording]:
    """Build the scenario's GraphRecordings from one trial's board recordings."""
    if mode not in AGGREGATIONS:
        raise DatasetError(f"unknown aggregation {mode!r}")
    if not recordings:
        raise DatasetError("no recordings to aggregate")
    if mode == "single_board":
        out = []
        graph = single_board_graph()
        for rec in recordings:
            if rec.samples.shape[1] != SENSORS_PER_BOARD:
                raise DatasetError(
                    f"single_board needs {SENSORS_PER_BOARD}-sensor "
                    f"recordings, got {rec.samples.shape[1]}")
            out.append(GraphRecording(
                graph, rec.samples, rec.gas_label, rec.nominal_ppm,
                rec.heater_voltage, rec.airflow_rpm, rec.position_index,
                rec.board_index, rec.trial))
        return out

    by_board = {r.board_index: r for r in recordings}
    missing = [b for b in range(1, BOARD_COUNT + 1) if b not in by_board]
    if missing:
        raise MissingBoardError(f"board_column lacks boards {missing}")
    position = _consistent(recordings, "position_index")
    gas = _consistent(recordings, "gas_label")
    lengths = {b: by_board[b].samples.shape[0] for b in by_board}
    t_min = min(lengths.values())
    if len(set(lengths.values())) > 1:
        warnings.warn(
            f"board recordings have lengths {sorted(set(lengths.values()))}; "
            f"truncating to {t_min}", stacklevel=2)
    columns = [by_board[b].samples[:t_min] for b in range(1, BOARD_COUNT + 1)]
    first = by_board[1]
    return [GraphRecording(
        board_column_graph(), np.hstack(columns), gas, first.nominal_ppm,
        first.heater_voltage, first.airflow_rpm, position, None, first.trial)]


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale synthetic scenario: gases x positions x trials.

    Each sensor reads the advected plume through a per-gas gain vector and a
    first-order response filter whose time constant is gas-specific (with a
    per-sensor-slot modifier), mimicking analyte-dependent response kinetics;
    turbulence enters as a multiplicative smooth jitter and the electronics
    as additive colored noise.
    """

    gases: tuple[str, ...]
    position_indices: tuple[int, ...]
    trials_per_cell: int
    t_len: int = 512
    noise_level: float = 0.2   # additive electronics noise (std)
    sensors: int = SENSORS_PER_BOARD
    sample_rate: float = 10.0
    boards: tuple[int, ...] = (5,)
    gains: dict | None = None
    advection: float = 0.1     # m/s down the tunnel
    diffusion: float = 0.02    # m^2/s spread of the front
    kinetics: bool = True      # per-gas sensor response time constants
    turbulence: float = 0.4    # plume fluctuation amplitude at the source
    turbulence_growth: float = 0.5  # relative intensity increase per meter
    dilution: float = 2.0      # plume level decay rate per meter
    warp_seconds: float = 0.8  # per-trial arrival-time wobble amplitude
    level_jitter: float = 0.25  # per-trial per-sensor response-level spread

    def __post_init__(self):
        if not self.gases:
            raise DatasetError("synthetic spec lists no gases")
        unknown = [g for g in self.gases if g not in GAS_VOCABULARY]
        if unknown:
            raise UnknownGasError(f"unknown gases {unknown}")
        if len(set(self.gases)) != len(self.gases):
            raise DatasetError("duplicate gases in spec")
        if not self.position_indices:
            raise DatasetError("synthetic spec lists no positions")
        if any(not 0 <= p < len(POSITIONS) for p in self.position_indices):
            raise DatasetError("position indices must be in 0..5")
        if self.trials_per_cell < 1 or self.t_len < 2 or self.sensors < 1:
            raise DatasetError("invalid trial count, length, or sensor count")


def _stream(seed: int, *codes: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *codes]))


def _gas_gains(spec: SynthSpec, seed: int) -> dict[str, np.ndarray]:
    if spec.gains is not None:
        out = {}
        for gas in spec.gases:
            if gas not in spec.gains:
                raise DatasetError(f"no gain vector for {gas!r}")
            out[gas] = np.asarray(spec.gains[gas], dtype=float)
            if out[gas].shape != (spec.sensors,):
                raise DatasetError(f"gain vector for {gas!r} has wrong length")
        return out
    return {
        gas: _stream(seed, 0, GAS_VOCABULARY.index(gas))
        .uniform(0.8, 1.2, size=spec.sensors)
        for gas in spec.gases
    }


def _gas_time_constants(spec: SynthSpec, seed: int) -> dict[str, float]:
    """Response time constant (seconds) per gas.

    Log-spaced over the vocabulary (~0.15 s to ~2.5 s) with a small seeded
    wobble, so distinct analytes always respond at distinct speeds.
    """
    out = {}
    for gas in spec.gases:
        rng = _stream(seed, 2, GAS_VOCABULARY.index(gas))
        idx = GAS_VOCABULARY.index(gas)
        wobble = 0.1 * (2.0 * rng.random() - 1.0)
        out[gas] = float(0.15 * 2.0 ** (0.45 * idx + wobble))
    return out


def _sensor_speed_modifiers(spec: SynthSpec, seed: int) -> np.ndarray:
    return _stream(seed, 3).uniform(0.7, 1.3, size=spec.sensors)


def _respond(signal: np.ndarray, tau_samples: float) -> np.ndarray:
    """First-order low-pass with the given time constant in samples."""
    alpha = float(np.exp(-1.0 / tau_samples))
    return lfilter([1.0 - alpha], [1.0, -alpha], signal)


def _warp_time(signal: np.ndarray, rng: np.random.Generator,
               amp_samples: float) -> np.ndarray:
    """Slow random time-warp (advection-speed wobble), linear interpolation."""
    t_len = signal.shape[0]
    disp = amp_samples * _smooth_noise(rng, t_len, width=max(t_len // 8, 2))
    grad_max = float(np.max(np.abs(np.diff(disp))))
    if grad_max >= 0.5:
        disp *= 0.5 / grad_max
    pos = np.clip(np.arange(t_len) - disp, 0.0, t_len - 1.0)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, t_len - 1)
    frac = pos - lo
    return (1.0 - frac) * signal[lo] + frac * signal[hi]


def _plume(x_pos: float, t: np.ndarray, v: float, d: float) -> np.ndarray:
    """Advected diffusive front from a source at x = 0, released at t = 0."""
    out = np.zeros_like(t)
    live = t > 0
    spread = np.sqrt(4.0 * d * t[live])
    out[live] = 0.5 * erfc((x_pos - v * t[live]) / spread)
    return out


def _smooth_noise(rng: np.random.Generator, t_len: int, width: int = 10) -> np.ndarray:
    white = rng.normal(size=t_len)
    kernel = np.ones(width) / width
    smooth = np.fft.irfft(np.fft.rfft(white) * np.fft.rfft(kernel, t_len),
                          t_len)
    std = smooth.std()
    return smooth / std if std > 0 else smooth


def _colored_noise(rng: np.random.Generator, shape, rho: float = 0.9) -> np.ndarray:
    white = rng.normal(size=shape)
    out = np.empty(shape)
    out[0] = white[0]
    scale = np.sqrt(1.0 - rho * rho)
    for i in range(1, shape[0]):
        out[i] = rho * out[i - 1] + scale * white[i]
    return out


def synth_generate(spec: SynthSpec, seed: int) -> list[Recording]:
    """Deterministic synthetic dataset, one Recording per cell x board x trial."""
    gains = _gas_gains(spec, seed)
    taus = _gas_time_constants(spec, seed) if spec.kinetics else None
    modifiers = _sensor_speed_modifiers(spec, seed)
    t = np.arange(spec.t_len) / spec.sample_rate
    recordings = []
    for gi, gas in enumerate(spec.gases):
        for pos_idx in spec.position_indices:
            for board in spec.boards:
                for trial in range(spec.trials_per_cell):
                    rng = _stream(seed, 1, GAS_VOCABULARY.index(gas),
                                  pos_idx, board, trial)
                    ppm = 1000.0
                    if gas == "carbon_monoxide":
                        ppm = 1000.0 if trial % 2 == 0 else 4000.0
                    x_pos = POSITIONS[pos_idx]
                    atten = 1.0 / (1.0 + 0.3 * abs(board_coordinate(board) - 0.65))
                    atten /= 1.0 + spec.dilution * x_pos
                    base = _plume(x_pos, t, spec.advection,
                                  spec.diffusion) * (ppm / 1000.0) * atten
                    if spec.warp_seconds > 0:
                        base = _warp_time(base, rng,
                                          spec.warp_seconds * spec.sample_rate)
                    turb_local = spec.turbulence \
                        * (1.0 + spec.turbulence_growth * x_pos)
                    jitter = 1.0 + turb_local * _smooth_noise(rng, spec.t_len)
                    signal = base * jitter
                    if taus is None:
                        responses = np.tile(signal[:, None], (1, spec.sensors))
                    else:
                        responses = np.stack([
                            _respond(signal,
                                     taus[gas] * modifiers[s] * spec.sample_rate)
                            for s in range(spec.sensors)], axis=1)
                    levels = gains[gas] * np.maximum(
                        1.0 + spec.level_jitter * rng.normal(size=spec.sensors),
                        0.05)
                    noise = spec.noise_level \
                        * _colored_noise(rng, (spec.t_len, spec.sensors))
                    samples = responses * levels[None, :] + noise
                    recordings.append(Recording(
                        samples=samples,
                        sample_rate=spec.sample_rate,
                        gas_label=gas,
                        nominal_ppm=ppm,
                        heater_voltage=HEATER_VOLTAGES[trial % len(HEATER_VOLTAGES)],
                        airflow_rpm=AIRFLOW_RPMS[trial % len(AIRFLOW_RPMS)],
                        position_index=pos_idx,
                        board_index=board,
                        trial=trial,
                    ))
    return recordings


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

def extract_targets(recording, spec: ScenarioSpec):
    """Scenario target of one (graph) recording: label, x_pos, or 2-d location."""
    if spec.task == "gas10":
        return recording.gas_label
    if spec.task == "co_binary":
        if recording.gas_label != "carbon_monoxide":
            raise DatasetError(
                f"co_binary needs carbon_monoxide recordings, got "
                f"{recording.gas_label!r}")
        if recording.nominal_ppm not in (1000.0, 4000.0):
            raise DatasetError(
                f"co_binary needs 1000 or 4000 ppm, got {recording.nominal_ppm}")
        return "low" if recording.nominal_ppm == 1000.0 else "high"
    if spec.aggregation == "board_column":
        return recording.x_pos
    if recording.x_board is None:
        raise DatasetError("single_board localization needs a board index")
    return (recording.x_pos, recording.x_board)


def write_targets(path, task: str, targets) -> None:
    with open(path, "w") as fh:
        fh.write("# stsg-targets v1\n")
        fh.write(f"# task: {task}\n")
        for t in targets:
            if isinstance(t, str):
                fh.write(t + "\n")
            elif np.ndim(t) == 0:
                fh.write(repr(float(t)) + "\n")
            else:
                fh.write(" ".join(repr(float(v)) for v in t) + "\n")


def read_targets(path):
    """-> (task, list of labels / floats / tuples)."""
    with open(path) as fh:
        magic = fh.readline().rstrip("\n")
        if magic != "# stsg-targets v1":
            raise DatasetError(f"{path}: not a targets file")
        task_line = fh.readline().rstrip("\n")
        task = task_line.partition(": ")[2]
        out = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if task in ("gas10", "co_binary"):
                out.append(line)
            else:
                parts = [float(tok) for tok in line.split()]
                out.append(parts[0] if len(parts) == 1 else tuple(parts))
    return task, out
