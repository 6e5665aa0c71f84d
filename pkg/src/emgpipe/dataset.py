"""Recording data model, CSV / MAT ingestion and the synthetic EMG generator."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, ParseError, SchemaError, ValidationError
from .seeding import derive_seed

log = logging.getLogger(__name__)

MAX_GESTURE = 52
MAX_REPETITION = 6


@dataclass(frozen=True, eq=False)
class EmgRecording:
    """One subject's multichannel recording with per-sample labels.

    ``channels`` is ``(n_samples, n_channels)``; ``stimulus`` holds gesture
    labels (0 = rest) and ``repetition`` the repetition index (0 = rest).
    Arrays are copied and frozen on construction.
    """

    subject_id: int
    sample_rate_hz: float
    channels: np.ndarray
    stimulus: np.ndarray
    repetition: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ch = np.array(self.channels, dtype=np.float64)
        if ch.ndim == 1:
            ch = ch[:, None]
        stim = _as_label_vector(self.stimulus, "stimulus")
        rep = _as_label_vector(self.repetition, "repetition")
        validate_arrays(ch, stim, rep, self.sample_rate_hz)
        for arr in (ch, stim, rep):
            arr.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "stimulus", stim)
        object.__setattr__(self, "repetition", rep)
        object.__setattr__(self, "subject_id", int(self.subject_id))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def n_samples(self) -> int:
        return self.channels.shape[0]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]

    def with_channels(self, channels: np.ndarray, **metadata) -> "EmgRecording":
        """Copy with new channel data and labels untouched."""
        meta = dict(self.metadata)
        meta.update(metadata)
        return EmgRecording(self.subject_id, self.sample_rate_hz, channels,
                            self.stimulus, self.repetition, meta)

    def __eq__(self, other):
        if not isinstance(other, EmgRecording):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.stimulus, other.stimulus)
                and np.array_equal(self.repetition, other.repetition))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GestureTrial:
    subject_id: int
    gesture: int
    repetition: int
    segment: np.ndarray
    start_index: int

    @property
    def n_samples(self) -> int:
        return self.segment.shape[0]


def _as_label_vector(values, name):
    arr = np.asarray(values)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr) | (arr != np.round(arr)))[0])
            raise ValidationError(f"{name} value at row {bad} is not an integer: {arr[bad]!r}")
    elif arr.dtype.kind not in "iub":
        raise ValidationError(f"{name} must be numeric")
    return arr.astype(np.int64)


def validate_arrays(ch, stim, rep, sample_rate_hz):
    if not sample_rate_hz > 0:
        raise ValidationError(f"sample rate must be positive, got {sample_rate_hz}")
    n = ch.shape[0]
    if ch.ndim != 2 or ch.shape[1] < 1:
        raise ValidationError(f"channels must be (n_samples, n_channels>=1), got {ch.shape}")
    if stim.shape[0] != n or rep.shape[0] != n:
        raise ValidationError(
            f"length mismatch: channels {n}, stimulus {stim.shape[0]}, repetition {rep.shape[0]}")
    bad = np.flatnonzero((stim < 0) | (stim > MAX_GESTURE))
    if bad.size:
        raise ValidationError(f"stimulus value {stim[bad[0]]} out of [0, {MAX_GESTURE}] at row {bad[0]}")
    bad = np.flatnonzero((rep < 0) | (rep > MAX_REPETITION))
    if bad.size:
        raise ValidationError(f"repetition value {rep[bad[0]]} out of [0, {MAX_REPETITION}] at row {bad[0]}")
    finite = np.isfinite(ch)
    if not finite.all():
        r, c = np.argwhere(~finite)[0]
        raise ValidationError(f"non-finite sample at row {r}, channel {c}")


# --------------------------------------------------------------------- CSV

@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for CSV recordings.

    ``channels=None`` takes every column whose name starts with
    ``channel_prefix`` in header order.
    """

    channels: Optional[tuple] = None
    stimulus: str = "stimulus"
    repetition: str = "repetition"
    channel_prefix: str = "ch"


def load_csv_recording(path, schema: CsvSchema = CsvSchema(), subject_id: int = 0,
                       sample_rate_hz: float = 2000.0) -> EmgRecording:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        body = fh.read()

    if schema.channels is None:
        ch_names = [h for h in header if h.startswith(schema.channel_prefix)]
    else:
        ch_names = list(schema.channels)
    wanted = ch_names + [schema.stimulus, schema.repetition]
    missing = [w for w in wanted if w not in header]
    if missing or not ch_names:
        raise SchemaError(f"{path}: missing column(s) {missing or ['<channels>']}; header is {header}")
    idx = [header.index(w) for w in wanted]

    data = _parse_numeric_body(body, len(header), path)
    if data.shape[0] == 0:
        data = np.zeros((0, len(header)))
    sel = data[:, idx]
    return EmgRecording(subject_id, sample_rate_hz, sel[:, :len(ch_names)],
                        sel[:, -2], sel[:, -1], {"source": str(path), "channel_names": ch_names})


def _parse_numeric_body(body: str, n_cols: int, path) -> np.ndarray:
    if not body.strip():
        return np.zeros((0, n_cols))
    try:
        data = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.float64, ndmin=2)
        if data.shape[1] == n_cols:
            return data
    except ValueError:
        pass
    # slow path only to produce a precise diagnostic
    for r, row in enumerate(csv.reader(io.StringIO(body)), start=2):
        if len(row) != n_cols:
            raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {n_cols}")
        for c, cell in enumerate(row):
            try:
                float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {c + 1}: not a number: {cell!r}") from None
    raise ParseError(f"{path}: could not parse numeric body")


def write_csv_recording(rec: EmgRecording, path) -> None:
    """Write ``rec`` in the canonical ``ch1..chN,stimulus,repetition`` layout.

    Floats use ``repr`` (shortest round-tripping form), so reading the file
    back yields bit-identical values.
    """
    header = [f"ch{k + 1}" for k in range(rec.n_channels)] + ["stimulus", "repetition"]
    cols = [list(map(repr, rec.channels[:, k].tolist())) for k in range(rec.n_channels)]
    cols.append(list(map(str, rec.stimulus.tolist())))
    cols.append(list(map(str, rec.repetition.tolist())))
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in zip(*cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------- MAT

def load_mat_recording(path, variable_names: Optional[dict] = None, subject_id: Optional[int] = None,
                       sample_rate_hz: float = 2000.0) -> EmgRecording:
    """Load a NINAPRO-style MAT v5 file.

    ``variable_names`` maps ``emg``/``stimulus``/``repetition`` to variable
    names in the file. Missing entries default to ``emg`` and to the refined
    ``restimulus``/``rerepetition`` labels when the file has them, else the
    raw ``stimulus``/``repetition``.
    """
    from .matfile import read_mat

    variables = read_mat(path)
    names = dict(variable_names or {})
    names.setdefault("emg", "emg")
    names.setdefault("stimulus", "restimulus" if "restimulus" in variables else "stimulus")
    names.setdefault("repetition", "rerepetition" if "rerepetition" in variables else "repetition")
    emg = variables.get_array(names["emg"])
    stim = variables.get_array(names["stimulus"])
    rep = variables.get_array(names["repetition"])
    if subject_id is None:
        subject_id = 0
        if "subject" in variables:
            subj = variables.get_array("subject")
            if subj.size == 1:
                subject_id = int(subj.ravel()[0])
    return EmgRecording(subject_id, sample_rate_hz, emg, stim, rep,
                        {"source": str(path), "variables": names})


# --------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic EMG generator.

    ``activation_profile`` is a per-gesture list of per-channel amplitudes in
    [0, 1]; when omitted it is drawn from ``seed``. The band-limited carrier
    is renormalized to unit RMS over consecutive ``carrier_block_ms`` blocks
    (0 disables) so that the envelope contract holds at window scale.
    """

    seed: int = 42
    n_subjects: int = 2
    n_channels: int = 12
    gesture_labels: tuple = (1, 2, 3, 4, 5, 6)
    reps_per_gesture: int = 6
    contraction_s: float = 5.0
    rest_s: float = 3.0
    sample_rate_hz: float = 2000.0
    activation_profile: Optional[tuple] = None
    noise_floor: float = 0.05
    band_hz: tuple = (20.0, 450.0)
    carrier_block_ms: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "gesture_labels", tuple(int(g) for g in self.gesture_labels))
        object.__setattr__(self, "band_hz", tuple(float(b) for b in self.band_hz))
        if self.activation_profile is not None:
            object.__setattr__(self, "activation_profile",
                               tuple(tuple(float(a) for a in row) for row in self.activation_profile))

    def profile(self) -> np.ndarray:
        """Activation matrix ``(n_gestures, n_channels)``."""
        if self.activation_profile is not None:
            return np.asarray(self.activation_profile, dtype=np.float64)
        rng = np.random.default_rng(derive_seed(self.seed, "activation_profile"))
        return rng.uniform(0.0, 1.0, size=(len(self.gesture_labels), self.n_channels))

    def validate(self):
        if not self.gesture_labels:
            raise ArgumentError("synthetic spec needs at least one gesture label")
        if any(g < 1 or g > MAX_GESTURE for g in self.gesture_labels):
            raise ArgumentError(f"gesture labels must lie in 1..{MAX_GESTURE}")
        if len(set(self.gesture_labels)) != len(self.gesture_labels):
            raise ArgumentError("gesture labels must be unique")
        if not 1 <= self.reps_per_gesture <= MAX_REPETITION:
            raise ArgumentError(f"reps_per_gesture must lie in 1..{MAX_REPETITION}")
        if self.n_subjects < 1 or self.n_channels < 1:
            raise ArgumentError("n_subjects and n_channels must be >= 1")
        if self.contraction_s <= 0 or self.rest_s < 0 or self.sample_rate_hz <= 0:
            raise ArgumentError("durations and sample rate must be positive")
        lo, hi = self.band_hz
        if not 0 <= lo < hi <= self.sample_rate_hz / 2:
            raise ArgumentError(f"band {self.band_hz} invalid for fs={self.sample_rate_hz}")
        prof = self.profile()
        if prof.shape != (len(self.gesture_labels), self.n_channels):
            raise ArgumentError(
                f"activation_profile shape {prof.shape} != ({len(self.gesture_labels)}, {self.n_channels})")
        if np.any(prof < 0) or np.any(prof > 1):
            raise ArgumentError("activation amplitudes must lie in [0, 1]")
        if self.noise_floor < 0:
            raise ArgumentError("noise_floor must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gesture_labels"] = list(self.gesture_labels)
        d["band_hz"] = list(self.band_hz)
        if self.activation_profile is not None:
            d["activation_profile"] = [list(r) for r in self.activation_profile]
        return d


def band_limited_noise(rng: np.random.Generator, n: int, n_channels: int, fs: float,
                       band: tuple) -> np.ndarray:
    white = rng.standard_normal((n, n_channels))
    spec = np.fft.rfft(white, axis=0)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    out = np.fft.irfft(spec, n=n, axis=0)
    rms = np.sqrt(np.mean(out ** 2, axis=0))
    rms[rms == 0] = 1.0
    return out / rms


def _block_normalize(x: np.ndarray, block: int) -> np.ndarray:
    out = np.empty_like(x)
    for start in range(0, x.shape[0], block):
        seg = x[start:start + block]
        rms = np.sqrt(np.mean(seg ** 2, axis=0))
        rms[rms == 0] = 1.0
        out[start:start + block] = seg / rms
    return out


def generate_synthetic_recording(spec: SyntheticSpec, subject_id: int = 1) -> EmgRecording:
    """Generate one subject following the contraction/rest protocol.

    Each gesture is performed ``reps_per_gesture`` times; every repetition is
    ``contraction_s`` of carrier at amplitude ``noise_floor + profile[g, c]``
    followed by ``rest_s`` at ``noise_floor``.
    """
    spec.validate()
    fs = spec.sample_rate_hz
    n_con = int(round(spec.contraction_s * fs))
    n_rest = int(round(spec.rest_s * fs))
    prof = spec.profile()
    n_trials = len(spec.gesture_labels) * spec.reps_per_gesture
    n = n_trials * (n_con + n_rest)

    env = np.full((n, spec.n_channels), spec.noise_floor)
    stim = np.zeros(n, dtype=np.int64)
    rep = np.zeros(n, dtype=np.int64)
    pos = 0
    for gi, g in enumerate(spec.gesture_labels):
        for r in range(1, spec.reps_per_gesture + 1):
            env[pos:pos + n_con] += prof[gi]
            stim[pos:pos + n_con] = g
            rep[pos:pos + n_con] = r
            pos += n_con + n_rest

    rng = np.random.default_rng(derive_seed(spec.seed, "synthetic", subject_id))
    carrier = band_limited_noise(rng, n, spec.n_channels, fs, spec.band_hz)
    block = int(round(spec.carrier_block_ms * fs / 1000.0))
    if block > 1:
        carrier = _block_normalize(carrier, block)
    return EmgRecording(subject_id, fs, carrier * env, stim, rep,
                        {"source": "synthetic", "synthetic_spec": spec.to_dict()})


def generate_synthetic_recordings(spec: SyntheticSpec) -> list:
    return [generate_synthetic_recording(spec, s + 1) for s in range(spec.n_subjects)]


# ------------------------------------------------------------------ trials

def label_runs(stimulus: np.ndarray, repetition: np.ndarray) -> list:
    """Maximal runs of identical (stimulus, repetition) as ``(start, stop, g, r)``."""
    n = len(stimulus)
    if n == 0:
        return []
    change = np.flatnonzero((np.diff(stimulus) != 0) | (np.diff(repetition) != 0)) + 1
    starts = np.concatenate(([0], change))
    stops = np.concatenate((change, [n]))
    return [(int(a), int(b), int(stimulus[a]), int(repetition[a])) for a, b in zip(starts, stops)]


def extract_trials(rec: EmgRecording) -> list:
    """One :class:`GestureTrial` per maximal non-rest run, ordered by start."""
    return [GestureTrial(rec.subject_id, g, r, rec.channels[a:b], a)
            for a, b, g, r in label_runs(rec.stimulus, rec.repetition) if g != 0]


def extract_rest_runs(rec: EmgRecording) -> list:
    """Rest runs as gesture-0 trials.

    A rest run carries the repetition index of the trial that precedes it
    (0 for leading rest), so repetition-grouped splits keep it next to its
    contraction.
    """
    out = []
    prev_rep = 0
    for a, b, g, r in label_runs(rec.stimulus, rec.repetition):
        if g == 0:
            out.append(GestureTrial(rec.subject_id, 0, prev_rep, rec.channels[a:b], a))
        else:
            prev_rep = r
    return out


def extract_segments(rec: EmgRecording, include_rest: bool = True) -> list:
    segs = extract_trials(rec)
    if include_rest:
        segs = sorted(segs + extract_rest_runs(rec), key=lambda t: t.start_index)
    return segs


def trial_counts(rec: EmgRecording) -> dict:
    """Number of trials per gesture label."""
    counts: dict = {}
    for t in extract_trials(rec):
        counts[t.gesture] = counts.get(t.gesture, 0) + 1
    return counts
