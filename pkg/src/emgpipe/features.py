"""Windowing, the EMG feature bank, and feature-table assembly.

All feature kernels operate along axis 0 (time) and broadcast over any
trailing axes, so a stack of windows ``(N, n_windows, n_channels)`` is
processed in one call.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import EmgRecording, GestureTrial, extract_segments
from .errors import ArgumentError, DegenerateError, FeatureError, ParseError
from .wavelets import compute_mdwt

log = logging.getLogger(__name__)

REGISTRY_VERSION = "1"
META_COLUMNS = ("subject", "gesture", "repetition", "window_index")
FEATURE_FAMILIES = frozenset(
    {"RMS", "MAV", "IAV", "WL", "MAVS", "ZC", "SSC", "VAR", "CoV", "AR", "KURT", "MNP", "MNF", "mDWT"})
COV_EPS = 1e-12


# ----------------------------------------------------------------- windows

@dataclass(frozen=True)
class WindowSpec:
    window_ms: float = 200.0

    def samples(self, sample_rate_hz: float) -> int:
        n = self.window_ms * sample_rate_hz / 1000.0
        if n != int(n) or n < 1:
            raise ArgumentError(f"{self.window_ms} ms at {sample_rate_hz} Hz is not a whole number of samples")
        return int(n)


def segment_windows(trial: GestureTrial, spec: WindowSpec, sample_rate_hz: float) -> list:
    """Non-overlapping windows from the trial start as ``(index, matrix)`` pairs."""
    w = spec.samples(sample_rate_hz)
    n_win = trial.n_samples // w
    if n_win == 0:
        log.info("trial (subject %s, gesture %s, rep %s) shorter than one window",
                 trial.subject_id, trial.gesture, trial.repetition)
    return [(i, trial.segment[i * w:(i + 1) * w]) for i in range(n_win)]


# ----------------------------------------------------------------- kernels

def mav(x):
    return np.mean(np.abs(x), axis=0)


def iav(x):
    return np.sum(np.abs(x), axis=0)


def rms(x):
    return np.sqrt(np.mean(x * x, axis=0))


def wl(x):
    return np.sum(np.abs(np.diff(x, axis=0)), axis=0)


def var(x):
    return np.var(x, axis=0, ddof=1)


def zc(x, eps=0.0):
    a, b = x[:-1], x[1:]
    return np.sum((a * b < 0) & (np.abs(a - b) >= eps), axis=0).astype(np.float64)


def ssc(x, eps=0.0):
    if x.shape[0] < 3:
        raise ArgumentError("SSC needs at least 3 samples")
    left = x[1:-1] - x[:-2]
    right = x[1:-1] - x[2:]
    hit = (left * right > 0) & (np.maximum(np.abs(left), np.abs(right)) >= eps)
    return np.sum(hit, axis=0).astype(np.float64)


def mavs(x, segments=3):
    seg = x.shape[0] // segments
    if seg < 1:
        raise ArgumentError(f"MAVS with {segments} sub-segments needs >= {segments} samples")
    m = [mav(x[i * seg:(i + 1) * seg]) for i in range(segments)]
    return np.mean(np.diff(np.stack(m), axis=0), axis=0)


def cov(x):
    """std / |mean|; windows with |mean| below 1e-12 give 0 and a flag."""
    m = np.mean(x, axis=0)
    s = np.std(x, axis=0, ddof=1)
    flag = np.abs(m) < COV_EPS
    out = np.where(flag, 0.0, s / np.where(flag, 1.0, np.abs(m)))
    return out, flag


def kurt(x):
    """Excess kurtosis from biased central moments; constant windows give 0 and a flag."""
    d = x - np.mean(x, axis=0)
    m2 = np.mean(d * d, axis=0)
    m4 = np.mean(d ** 4, axis=0)
    flag = m2 <= 0
    out = np.where(flag, 0.0, m4 / np.where(flag, 1.0, m2 * m2) - 3.0)
    return out, flag


def periodogram(x, fs):
    """One-sided ``|X_k|^2 / N`` of the mean-removed window and its bin frequencies."""
    n = x.shape[0]
    d = x - np.mean(x, axis=0)
    p = np.abs(np.fft.rfft(d, axis=0)) ** 2 / n
    f = np.fft.rfftfreq(n, d=1.0 / fs)
    return f, p


def spectral(x, fs):
    """``(MNP, MNF, zero_power_flag)``."""
    if x.shape[0] < 8:
        raise ArgumentError("spectral features need at least 8 samples")
    f, p = periodogram(x, fs)
    total = p.sum(axis=0)
    mnp = p.mean(axis=0)
    f = f.reshape((-1,) + (1,) * (p.ndim - 1))
    flag = total <= 0
    mnf = np.where(flag, 0.0, (f * p).sum(axis=0) / np.where(flag, 1.0, total))
    return mnp, mnf, flag


def compute_spectral_features(x, fs) -> dict:
    mnp, mnf, flag = spectral(np.asarray(x, dtype=np.float64), fs)
    return {"MNP": float(mnp), "MNF": float(mnf), "zero_power": bool(flag)}


def burg(x, order: int):
    """Burg AR fit along axis 0 of the mean-removed signal.

    Returns ``(coefficients, error_power)`` where ``coefficients[k-1]`` is the
    weight on lag k in ``x[i] = sum_k a_k x[i-k] + e[i]`` and ``error_power``
    holds the prediction-error power for orders 0..order.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if order < 1 or n <= 2 * order:
        raise ArgumentError(f"AR({order}) needs more than {2 * order} samples, got {n}")
    trailing = x.shape[1:]
    x = x.reshape(n, -1)
    x = x - x.mean(axis=0)
    energy = np.mean(x * x, axis=0)
    if np.any(energy <= 0):
        raise DegenerateError("AR fit of a constant signal")
    m = x.shape[1]
    a = np.zeros((order + 1, m))
    a[0] = 1.0
    f = x[1:].copy()
    b = x[:-1].copy()
    err = [energy]
    e = energy
    for k in range(1, order + 1):
        num = -2.0 * np.sum(b * f, axis=0)
        den = np.sum(f * f + b * b, axis=0)
        refl = num / den
        a_prev = a.copy()
        for i in range(1, k + 1):
            a[i] = a_prev[i] + refl * a_prev[k - i]
        e = e * (1 - refl * refl)
        err.append(e)
        f, b = f[1:] + refl * b[1:], b[:-1] + refl * f[:-1]
    coeffs = -a[1:]
    return coeffs.reshape((order,) + trailing), np.stack(err).reshape((order + 1,) + trailing)


def compute_ar_coefficients(x, order: int = 4) -> np.ndarray:
    return burg(x, order)[0]


SCALAR_KERNELS = {
    "RMS": lambda x, fs, p: rms(x),
    "MAV": lambda x, fs, p: mav(x),
    "IAV": lambda x, fs, p: iav(x),
    "WL": lambda x, fs, p: wl(x),
    "MAVS": lambda x, fs, p: mavs(x, p.get("segments", 3)),
    "ZC": lambda x, fs, p: zc(x, p.get("eps", 0.0)),
    "SSC": lambda x, fs, p: ssc(x, p.get("eps", 0.0)),
    "VAR": lambda x, fs, p: var(x),
    "CoV": lambda x, fs, p: cov(x),
    "KURT": lambda x, fs, p: kurt(x),
    "MNP": lambda x, fs, p: spectral(x, fs)[0],
    "MNF": lambda x, fs, p: spectral(x, fs)[1:],
}


def compute_scalar_feature(name: str, x, params: Optional[dict] = None, fs: float = 2000.0) -> float:
    """Single scalar feature of a 1-D window."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ArgumentError("scalar features take a 1-D window of length >= 2")
    if name not in SCALAR_KERNELS:
        raise ArgumentError(f"unknown scalar feature {name!r}")
    out = SCALAR_KERNELS[name](x, fs, params or {})
    if isinstance(out, tuple):
        out = out[0]
    return float(out)


# ---------------------------------------------------------------- registry

@dataclass(frozen=True)
class FeatureDef:
    name: str
    domain: str
    arity: str = "scalar"
    params: dict = field(default_factory=dict)

    @property
    def n_outputs(self) -> int:
        if self.name == "AR":
            return int(self.params.get("order", 4))
        if self.name == "mDWT":
            return int(self.params.get("levels", 3))
        return 1

    def output_names(self) -> list:
        if self.arity == "scalar":
            return [self.name]
        return [f"{self.name}{j + 1}" for j in range(self.n_outputs)]


@dataclass(frozen=True)
class FeatureRegistry:
    features: tuple
    version: str = REGISTRY_VERSION

    def names(self) -> list:
        return [f.name for f in self.features]

    def to_dict(self) -> dict:
        return {"version": self.version,
                "features": [{"name": f.name, "domain": f.domain, "arity": f.arity, "params": dict(f.params)}
                             for f in self.features]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRegistry":
        return cls(tuple(FeatureDef(f["name"], f["domain"], f.get("arity", "scalar"), dict(f.get("params", {})))
                         for f in d["features"]), d.get("version", REGISTRY_VERSION))


def scalar_registry() -> FeatureRegistry:
    t, fq = "time", "frequency"
    return FeatureRegistry((
        FeatureDef("RMS", t), FeatureDef("MAV", t), FeatureDef("IAV", t), FeatureDef("WL", t),
        FeatureDef("MAVS", t, params={"segments": 3}), FeatureDef("ZC", t, params={"eps": 0.0}),
        FeatureDef("SSC", t, params={"eps": 0.0}), FeatureDef("VAR", t), FeatureDef("CoV", t),
        FeatureDef("KURT", t), FeatureDef("MNP", fq), FeatureDef("MNF", fq),
    ))


def default_registry() -> FeatureRegistry:
    base = list(scalar_registry().features)
    base.insert(9, FeatureDef("AR", "time", "multi", {"order": 4}))
    base.append(FeatureDef("mDWT", "frequency", "multi", {"wavelet": 7, "levels": 3}))
    return FeatureRegistry(tuple(base))


def _compute(fdef: FeatureDef, x: np.ndarray, fs: float):
    """Feature outputs ``(n_outputs, *trailing)`` and flags of the same shape."""
    if fdef.name == "AR":
        vals = burg(x, int(fdef.params.get("order", 4)))[0]
        return vals, np.zeros(vals.shape, dtype=bool)
    if fdef.name == "mDWT":
        vals = compute_mdwt(x, int(fdef.params.get("wavelet", 7)), int(fdef.params.get("levels", 3)))
        return vals, np.zeros(vals.shape, dtype=bool)
    if fdef.name not in SCALAR_KERNELS:
        raise ArgumentError(f"unknown feature {fdef.name!r}")
    out = SCALAR_KERNELS[fdef.name](x, fs, fdef.params)
    if isinstance(out, tuple):
        vals, flag = out
    else:
        vals, flag = out, np.zeros(np.shape(out), dtype=bool)
    return np.asarray(vals)[None], np.asarray(flag)[None]


# ------------------------------------------------------------------- table

@dataclass(eq=False)
class FeatureTable:
    """Window x feature matrix with window metadata.

    ``meta`` rows are ``(subject, gesture, repetition, window_index)``.
    Each column has a family (feature name, with an ``_std`` suffix for the
    cross-channel dispersion companions) and a 1-based channel (0 for
    ``_std`` columns). ``flags`` marks cells where a degenerate-input policy
    replaced the value.
    """

    meta: np.ndarray
    values: np.ndarray
    columns: tuple
    families: tuple
    channels: tuple
    flags: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.meta = np.asarray(self.meta, dtype=np.int64).reshape(-1, len(META_COLUMNS))
        self.values = np.asarray(self.values, dtype=np.float64).reshape(self.meta.shape[0], len(self.columns))
        self.flags = np.asarray(self.flags, dtype=bool).reshape(self.values.shape)
        self.columns, self.families, self.channels = tuple(self.columns), tuple(self.families), tuple(
            int(c) for c in self.channels)
        if len(set(self.columns)) != len(self.columns):
            raise ArgumentError("duplicate column names")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def subject(self):
        return self.meta[:, 0]

    @property
    def gesture(self):
        return self.meta[:, 1]

    @property
    def repetition(self):
        return self.meta[:, 2]

    def groups(self) -> np.ndarray:
        """Integer id per (subject, gesture, repetition)."""
        _, inv = np.unique(self.meta[:, :3], axis=0, return_inverse=True)
        return inv.ravel()

    def take_rows(self, mask) -> "FeatureTable":
        return FeatureTable(self.meta[mask], self.values[mask], self.columns, self.families,
                            self.channels, self.flags[mask], dict(self.provenance))

    def take_columns(self, idx) -> "FeatureTable":
        idx = list(idx)
        return FeatureTable(self.meta, self.values[:, idx], [self.columns[i] for i in idx],
                            [self.families[i] for i in idx], [self.channels[i] for i in idx],
                            self.flags[:, idx], dict(self.provenance))

    def select(self, families=None, channels=None) -> "FeatureTable":
        """Columns of the given families; per-channel columns limited to ``channels``."""
        keep = []
        for i, (fam, ch) in enumerate(zip(self.families, self.channels)):
            if families is not None and fam not in families:
                continue
            if channels is not None and ch != 0 and ch not in channels:
                continue
            keep.append(i)
        return self.take_columns(keep)

    def schema_hash(self) -> str:
        return schema_hash(self.columns)

    def column_info(self) -> list:
        return [{"name": c, "family": f, "channel": ch}
                for c, f, ch in zip(self.columns, self.families, self.channels)]

    # -- persistence
    def to_csv(self, path, manifest: Optional[dict] = None) -> None:
        path = Path(path)
        lines = [",".join(list(META_COLUMNS) + list(self.columns) + ["flags"])]
        for m, v, fl in zip(self.meta.tolist(), self.values.tolist(), self.flags):
            flag_txt = ";".join(str(i) for i in np.flatnonzero(fl))
            lines.append(",".join([str(a) for a in m] + [repr(a) for a in v] + [flag_txt]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        side = dict(manifest or {})
        side.update({"columns": self.column_info(), "n_rows": self.n_rows, "provenance": self.provenance})
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FeatureTable":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        info = side["columns"]
        rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
        header = rows[0]
        n_meta = len(META_COLUMNS)
        if tuple(header[:n_meta]) != META_COLUMNS or header[-1] != "flags" or \
                header[n_meta:-1] != [c["name"] for c in info]:
            raise ParseError(f"{path}: header does not match its manifest")
        body = rows[1:]
        meta = np.array([[int(c) for c in r[:n_meta]] for r in body], dtype=np.int64).reshape(-1, n_meta)
        values = np.array([[float(c) for c in r[n_meta:-1]] for r in body]).reshape(len(body), len(info))
        flags = np.zeros(values.shape, dtype=bool)
        for i, r in enumerate(body):
            if r[-1]:
                flags[i, [int(j) for j in r[-1].split(";")]] = True
        return cls(meta, values, [c["name"] for c in info], [c["family"] for c in info],
                   [c["channel"] for c in info], flags, side.get("provenance", {}))


def schema_hash(columns: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(columns).encode("utf-8")).hexdigest()[:16]


def column_layout(registry: FeatureRegistry, n_channels: int):
    """Column names, families and channels in table order."""
    names, fams, chans = [], [], []
    for fdef in registry.features:
        for out in fdef.output_names():
            for k in range(n_channels):
                names.append(f"{out}_ch{k + 1}")
                fams.append(fdef.name)
                chans.append(k + 1)
    for fdef in registry.features:
        for out in fdef.output_names():
            names.append(f"{out}_std")
            fams.append(f"{fdef.name}_std")
            chans.append(0)
    return names, fams, chans


def _channel_std(v: np.ndarray) -> np.ndarray:
    # shifted two-pass: exactly 0 when all channels agree
    d = v - v[..., :1]
    m = d.mean(axis=-1, keepdims=True)
    return np.sqrt(np.mean((d - m) ** 2, axis=-1))


def window_features(stack: np.ndarray, registry: FeatureRegistry, fs: float):
    """Feature rows for a window stack ``(N, n_windows, n_channels)``.

    Returns ``(values, flags)`` each ``(n_windows, n_columns)`` in
    :func:`column_layout` order.
    """
    per_ch, per_flag, std_cols, std_flags = [], [], [], []
    for fdef in registry.features:
        vals, flg = _compute(fdef, stack, fs)  # (n_out, W, C)
        for j in range(vals.shape[0]):
            per_ch.append(vals[j])
            per_flag.append(flg[j])
            std_cols.append(_channel_std(vals[j])[:, None])
            std_flags.append(flg[j].any(axis=-1)[:, None])
    values = np.concatenate(per_ch + std_cols, axis=1)
    flags = np.concatenate(per_flag + std_flags, axis=1)
    return values, flags


def extract_feature_table(recordings: Sequence[EmgRecording], registry: Optional[FeatureRegistry] = None,
                          spec: WindowSpec = WindowSpec(), include_rest: bool = True) -> FeatureTable:
    """Feature rows for every full window of every trial (and rest run)."""
    registry = registry or default_registry()
    recordings = list(recordings)
    if not recordings:
        raise ArgumentError("no recordings given")
    n_ch = recordings[0].n_channels
    fs = recordings[0].sample_rate_hz
    names, fams, chans = column_layout(registry, n_ch)
    metas, vals, flags = [], [], []
    for rec in recordings:
        if rec.n_channels != n_ch or rec.sample_rate_hz != fs:
            raise ArgumentError("all recordings must share channel count and sample rate")
        w = spec.samples(fs)
        for seg in extract_segments(rec, include_rest):
            n_win = seg.n_samples // w
            if n_win == 0:
                log.info("segment at %d (subject %d, gesture %d) shorter than one window",
                         seg.start_index, seg.subject_id, seg.gesture)
                continue
            stack = seg.segment[:n_win * w].reshape(n_win, w, n_ch).transpose(1, 0, 2)
            try:
                v, f = window_features(stack, registry, fs)
            except (DegenerateError, ArgumentError) as exc:
                raise FeatureError(_diagnose(seg, stack, registry, fs, exc)) from exc
            bad = ~np.isfinite(v)
            if bad.any():
                r, c = np.argwhere(bad)[0]
                raise FeatureError(f"non-finite {names[c]} at subject {seg.subject_id}, gesture {seg.gesture}, "
                                   f"rep {seg.repetition}, window {r}")
            metas.append(np.column_stack([np.full(n_win, seg.subject_id), np.full(n_win, seg.gesture),
                                          np.full(n_win, seg.repetition), np.arange(n_win)]))
            vals.append(v)
            flags.append(f)
    n_cols = len(names)
    prov = {"window": asdict(spec), "registry": registry.to_dict(), "include_rest": include_rest,
            "sample_rate_hz": fs, "n_channels": n_ch,
            "attribute_scheme": "per-channel base metrics + cross-channel std companions"}
    preprocess_cfg = recordings[0].metadata.get("preprocess")
    if preprocess_cfg is not None:
        prov["preprocess_config_hash"] = hashlib.sha256(
            json.dumps(preprocess_cfg, sort_keys=True).encode()).hexdigest()[:16]
    return FeatureTable(np.concatenate(metas) if metas else np.zeros((0, 4)),
                        np.concatenate(vals) if vals else np.zeros((0, n_cols)),
                        names, fams, chans,
                        np.concatenate(flags) if flags else np.zeros((0, n_cols), dtype=bool), prov)


def _diagnose(seg, stack, registry, fs, exc) -> str:
    """Locate the first (window, channel, feature) that fails on its own."""
    for wi in range(stack.shape[1]):
        for ch in range(stack.shape[2]):
            for fdef in registry.features:
                try:
                    _compute(fdef, stack[:, wi, ch], fs)
                except (DegenerateError, ArgumentError) as e:
                    return (f"subject {seg.subject_id}, gesture {seg.gesture}, rep {seg.repetition}, "
                            f"window {wi}, channel {ch + 1}, feature {fdef.name}: {e}")
    return f"subject {seg.subject_id}, gesture {seg.gesture}, rep {seg.repetition}: {exc}"


def expected_row_count(recordings, spec: WindowSpec, include_rest: bool = True) -> int:
    total = 0
    for rec in recordings:
        w = spec.samples(rec.sample_rate_hz)
        total += sum(s.n_samples // w for s in extract_segments(rec, include_rest))
    return total
