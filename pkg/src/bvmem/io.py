"""Series files, run configuration and the binary draw archive."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .kernels import NWHyper
from .postprocess import IdentifiedDraw, TruncationReport
from .sampler import SamplerConfig
from .vmem import MeanParams, SeriesMatrix

__all__ = [
    "ANNUALIZATION",
    "ConfigError",
    "DataError",
    "ArchiveError",
    "load_series",
    "write_series",
    "write_table",
    "read_table",
    "write_grid",
    "RunConfig",
    "load_config",
    "config_hash",
    "write_archive",
    "read_archive",
    "draw_to_record",
    "record_to_draw",
]

ANNUALIZATION = 100.0 * math.sqrt(252.0)
FLOAT_FMT = "%.17g"
MAGIC = b"BVMEMDRW"
VERSION = 1


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class ArchiveError(ValueError):
    pass


# -- series ---------------------------------------------------------------------

def _data_lines(fh):
    for line in fh:
        if line.strip() and not line.lstrip().startswith("#"):
            yield line


def load_series(path, columns=None, annualize: bool = False) -> SeriesMatrix:
    """Read a header-bearing CSV whose first column is a date or label.

    ``columns`` selects numeric columns by header name (all of them when
    omitted). With ``annualize`` every value is multiplied by
    ``100 * sqrt(252)``. Rows with a missing, non-numeric or non-positive
    selected value are rejected, listing their 1-based data row numbers.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(_data_lines(fh))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a label column and at least one numeric column")
        names = header[1:] if columns is None else list(columns)
        missing = [c for c in names if c not in header[1:]]
        if missing:
            raise ConfigError(f"{path}: columns not found: {missing}")
        idx = [header.index(c) for c in names]
        labels, rows, bad = [], [], []
        for rownum, row in enumerate(reader, start=1):
            labels.append(row[0].strip() if row else "")
            vals = []
            for i in idx:
                try:
                    vals.append(float(row[i]))
                except (ValueError, IndexError):
                    vals.append(math.nan)
            rows.append(vals)
            if not all(v > 0 for v in vals):
                bad.append(rownum)
    if bad:
        raise DataError(f"{path}: missing or non-positive values in rows {bad}")
    values = np.array(rows, dtype=float)
    if annualize:
        values = values * ANNUALIZATION
    return SeriesMatrix(values, timestamps=labels)


def write_series(path, series, names=None, labels=None, comment: Optional[str] = None):
    x = np.asarray(series, dtype=float)
    names = names or [f"x{i + 1}" for i in range(x.shape[1])]
    labels = labels if labels is not None else [str(t + 1) for t in range(x.shape[0])]
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["t", *names])
        for lab, row in zip(labels, x):
            w.writerow([lab, *(FLOAT_FMT % v for v in row)])


def write_table(path, header, rows):
    """Comma-separated table; floats are written with 17 significant digits."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([FLOAT_FMT % v if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(_data_lines(fh))
        header = next(reader)
        return header, [row for row in reader]


def write_grid(path, grid):
    """One-line schema header, then one row per grid point."""
    if len(grid.axes) == 1:
        write_table(path, ["e", "density"], zip(grid.axes[0], grid.values))
    else:
        a0, a1 = grid.axes
        rows = ((u, v, grid.values[i, j]) for i, u in enumerate(a0) for j, v in enumerate(a1))
        write_table(path, ["e1", "e2", "density"], rows)


# -- configuration --------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything one CLI invocation needs.

    ``hash_source`` holds the data selection and sampler settings that
    :func:`config_hash` fingerprints.
    """

    mode: str
    seed: Optional[int] = None
    output: Path = Path("out")
    data_path: Optional[Path] = None
    columns: Optional[list] = None
    annualize: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    chains: int = 1
    T: int = 1000
    ln1_starts: int = 5
    ln1_draws: int = 500
    archives: dict = field(default_factory=dict)
    truth: Optional[Path] = None
    grid_points: int = 400
    hash_source: dict = field(default_factory=dict, repr=False)

    MODES = ("simulate", "fit-dpm", "fit-ln1", "evaluate", "diagnose")

    def validate(self):
        if self.mode not in self.MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode in ("simulate", "fit-dpm", "fit-ln1") and self.seed is None:
            raise ConfigError(f"{self.mode} requires a seed")
        if self.mode in ("fit-dpm", "fit-ln1", "evaluate") and self.data_path is None:
            raise ConfigError(f"{self.mode} requires [data] path")
        if self.data_path is not None and not self.columns:
            raise ConfigError("[data] columns must be listed explicitly")
        if self.mode in ("evaluate", "diagnose") and not self.archives:
            raise ConfigError(f"{self.mode} requires at least one archive under [evaluate]")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        return self


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _matrix(text):
    return np.array(json.loads(text), dtype=float)


_SAMPLER_KEYS = {
    "iterations": int,
    "burn_in": int,
    "thin": int,
    "alpha": float,
    "eps_mean_trunc": float,
    "eta_prior_variance": float,
    "p": float,
    "sigma1": float,
    "sigma2": float,
    "adapt_prior_weight": float,
}


def load_config(path, mode: str, seed=None, output=None) -> RunConfig:
    """Parse an INI-style config; command-line ``seed``/``output`` take precedence.

    Relative paths are resolved against the config file's directory.
    """
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config {path}")
    base = path.resolve().parent
    sec = lambda name: parser[name] if parser.has_section(name) else {}

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else (base / p)

    run = sec("run")
    cfg = RunConfig(mode=mode)
    raw_seed = seed if seed is not None else run.get("seed")
    cfg.seed = None if raw_seed is None else int(raw_seed)
    cfg.output = Path(output) if output is not None else resolve(run.get("output", "out"))
    cfg.chains = int(run.get("chains", 1))

    data = sec("data")
    if "path" in data:
        cfg.data_path = resolve(data["path"])
    if "columns" in data:
        cfg.columns = [c.strip() for c in data["columns"].split(",") if c.strip()]
    cfg.annualize = _bool(data.get("annualize", "false"))

    s = sec("sampler")
    kw = {}
    for key, cast in _SAMPLER_KEYS.items():
        if key in s:
            try:
                kw[key] = cast(s[key])
            except ValueError:
                raise ConfigError(f"[sampler] {key}: cannot parse {s[key]!r}") from None
    unknown = set(s) - set(_SAMPLER_KEYS) - {"nw_degrees", "nw_scale", "nw_mean", "nw_precision_scale"}
    if unknown:
        raise ConfigError(f"[sampler] unknown keys {sorted(unknown)}")
    if "nw_degrees" in s:
        d = len(cfg.columns or [])
        if d == 0:
            raise ConfigError("custom Normal-Wishart hyperparameters need [data] columns")
        default = NWHyper.default(d)
        kw["nw_hyper"] = NWHyper(
            float(s["nw_degrees"]),
            _matrix(s["nw_scale"]) if "nw_scale" in s else default.scale_matrix,
            _matrix(s["nw_mean"]) if "nw_mean" in s else default.prior_mean,
            float(s.get("nw_precision_scale", default.prior_precision_scale)),
        )
    try:
        cfg.sampler = SamplerConfig(seed=cfg.seed or 0, **kw)
    except ValueError as exc:
        raise ConfigError(f"[sampler] {exc}") from None

    cfg.T = int(sec("simulate").get("T", sec("simulate").get("t", 1000)))
    ln1 = sec("ln1")
    cfg.ln1_starts = int(ln1.get("starts", 5))
    cfg.ln1_draws = int(ln1.get("draws", 500))
    ev = sec("evaluate")
    for key in ("dpm", "ln1"):
        if key in ev:
            cfg.archives[key] = resolve(ev[key])
    if "truth" in ev:
        cfg.truth = resolve(ev["truth"])
    cfg.grid_points = int(ev.get("grid_points", 400))
    cfg.hash_source = {
        "data": {"path": str(cfg.data_path) if cfg.data_path else None, "columns": cfg.columns,
                 "annualize": cfg.annualize},
        "sampler": {k: v for k, v in cfg.sampler.as_dict().items() if k != "seed"},
    }
    return cfg.validate()


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 over the data selection and sampler settings (seed excluded).

    The data file enters through a digest of its bytes, not its path, so
    the same data in another directory hashes the same.
    """
    src = cfg.hash_source
    if not src:
        raise ConfigError("config was not created by load_config")
    src = json.loads(json.dumps(src, default=float))
    if cfg.data_path is not None and Path(cfg.data_path).is_file():
        src["data"]["path"] = hashlib.sha256(Path(cfg.data_path).read_bytes()).hexdigest()
    text = json.dumps(src, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


# -- archive ---------------------------------------------------------------------

def draw_to_record(draw: IdentifiedDraw) -> np.ndarray:
    d = draw.eta.dim
    K = draw.weights.shape[0]
    head = np.array([K, d, draw.truncation.K, draw.truncation.residual_mass], dtype=float)
    return np.concatenate([
        head, draw.eta.to_vector(), draw.mu1, draw.mixture_mean, draw.weights,
        draw.locations.ravel(), draw.scales.ravel(),
    ])


def record_to_draw(rec: np.ndarray) -> IdentifiedDraw:
    K, d, trunc_K = (int(v) for v in rec[:3])
    residual = float(rec[3])
    m = d + 2 * d * d
    pos = 4
    out = []
    for size in (m, d, d, K, K * d, K * d * d):
        out.append(rec[pos : pos + size])
        pos += size
    if pos != rec.shape[0]:
        raise ArchiveError("record length does not match its header")
    eta, mu1, mbar, w, locs, scales = out
    return IdentifiedDraw(
        eta=MeanParams.from_vector(eta, d),
        mu1=mu1.copy(),
        weights=w.copy(),
        locations=locs.reshape(K, d).copy(),
        scales=scales.reshape(K, d, d).copy(),
        mixture_mean=mbar.copy(),
        truncation=TruncationReport(trunc_K, residual),
    )


def write_archive(path, draws, header: dict):
    """Magic, version, length-prefixed JSON header, then length-prefixed float64 records."""
    head = dict(header, n_draws=len(draws))
    blob = json.dumps(head, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for draw in draws:
            rec = draw_to_record(draw).astype("<f8")
            fh.write(struct.pack("<Q", rec.shape[0]))
            fh.write(rec.tobytes())


def read_archive(path):
    """Return ``(header, draws)``; every draw is re-validated on construction."""
    with Path(path).open("rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ArchiveError(f"{path}: not a draw archive")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise ArchiveError(f"{path}: unsupported archive version {version}")
        header = json.loads(fh.read(n).decode())
        draws = []
        while True:
            raw = fh.read(8)
            if not raw:
                break
            if len(raw) < 8:
                raise ArchiveError(f"{path}: truncated record header")
            (length,) = struct.unpack("<Q", raw)
            buf = fh.read(8 * length)
            if len(buf) != 8 * length:
                raise ArchiveError(f"{path}: truncated record")
            draws.append(record_to_draw(np.frombuffer(buf, dtype="<f8")))
    if header.get("n_draws") != len(draws):
        raise ArchiveError(f"{path}: header announces {header.get('n_draws')} draws, found {len(draws)}")
    return header, draws
