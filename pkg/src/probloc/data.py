"""Fingerprint datasets: CSV loading, preprocessing, windowing, splits, and a
synthetic corridor generator.

RSSI arrays are (records, WAPs) in dB. Undetected WAPs arrive as the sentinel
100 and become 0 after :func:`preprocess`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .rng import stream

log = logging.getLogger(__name__)

UNDETECTED = 100.0
TAMPERE_WAPS = 489
UJI_WAPS = 520
UJI_META_COLUMNS = (
    "LONGITUDE",
    "LATITUDE",
    "FLOOR",
    "BUILDINGID",
    "SPACEID",
    "RELATIVEPOSITION",
    "USERID",
    "PHONEID",
    "TIMESTAMP",
)
RSSI_NORM_OFFSET = 110.0


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FingerprintRecord:
    rssi: np.ndarray
    position: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TargetScaler:
    """Per-coordinate min-max map onto [0, 1]."""

    minimum: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, positions: np.ndarray) -> "TargetScaler":
        lo, hi = positions.min(axis=0), positions.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return cls(lo.astype(np.float64), span.astype(np.float64))

    def scale(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.minimum) / self.span

    def unscale(self, y) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.span + self.minimum

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "span": self.span.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetScaler":
        return cls(np.asarray(d["minimum"], dtype=np.float64), np.asarray(d["span"], dtype=np.float64))


@dataclass(frozen=True)
class InputScaler:
    """Per-WAP standardization fitted on training inputs; constant columns pass through centered."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rssi: np.ndarray) -> "InputScaler":
        rssi = np.asarray(rssi, dtype=np.float64).reshape(-1, np.shape(rssi)[-1])
        std = rssi.std(axis=0)
        return cls(rssi.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InputScaler":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class Dataset:
    """Column-oriented fingerprint collection.

    ``meta`` maps optional per-record label names (``path``, ``building``,
    ``floor``, ``timestamp``) to 1-D arrays.
    """

    rssi: np.ndarray
    positions: np.ndarray | None
    provenance: str
    meta: dict[str, np.ndarray] = field(default_factory=dict)
    scaler: TargetScaler | None = None
    preprocessed: bool = False
    rssi_normalized: bool = False

    def __post_init__(self):
        self.rssi = np.asarray(self.rssi, dtype=np.float64)
        if self.rssi.ndim != 2:
            raise DataError(f"rssi must be 2-D, got shape {self.rssi.shape}")
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=np.float64).reshape(len(self.rssi), 2)
        for name, values in self.meta.items():
            if len(values) != len(self.rssi):
                raise DataError(f"metadata column {name!r} has {len(values)} rows, expected {len(self.rssi)}")

    def __len__(self) -> int:
        return len(self.rssi)

    @property
    def input_dim(self) -> int:
        return self.rssi.shape[1]

    @property
    def paths(self) -> np.ndarray:
        return self.meta.get("path", np.zeros(len(self), dtype=np.int64))

    def __iter__(self) -> Iterator[FingerprintRecord]:
        for i in range(len(self)):
            pos = None if self.positions is None else self.positions[i]
            yield FingerprintRecord(self.rssi[i], pos, {k: v[i] for k, v in self.meta.items()})

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return replace(
            self,
            rssi=self.rssi[index],
            positions=None if self.positions is None else self.positions[index],
            meta={k: v[index] for k, v in self.meta.items()},
        )

    def positions_in_units(self) -> np.ndarray:
        """Positions in the original (unscaled) units."""
        if self.positions is None:
            raise DataError("dataset has no positions")
        return self.positions if self.scaler is None else self.scaler.unscale(self.positions)


# --- loading ------------------------------------------------------------------


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_rows(path: Path, header: bool | None) -> tuple[list[str] | None, list[tuple[int, list[str]]]]:
    with open(path, newline="") as fh:
        rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if any(cell.strip() for cell in row)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    if header is None:
        header = not _is_number(rows[0][1][0])
    names = None
    if header:
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    return names, rows


def _to_matrix(path: Path, rows: list[tuple[int, list[str]]], n_cols: int) -> np.ndarray:
    out = np.empty((len(rows), n_cols))
    for r, (line, row) in enumerate(rows):
        if len(row) != n_cols:
            raise DataError(f"{path}: line {line}: expected {n_cols} columns, found {len(row)}")
        try:
            out[r] = [float(cell) for cell in row]
        except ValueError as exc:
            raise DataError(f"{path}: line {line}: malformed value ({exc})") from None
    return out


def load_csv(
    path,
    schema: str = "generic",
    *,
    input_dim: int | None = None,
    target_cols: Sequence[int] | None = None,
    path_col: int | None = None,
    header: bool | None = None,
) -> Dataset:
    """Read a fingerprint CSV with no preprocessing.

    Schemas:
      ujiindoorloc: header row, 520 WAP columns then the 9 public metadata
        columns (LONGITUDE, LATITUDE, FLOOR, BUILDINGID, ...).
      tampere: 489 WAP columns then x, y in meters; header optional.
      generic: the first ``input_dim`` columns are RSSI; ``target_cols`` picks
        the x, y columns and ``path_col`` an optional path identifier. With a
        header naming ``x`` and ``y`` (as written by ``save_csv``) the layout
        is inferred.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")

    if schema == "ujiindoorloc":
        names, rows = _read_rows(path, header=True)
        expected = UJI_WAPS + len(UJI_META_COLUMNS)
        if len(names) != expected:
            raise DataError(f"{path}: schema mismatch: ujiindoorloc expects {expected} columns, header has {len(names)}")
        m = _to_matrix(path, rows, expected)
        extra = m[:, UJI_WAPS:]
        meta = {
            "floor": extra[:, 2].astype(np.int64),
            "building": extra[:, 3].astype(np.int64),
            "timestamp": extra[:, 8],
        }
        return Dataset(m[:, :UJI_WAPS], extra[:, :2], "ujiindoorloc", meta)

    if schema == "tampere":
        names, rows = _read_rows(path, header)
        expected = TAMPERE_WAPS + 2
        width = len(names) if names is not None else len(rows[0][1])
        if width != expected:
            raise DataError(f"{path}: schema mismatch: tampere expects {expected} columns, found {width}")
        m = _to_matrix(path, rows, expected)
        meta = {"path": np.zeros(len(m), dtype=np.int64), "timestamp": np.arange(len(m), dtype=np.float64)}
        return Dataset(m[:, :TAMPERE_WAPS], m[:, TAMPERE_WAPS:], "tampere", meta)

    if schema == "generic":
        names, rows = _read_rows(path, header)
        named_meta = {}
        if input_dim is None and names is not None and "x" in names and "y" in names:
            # layout written by save_csv: WAP columns, then named columns
            input_dim = names.index("x")
            target_cols = target_cols or (names.index("x"), names.index("y"))
            if path_col is None and "path" in names:
                path_col = names.index("path")
            named_meta = {k: names.index(k) for k in ("building", "floor", "timestamp") if k in names}
        if input_dim is None or input_dim < 1:
            raise DataError("generic schema requires input_dim >= 1")
        width = len(rows[0][1])
        m = _to_matrix(path, rows, width)
        used = [input_dim - 1, *(target_cols or ()), *(() if path_col is None else (path_col,))]
        if max(used) >= width:
            raise DataError(f"{path}: schema mismatch: column index {max(used)} beyond {width} columns")
        positions = None
        if target_cols is not None:
            if len(target_cols) != 2:
                raise DataError("target_cols must name exactly two columns")
            positions = m[:, list(target_cols)]
        meta = {}
        if path_col is not None:
            meta["path"] = m[:, path_col].astype(np.int64)
        for key, col in named_meta.items():
            meta[key] = m[:, col] if key == "timestamp" else m[:, col].astype(np.int64)
        return Dataset(m[:, :input_dim], positions, "generic", meta)

    raise DataError(f"unknown schema {schema!r}")


def save_csv(ds: Dataset, path) -> None:
    """Write ``ds`` in the generic layout: WAP columns, x, y, path, then any
    building/floor labels."""
    path = Path(path)
    cols = [f"WAP{i + 1:03d}" for i in range(ds.input_dim)]
    labels = [k for k in ("building", "floor") if k in ds.meta]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols + ["x", "y", "path"] + labels)
        pos = ds.positions_in_units() if ds.positions is not None else np.full((len(ds), 2), np.nan)
        for i in range(len(ds)):
            writer.writerow(
                [repr(float(v)) for v in ds.rssi[i]]
                + [repr(float(pos[i, 0])), repr(float(pos[i, 1])), int(ds.paths[i])]
                + [int(ds.meta[k][i]) for k in labels]
            )


# --- preprocessing --------------------------------------------------------------


def preprocess(
    ds: Dataset,
    *,
    dedup: bool | None = None,
    normalize_rssi: bool = False,
    scale_targets: bool = True,
) -> Dataset:
    """Replace the undetected sentinel with 0, optionally drop duplicate rows,
    and min-max scale the targets.

    ``dedup`` defaults to on for UJIIndoorLoc only. With ``normalize_rssi``,
    detected values map to ``(x + 110) / 110`` and undetected stay 0.
    Already-preprocessed datasets are returned unchanged.
    """
    if ds.preprocessed:
        return ds
    if dedup is None:
        dedup = ds.provenance == "ujiindoorloc"
    undetected = ds.rssi == UNDETECTED
    rssi = np.where(undetected, 0.0, ds.rssi)
    if normalize_rssi:
        rssi = np.where(undetected, 0.0, (rssi + RSSI_NORM_OFFSET) / RSSI_NORM_OFFSET)
    out = replace(ds, rssi=rssi, preprocessed=True, rssi_normalized=normalize_rssi)

    if dedup:
        key = rssi if ds.positions is None else np.hstack([rssi, ds.positions])
        _, first = np.unique(key, axis=0, return_index=True)
        keep = np.sort(first)
        if len(keep) < len(ds):
            log.info("removed %d duplicate rows", len(ds) - len(keep))
        out = out.subset(keep)

    if scale_targets and out.positions is not None and out.scaler is None:
        scaler = TargetScaler.fit(out.positions)
        out = replace(out, positions=scaler.scale(out.positions), scaler=scaler)
    return out


# --- windows and splits -------------------------------------------------------


@dataclass(frozen=True)
class PathWindow:
    inputs: np.ndarray  # (L, WAPs)
    target: np.ndarray  # position one step after the last input
    previous: np.ndarray  # position of the last input record
    path: int = 0


def _path_groups(ds: Dataset) -> list[np.ndarray]:
    paths = ds.paths
    return [np.flatnonzero(paths == p) for p in dict.fromkeys(paths.tolist())]


def make_windows(ds: Dataset, length: int) -> list[PathWindow]:
    """Stride-1 windows of ``length`` records, each targeting the next record's
    position. Paths are never mixed; a path yields ``len(path) - length`` windows.
    """
    if length < 1:
        raise ValueError("window length must be >= 1")
    if ds.positions is None:
        raise DataError("windows need positions")
    windows = []
    for idx in _path_groups(ds):
        path_id = int(ds.paths[idx[0]])
        if len(idx) < length + 1:
            log.warning("path %d has %d records, shorter than window %d + 1; skipped", path_id, len(idx), length)
            continue
        for i in range(len(idx) - length):
            rows = idx[i : i + length]
            windows.append(
                PathWindow(ds.rssi[rows], ds.positions[idx[i + length]], ds.positions[rows[-1]], path_id)
            )
    return windows


def stack_windows(windows: Sequence[PathWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Return inputs (N, L, WAPs) and targets (N, 2)."""
    if not windows:
        raise DataError("no windows")
    return np.stack([w.inputs for w in windows]), np.stack([w.target for w in windows])


def split_chronological(ds: Dataset, train_fraction: float = 0.8) -> tuple[Dataset, Dataset]:
    """Per-path split: the first ``train_fraction`` of each path trains, the rest tests."""
    train, test = [], []
    for idx in _path_groups(ds):
        cut = int(round(train_fraction * len(idx)))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return ds.subset(np.concatenate(train)), ds.subset(np.concatenate(test))


def split_random(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    order = stream(seed, "data-split").permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def split_labeled(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Uniformly choose ``fraction`` of the rows as labeled.

    The unlabeled pool holds every input (labels hidden), so it always equals
    the full set of fingerprints.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"labeled fraction must be in (0, 1], got {fraction}")
    n_labeled = int(round(fraction * len(ds)))
    if n_labeled == 0:
        raise DataError(f"fraction {fraction} of {len(ds)} rows leaves no labeled data")
    chosen = np.sort(stream(seed, "labeled-split").choice(len(ds), size=n_labeled, replace=False))
    return ds.subset(chosen), replace(ds, positions=None)


# --- synthetic corridor ----------------------------------------------------------

RSSI_AT_1M = -30.0
PATH_LOSS_EXPONENT = 2.5
DETECTION_THRESHOLD = -95.0
RSSI_MIN = -110.0
CORRIDOR_SIZE = (40.0, 20.0)


def path_loss_rssi(distance, exponent: float = PATH_LOSS_EXPONENT) -> np.ndarray:
    """Noise-free log-distance RSSI; distances below 1 m are treated as 1 m."""
    d = np.maximum(np.asarray(distance, dtype=np.float64), 1.0)
    return RSSI_AT_1M - 10.0 * exponent * np.log10(d)


def corridor_path(n_steps: int, rng: np.random.Generator, speed: float = 2.0, size=CORRIDOR_SIZE) -> np.ndarray:
    """Repeated laps of an elliptical loop with smooth speed and lateral jitter."""
    a, b = size[0] / 2, size[1] / 2
    theta = 0.0
    wobble = 0.0
    pos = np.empty((n_steps, 2))
    speed_state = 0.0
    for t in range(n_steps):
        radial = 1.0 + wobble / max(a, b)
        pos[t] = a + a * radial * math.cos(theta), b + b * radial * math.sin(theta)
        dx, dy = -a * math.sin(theta), b * math.cos(theta)
        speed_state = 0.9 * speed_state + rng.normal(0.0, 0.05)
        theta += speed * (1.0 + speed_state) / math.hypot(dx, dy)
        wobble = 0.8 * wobble + rng.normal(0.0, 0.2)
    return pos



def corridor_layout(n_aps: int, n_steps: int, seed: int, speed: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Access-point coordinates (n_aps, 2) and the walked positions (n_steps, 2), in meters."""
    if n_aps < 3:
        raise ValueError("synthetic corridor needs at least 3 access points")
    rng = stream(seed, "synth-corridor")
    width, height = CORRIDOR_SIZE
    aps = np.column_stack([rng.uniform(-5, width + 5, n_aps), rng.uniform(-5, height + 5, n_aps)])
    return aps, corridor_path(n_steps, rng, speed=speed, size=CORRIDOR_SIZE)


def synth_corridor(
    n_aps: int = 20,
    n_steps: int = 2000,
    noise_db: float = 4.0,
    seed: int = 0,
    *,
    speed: float = 2.0,
    exponent: float = PATH_LOSS_EXPONENT,
    preprocessed: bool = True,
    normalize_rssi: bool = False,
) -> Dataset:
    """An agent lapping an elliptical corridor among randomly placed APs.

    RSSI_j = clamp(-30 - 10 n log10(dist_j) + noise, -110, -30); readings below
    -95 dBm become the undetected sentinel. Metadata carries coarse zone labels
    (``building`` = east/west half, ``floor`` = north/south half).
    """
    aps, pos = corridor_layout(n_aps, n_steps, seed, speed=speed)
    rng = stream(seed, "synth-rssi-noise")
    dist = np.linalg.norm(pos[:, None, :] - aps[None, :, :], axis=-1)
    rssi = path_loss_rssi(dist, exponent)
    if noise_db > 0:
        rssi = rssi + rng.normal(0.0, noise_db, size=dist.shape)
    rssi = np.clip(rssi, RSSI_MIN, RSSI_AT_1M)
    rssi = np.where(rssi < DETECTION_THRESHOLD, UNDETECTED, rssi)
    meta = {
        "path": np.zeros(n_steps, dtype=np.int64),
        "timestamp": np.arange(n_steps, dtype=np.float64),
        "building": (pos[:, 0] > CORRIDOR_SIZE[0] / 2).astype(np.int64),
        "floor": (pos[:, 1] > CORRIDOR_SIZE[1] / 2).astype(np.int64),
    }
    ds = Dataset(rssi, pos, "synthetic", meta)
    if preprocessed:
        ds = preprocess(ds, normalize_rssi=normalize_rssi)
    return ds
