"""Dataset ingestion and synthetic data.

Feature CSV layout (UTF-8, comma separated, header row)::

    f0,f1,...,fN,label[,user]

``f*`` columns are parsed as floats, ``label`` is any string (interned to
dense integer ids in sorted order of the names), ``user`` is an optional
string user identifier.

Event CSV layout for binary sensors::

    timestamp,sensor,value,label

``timestamp`` in seconds (non-decreasing), ``value`` in {0, 1} where 1
switches the sensor on and 0 off, ``label`` the activity in progress from
that event onward (empty for unlabelled time).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import make_rng


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    class_names: list[str]
    users: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be 2-D with one row per label")
        if self.users is not None:
            self.users = np.asarray(self.users)
            if self.users.shape[0] != self.y.shape[0]:
                raise ValueError("one user id per sample required")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")
        counts = np.bincount(self.y, minlength=len(self.class_names))
        if len(counts) != len(self.class_names) or np.any(counts == 0):
            raise ValueError("every class needs at least one sample and labels must index class_names")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "LabeledDataset":
        """Rows ``rows``; class ids are kept (a subset may miss classes, so it is not re-validated)."""
        out = object.__new__(LabeledDataset)
        out.X = self.X[rows]
        out.y = self.y[rows]
        out.class_names = self.class_names
        out.users = None if self.users is None else self.users[rows]
        return out


class DataFormatError(ValueError):
    pass


def load_feature_csv(path, label_column: str = "label", user_column: str | None = "user",
                     feature_columns: list[str] | None = None, class_names: list[str] | None = None) -> LabeledDataset:
    """Read a feature CSV.

    ``feature_columns`` defaults to every ``f<k>`` column. When ``class_names``
    is given, labels outside it are rejected. ``user_column`` is optional in
    the file; pass ``None`` to ignore it.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataFormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if feature_columns is None:
            feature_columns = [h for h in header if h.startswith("f") and h[1:].isdigit()]
        missing = [c for c in feature_columns + [label_column] if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing column(s) {missing}")
        if not feature_columns:
            raise DataFormatError(f"{path}: no feature columns")
        fidx = [header.index(c) for c in feature_columns]
        lidx = header.index(label_column)
        uidx = header.index(user_column) if user_column and user_column in header else None
        rows, labels, users = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in fidx])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric feature value") from None
            label = row[lidx].strip()
            if not label or (class_names is not None and label not in class_names):
                raise DataFormatError(f"{path}:{lineno}: unknown label {label!r}")
            labels.append(label)
            if uidx is not None:
                users.append(row[uidx].strip())
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    X = np.array(rows)
    if not np.all(np.isfinite(X)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0]) + 2
        raise DataFormatError(f"{path}:{bad}: non-finite feature value")
    names = sorted(set(labels)) if class_names is None else [c for c in class_names if c in set(labels)]
    lookup = {n: i for i, n in enumerate(names)}
    y = np.array([lookup[l] for l in labels])
    return LabeledDataset(X, y, names, np.array(users) if uidx is not None else None)


def save_feature_csv(ds: LabeledDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [f"f{i}" for i in range(ds.dims)] + ["label"]
        if ds.users is not None:
            header.append("user")
        w.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(x)) for x in ds.X[i]] + [ds.class_names[ds.y[i]]]
            if ds.users is not None:
                row.append(str(ds.users[i]))
            w.writerow(row)


@dataclass
class EventStream:
    timestamps: np.ndarray
    sensors: list[str]
    values: np.ndarray
    labels: list[str]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.int64)
        n = self.timestamps.shape[0]
        if not (len(self.sensors) == n == self.values.shape[0] == len(self.labels)):
            raise ValueError("event fields have different lengths")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if not np.all((self.values == 0) | (self.values == 1)):
            raise ValueError("sensor values must be 0 or 1")


def load_event_csv(path) -> EventStream:
    ts, sensors, values, labels = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"timestamp", "sensor", "value", "label"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataFormatError(f"{path}: header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ts.append(float(row["timestamp"]))
                values.append(int(row["value"]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad timestamp or value") from None
            sensors.append(row["sensor"].strip())
            labels.append((row["label"] or "").strip())
    return EventStream(np.array(ts), sensors, np.array(values), labels)


def _overlap(a0, a1, b0, b1) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def activation_ratio_features(stream: EventStream, window: float = 60.0) -> tuple[LabeledDataset, int]:
    """Fixed windows of per-sensor active-time fractions.

    A sensor is active from a value-1 event until its next value-0 event
    (or the end of the stream). Each window is labelled with the activity
    covering the most time in it; ties go to the label that appears first.
    Windows without any labelled time are dropped. Returns the dataset and
    the number of dropped windows.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    n = stream.timestamps.shape[0]
    if n == 0:
        raise ValueError("empty event stream")
    t0, t_end = float(stream.timestamps[0]), float(stream.timestamps[-1])
    n_win = int(np.floor((t_end - t0) / window))
    sensor_ids = sorted(set(stream.sensors))
    col = {s: i for i, s in enumerate(sensor_ids)}

    intervals: list[tuple[int, float, float]] = []
    open_at: dict[str, float] = {}
    for t, s, v in zip(stream.timestamps, stream.sensors, stream.values):
        if v == 1:
            open_at.setdefault(s, float(t))
        elif s in open_at:
            intervals.append((col[s], open_at.pop(s), float(t)))
    for s, start in open_at.items():
        intervals.append((col[s], start, t_end))

    # label segments: each event's label holds until the next event
    segs: list[tuple[str, float, float]] = []
    for i in range(n - 1):
        if stream.labels[i]:
            segs.append((stream.labels[i], float(stream.timestamps[i]), float(stream.timestamps[i + 1])))

    feats = np.zeros((n_win, len(sensor_ids)))
    for c, a, b in intervals:
        if b <= a:
            continue
        first = max(0, int((a - t0) // window))
        last = min(n_win - 1, int((b - t0) // window))
        for k in range(first, last + 1):
            w0 = t0 + k * window
            feats[k, c] += _overlap(a, b, w0, w0 + window)
    feats /= window

    win_labels: list[str | None] = []
    for k in range(n_win):
        w0 = t0 + k * window
        share: dict[str, float] = {}
        for lab, a, b in segs:
            d = _overlap(a, b, w0, w0 + window)
            if d > 0:
                share[lab] = share.get(lab, 0.0) + d
        # dict preserves first-seen order, so max() keeps the earlier label on ties
        win_labels.append(max(share, key=share.get) if share else None)

    keep = [k for k, lab in enumerate(win_labels) if lab is not None]
    dropped = n_win - len(keep)
    names = sorted({win_labels[k] for k in keep})
    lookup = {name: i for i, name in enumerate(names)}
    X = np.clip(feats[keep], 0.0, 1.0)
    y = np.array([lookup[win_labels[k]] for k in keep], dtype=np.int64)
    return LabeledDataset(X.reshape(len(keep), len(sensor_ids)), y, names), dropped


def gen_synthetic(classes: int = 10, samples_per_class: int = 100, dims: int = 20, separation: float = 10.0,
                  imbalance: str = "uniform", seed: int = 0, users: int = 10, sigma: float = 1.0) -> LabeledDataset:
    """Isotropic Gaussian clusters whose means are at least ``separation * sigma`` apart.

    ``imbalance="long-tail"`` shrinks class sizes geometrically so the
    largest class is at least ten times the smallest. Samples are spread
    over ``users`` synthetic users at random.
    """
    if classes < 2 or dims < 2:
        raise ValueError("need at least 2 classes and 2 dims")
    if imbalance not in ("uniform", "long-tail"):
        raise ValueError(f"unknown imbalance profile {imbalance!r}")
    rng = make_rng(seed)
    means = rng.normal(size=(classes, dims))
    d = np.linalg.norm(means[:, None] - means[None], axis=2)
    dmin = d[np.triu_indices(classes, 1)].min()
    means *= separation * sigma / dmin
    if imbalance == "uniform":
        counts = np.full(classes, samples_per_class)
    else:
        if samples_per_class < 20:
            raise ValueError("long-tail profile needs samples_per_class >= 20")
        decay = 0.1 ** (np.arange(classes) / (classes - 1))
        counts = np.floor(samples_per_class * decay).astype(int)
        counts[0] = samples_per_class
        counts = counts[rng.permutation(classes)]
    X = np.vstack([means[c] + sigma * rng.normal(size=(counts[c], dims)) for c in range(classes)])
    y = np.repeat(np.arange(classes), counts)
    user_ids = np.array([f"u{u}" for u in rng.integers(users, size=len(y))])
    width = len(str(classes - 1))
    names = [f"c{c:0{width}d}" for c in range(classes)]
    return LabeledDataset(X, y, names, user_ids)
