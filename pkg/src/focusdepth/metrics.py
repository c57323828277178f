"""Standard depth-estimation error and accuracy metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .tensor import ShapeError, Tensor

THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)

# column order used by printed tables: errors first, then accuracies
TABLE_ORDER = (
    ("rmse", "RMSE"),
    ("rmse_log", "RMSE Log"),
    ("abs_rel", "Abs Rel"),
    ("sq_rel", "Sq Rel"),
    ("delta1", "d<1.25"),
    ("delta2", "d<1.25^2"),
    ("delta3", "d<1.25^3"),
)


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        if set(data) != names:
            raise ValueError(f"metrics keys must be exactly {sorted(names)}, got {sorted(data)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_table(self, label: str = "", digits: int = 4) -> str:
        """Key/value rows in table-column order."""
        head = f"{label}\n" if label else ""
        width = max(len(t) for _, t in TABLE_ORDER)
        rows = [f"{title:<{width}}  {getattr(self, key):.{digits}f}" for key, title in TABLE_ORDER]
        return head + "\n".join(rows)


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def compute_metrics(pred, gt, valid_min: float = 1e-3, log_base: str = "e") -> MetricsReport:
    """Metrics over pixels with ``gt > valid_min``; predictions are clamped to ``valid_min``.

    ``log_base`` selects the logarithm of the log-RMSE (``"e"`` or ``"10"``).
    """
    p = _as_array(pred)
    g = _as_array(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    valid = g > valid_min
    if not valid.any():
        raise ValueError("no valid ground-truth pixels")
    p = np.maximum(p[valid], valid_min)
    g = g[valid]

    err = p - g
    if log_base == "e":
        lp, lg = np.log(p), np.log(g)
    elif log_base == "10":
        lp, lg = np.log10(p), np.log10(g)
    else:
        raise ValueError(f"log_base must be 'e' or '10', got {log_base!r}")
    ratio = np.maximum(p / g, g / p)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err ** 2 / g)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmse_log=float(np.sqrt(np.mean((lp - lg) ** 2))),
        delta1=float(np.mean(ratio < THRESHOLDS[0])),
        delta2=float(np.mean(ratio < THRESHOLDS[1])),
        delta3=float(np.mean(ratio < THRESHOLDS[2])),
    )


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Field-wise mean, accumulated in the given order."""
    if not reports:
        raise ValueError("no reports to average")
    names = [f.name for f in fields(MetricsReport)]
    sums = dict.fromkeys(names, 0.0)
    for r in reports:
        for n in names:
            sums[n] += getattr(r, n)
    return MetricsReport(**{n: sums[n] / len(reports) for n in names})


def format_table(rows: Iterable, digits: int = 4) -> str:
    """Render ``(label, MetricsReport)`` rows as a fixed-width table."""
    rows = list(rows)
    label_w = max([len("Method")] + [len(str(label)) for label, _ in rows])
    col_w = max(digits + 3, max(len(t) for _, t in TABLE_ORDER))
    header = f"{'Method':<{label_w}}  " + "  ".join(f"{t:>{col_w}}" for _, t in TABLE_ORDER)
    lines = [header, "-" * len(header)]
    for label, rep in rows:
        vals = "  ".join(f"{getattr(rep, k):>{col_w}.{digits}f}" for k, _ in TABLE_ORDER)
        lines.append(f"{label:<{label_w}}  {vals}")
    return "\n".join(lines)
