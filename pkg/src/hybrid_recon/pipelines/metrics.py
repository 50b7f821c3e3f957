"""Image and T1-map metrics, per-case CSV rows and their aggregation."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore import ssim as _ssim_tensor

T1_BIN_EDGES = (800.0, 1200.0, 1600.0, 2000.0)


def nmse(x, ref) -> float:
    """``|x - ref|^2 / |ref|^2``."""
    x, ref = np.asarray(x), np.asarray(ref)
    if x.shape != ref.shape:
        raise ValueError(f"nmse: shapes {x.shape} and {ref.shape} differ")
    denom = float(np.sum(np.abs(ref) ** 2))
    if denom == 0.0:
        raise ValueError("nmse: reference is zero")
    return float(np.sum(np.abs(x - ref) ** 2)) / denom


def ssim_value(x, ref) -> float:
    """SSIM of magnitude images, dynamic range from the reference."""
    return float(_ssim_tensor(np.abs(np.asarray(x)), np.abs(np.asarray(ref))).item())


def relative_error_map(pred_t1, ref_t1, valid=None):
    """``|pred - ref| / ref * 100`` where ``ref > 0`` (and ``valid``); NaN elsewhere."""
    pred_t1, ref_t1 = np.asarray(pred_t1, dtype=np.float64), np.asarray(ref_t1, dtype=np.float64)
    ok = ref_t1 > 0
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    err = np.full(ref_t1.shape, np.nan)
    err[ok] = np.abs(pred_t1[ok] - ref_t1[ok]) / ref_t1[ok] * 100.0
    return err


def binned_errors(err, ref_t1, edges=T1_BIN_EDGES) -> dict:
    """Mean relative error within each ``[lo, hi)`` reference-T1 bin (last bin closed)."""
    err, ref_t1 = np.asarray(err), np.asarray(ref_t1)
    out = {}
    for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        last = i == len(edges) - 2
        sel = (ref_t1 >= lo) & ((ref_t1 <= hi) if last else (ref_t1 < hi)) & np.isfinite(err)
        out[f"{int(lo)}-{int(hi)}"] = float(np.mean(err[sel])) if np.any(sel) else float("nan")
    return out


@dataclass
class MetricsReport:
    """Rows of ``(case, metric, value)`` with mean/std aggregation per metric."""

    rows: list = field(default_factory=list)

    def add(self, case: str, metric: str, value: float) -> None:
        self.rows.append((str(case), str(metric), float(value)))

    def aggregate(self) -> dict:
        groups = defaultdict(list)
        for _, metric, value in self.rows:
            if np.isfinite(value):
                groups[metric].append(value)
        return {m: (float(np.mean(v)), float(np.std(v)), len(v)) for m, v in groups.items()}

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "metric", "value"])
            for case, metric, value in self.rows:
                w.writerow([case, metric, repr(value)])
        return path

    @classmethod
    def read_csv(cls, path) -> "MetricsReport":
        rep = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["case", "metric", "value"]:
                raise ValueError(f"{path}: unexpected header {header}")
            for case, metric, value in reader:
                rep.add(case, metric, float(value))
        return rep

    def summary(self, header: str = "") -> str:
        lines = [header] if header else []
        lines.append(f"{'metric':<40} {'mean':>12} {'std':>12} {'n':>4}")
        for metric, (mean, std, n) in sorted(self.aggregate().items()):
            lines.append(f"{metric:<40} {mean:>12.6g} {std:>12.6g} {n:>4d}")
        return "\n".join(lines) + "\n"
