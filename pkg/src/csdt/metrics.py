"""Reconstruction and tensor-map quality metrics.

PSNR for magnitude images (peak taken from the ground truth, capped at
140 dB so identical images stay finite), masked RMSE for scalar maps, and
an angle-wrapped RMSE for helix-angle maps where +89 and -89 degrees are
2 degrees apart, not 178.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP_DB = 140.0


def psnr(recon, gt):
    """10*log10(peak^2 / MSE) in dB with peak = max(gt), capped at 140."""
    recon = np.asarray(recon, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if recon.shape != gt.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {gt.shape}")
    mse = np.mean((recon - gt) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    peak = float(gt.max())
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(peak**2 / mse)))


def rmse_masked(a, b, mask):
    """Root mean squared difference over the masked pixels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or a.shape != mask.shape:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("mask selects no pixels")
    d = a[mask] - b[mask]
    return float(np.sqrt(np.mean(d**2)))


def wrap_angle_diff(a, b):
    """Difference of two angle maps wrapped into [-90, 90) degrees."""
    return (np.asarray(a, float) - np.asarray(b, float) + 90.0) % 180.0 - 90.0


def ha_rmse(a, b, mask):
    """RMSE of helix angles with each difference wrapped modulo 180."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no pixels")
    d = wrap_angle_diff(a, b)[mask]
    return float(np.sqrt(np.mean(d**2)))


@dataclass
class EvalReport:
    """Per-subject metrics plus the aggregate mean (std) over subjects."""

    model_label: str = "recon"
    uf_label: str = ""
    subjects: dict = field(default_factory=dict)

    METRICS = ("psnr", "fa_rmse", "md_rmse", "ha_rmse")

    def add_subject(self, name, **values):
        if name in self.subjects:
            raise ValueError(f"duplicate subject {name!r}")
        row = {}
        for key in self.METRICS:
            v = values.pop(key, None)
            row[key] = None if v is None else float(v)
        if values:
            raise ValueError(f"unknown metrics: {sorted(values)}")
        self.subjects[name] = row

    def aggregate(self):
        """mean/std per metric over the subjects that have it."""
        out = {}
        for key in self.METRICS:
            vals = [s[key] for s in self.subjects.values() if s[key] is not None]
            if vals:
                arr = np.asarray(vals)
                out[key] = {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(vals)}
        return out

    def to_dict(self):
        return {
            "model": self.model_label,
            "uf": self.uf_label,
            "subjects": self.subjects,
            "aggregate": self.aggregate(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        """Aligned table, one row per subject plus a mean (std) footer."""
        headers = ["subject", "PSNR (dB)", "FA RMSE", "MD RMSE (1e-3 mm^2/s)", "HA RMSE (deg)"]
        scale = {"md_rmse": 1e3}

        def fmt(row_key, value):
            if value is None:
                return "-"
            return f"{value * scale.get(row_key, 1.0):.4f}"

        rows = [[name] + [fmt(k, s[k]) for k in self.METRICS]
                for name, s in self.subjects.items()]
        agg = self.aggregate()
        footer = ["mean (std)"]
        for key in self.METRICS:
            if key in agg:
                sc = scale.get(key, 1.0)
                footer.append(f"{agg[key]['mean'] * sc:.4f} ({agg[key]['std'] * sc:.4f})")
            else:
                footer.append("-")
        rows.append(footer)

        widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))]
        lines = []
        title = f"model: {self.model_label}"
        if self.uf_label:
            title += f"  uf: {self.uf_label}"
        lines.append(title)
        lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
        lines.append("  ".join("-" * w for w in widths))
        for r in rows:
            lines.append("  ".join(str(r[i]).ljust(widths[i]) for i in range(len(r))))
        return "\n".join(lines) + "\n"
