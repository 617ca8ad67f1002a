"""Output artifacts: delimited tables, flat reports, plot specs, figures.

Every emitter is deterministic (shortest round-trip float formatting, fixed
row order) so identical runs produce byte-identical files.  Plots are
emitted twice: a declarative JSON spec (axes, series, scale flags) that
references the CSV data, and a rendered PNG produced from that same spec.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from .decoy import DecoyBounds, KeyRateReport
from .drift import DriftTimeline
from .optimize import Curve, CurvePoint

__all__ = [
    "write_keyrate_csv",
    "write_keyrate_text",
    "read_keyrate_csv",
    "write_curve_csv",
    "read_curve_csv",
    "write_drift_csv",
    "read_drift_csv",
    "write_plot_spec",
    "render_plot_spec",
    "write_manifest",
    "read_manifest",
]

_KEYRATE_FIELDS = (
    "regime", "rate_per_pulse", "rate_per_second", "rate_raw", "q_mumu", "e_mumu",
    "y11_lower", "e11_upper", "q11_lower", "ec_leakage", "positive",
    "selection_prob", "clock_hz", "duty_factor", "f", "epsilon_total", "flags",
)

CURVE_CSV_HEADER = ("loss_db", "rate_per_pulse", "rate_per_second", "regime")

DRIFT_CSV_HEADER = (
    "time_s", "timing_offset_ps", "pol_transmission_a", "pol_transmission_b",
    "phase_offset_rad", "x_misalignment_eff", "corrections_applied",
)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # normalize numpy scalars
    return str(value)


def _keyrate_row(report: KeyRateReport) -> dict:
    b = report.bounds
    return {
        "regime": b.regime,
        "rate_per_pulse": report.rate_per_pulse,
        "rate_per_second": report.rate_per_second,
        "rate_raw": report.rate_raw,
        "q_mumu": report.q_mumu,
        "e_mumu": report.e_mumu,
        "y11_lower": b.y11_lower,
        "e11_upper": b.e11_upper,
        "q11_lower": b.q11_lower,
        "ec_leakage": report.ec_leakage,
        "positive": report.positive,
        "selection_prob": report.selection_prob,
        "clock_hz": report.clock_hz,
        "duty_factor": report.duty_factor,
        "f": report.f,
        "epsilon_total": b.epsilon_total,
        "flags": ";".join(b.flags),
    }


def write_keyrate_csv(report: KeyRateReport, path):
    row = _keyrate_row(report)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_KEYRATE_FIELDS)
        writer.writerow([_fmt(row[k]) for k in _KEYRATE_FIELDS])


def write_keyrate_text(report: KeyRateReport, path):
    """Flat key-value block, one field per line."""
    row = _keyrate_row(report)
    with open(path, "w") as fh:
        for key in _KEYRATE_FIELDS:
            fh.write(f"{key} = {_fmt(row[key])}\n")


def read_keyrate_csv(path) -> KeyRateReport:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != _KEYRATE_FIELDS:
            raise ValueError(f"unexpected key-rate header {header}")
        values = dict(zip(header, next(reader)))
    bounds = DecoyBounds(
        y11_lower=float(values["y11_lower"]),
        e11_upper=float(values["e11_upper"]),
        q11_lower=float(values["q11_lower"]),
        regime=values["regime"],
        epsilon_total=float(values["epsilon_total"]) if values["epsilon_total"] else None,
        flags=tuple(f for f in values["flags"].split(";") if f),
    )
    return KeyRateReport(
        rate_per_pulse=float(values["rate_per_pulse"]),
        rate_per_second=float(values["rate_per_second"]),
        rate_raw=float(values["rate_raw"]),
        q_mumu=float(values["q_mumu"]),
        e_mumu=float(values["e_mumu"]),
        bounds=bounds,
        ec_leakage=float(values["ec_leakage"]),
        positive=values["positive"] == "true",
        selection_prob=float(values["selection_prob"]),
        clock_hz=float(values["clock_hz"]),
        duty_factor=float(values["duty_factor"]),
        f=float(values["f"]),
    )


def write_curve_csv(curve: Curve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_CSV_HEADER)
        for p in curve.points:
            writer.writerow([_fmt(p.loss_db), _fmt(p.rate_per_pulse),
                             _fmt(p.rate_per_second), p.regime])


def read_curve_csv(path) -> Curve:
    points = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CURVE_CSV_HEADER:
            raise ValueError(f"unexpected curve header {header}")
        for row in reader:
            points.append(CurvePoint(float(row[0]), row[3], float(row[1]), float(row[2])))
    cutoffs: dict = {}
    for p in points:
        cutoffs.setdefault(p.regime, None)
        if cutoffs[p.regime] is None and p.rate_per_pulse <= 0:
            cutoffs[p.regime] = p.loss_db
    return Curve(points=points, cutoffs=cutoffs)


def write_drift_csv(timeline: DriftTimeline, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DRIFT_CSV_HEADER)
        for i in range(len(timeline)):
            writer.writerow([
                _fmt(float(timeline.time_s[i])),
                _fmt(float(timeline.timing_offset_ps[i])),
                _fmt(float(timeline.pol_transmission_a[i])),
                _fmt(float(timeline.pol_transmission_b[i])),
                _fmt(float(timeline.phase_offset_rad[i])),
                _fmt(float(timeline.x_misalignment_eff[i])),
                _fmt(int(timeline.corrections[i])),
            ])


def read_drift_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != DRIFT_CSV_HEADER:
            raise ValueError(f"unexpected drift header {reader.fieldnames}")
        for row in reader:
            rows.append({k: float(v) for k, v in row.items()})
    return rows


def write_plot_spec(path, title, x, y, series, log_y=True, log_x=False):
    """Declarative plot description referencing CSV columns.

    ``series`` is a list of dicts: {"label", "csv", "x_col", "y_col",
    "style"}; the renderer and any external tool consume the same spec.
    """
    spec = {
        "version": 1,
        "title": title,
        "x": {"label": x, "log": bool(log_x)},
        "y": {"label": y, "log": bool(log_y)},
        "series": list(series),
    }
    with open(path, "w") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return spec


def render_plot_spec(spec_path, out_png):
    """Render a plot spec (and its CSV data) to a PNG file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    spec_path = Path(spec_path)
    with open(spec_path) as fh:
        spec = json.load(fh)

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for series in spec["series"]:
        csv_path = spec_path.parent / series["csv"]
        xs, ys = [], []
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                if series.get("where") and any(row[k] != v for k, v in series["where"].items()):
                    continue
                x = float(row[series["x_col"]])
                y = float(row[series["y_col"]])
                if spec["y"]["log"] and y <= 0:
                    continue
                xs.append(x)
                ys.append(y)
        ax.plot(xs, ys, series.get("style", "-"), label=series["label"])
    ax.set_xlabel(spec["x"]["label"])
    ax.set_ylabel(spec["y"]["label"])
    if spec["y"]["log"]:
        ax.set_yscale("log")
    if spec["x"]["log"]:
        ax.set_xscale("log")
    ax.set_title(spec["title"])
    ax.grid(True, which="both", alpha=0.3)
    if len(spec["series"]) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)


def write_manifest(outdir, command: str, arguments: dict, seed, config_path, version: str):
    """Record how an output directory was produced."""
    manifest = {
        "tool": "mdiqkd",
        "version": version,
        "command": command,
        "arguments": {k: _json_safe(v) for k, v in arguments.items()},
        "seed": seed,
        "config": str(config_path) if config_path else None,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(outdir) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _json_safe(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if hasattr(value, "__dataclass_fields__"):
        return asdict(value)
    return value
