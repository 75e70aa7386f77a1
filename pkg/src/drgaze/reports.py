"""Run manifests and report emission (metrics.csv, summary.md, report merges).

Metrics CSVs carry full-precision floats (repr) so downstream recomputation
matches exactly; summary markdown rounds for reading. Emitted files never
embed timestamps, keeping re-runs byte-identical; the manifest (which does
record its creation time) is written before any work starts.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ._version import __version__
from .errors import DataError
from .evaluation import EvalReport, NoiseDistanceResult, SweepResult

# Full-scale reference averages for the guidance-noise protocol on the public
# datasets (two-stream vs drnet distances). Documented context only; desk-scale
# runs are compared directionally, never against these numbers.
NOISE_DISTANCE_REFERENCE = (
    "Reference full-scale averages for this protocol (two_stream vs drnet distance): "
    "0.34 vs 0.16 on MpiiGaze and 0.73 vs 0.41 on Eyediap."
)


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    """Everything needed to re-execute a run exactly; written before work begins."""

    command: str
    args: dict
    config: dict
    dataset_fingerprint: str | None
    seed: int | None
    version: str = __version__
    created_at: str = ""
    outputs: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.created_at:
            self.created_at = datetime.now(timezone.utc).isoformat()


MANIFEST_FILENAME = "manifest.json"


def write_manifest(out_dir, manifest: RunManifest) -> Path:
    path = Path(out_dir) / MANIFEST_FILENAME
    write_text_atomic(path, json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILENAME
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return RunManifest(**data)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"cannot read run manifest at {path}: {exc}") from exc


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) for c in row))
    return "\n".join(lines) + "\n"


def _md_table(header: list[str], rows) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in rows:
        out.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(out)


def quartiles(values) -> dict[str, float]:
    """min/q1/median/q3/max with linear interpolation."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise DataError("cannot compute quartiles of an empty sequence")
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return {
        "min": float(arr.min()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(arr.max()),
    }


# --- single-run emission -----------------------------------------------------


def eval_metrics_csv(report: EvalReport) -> str:
    return _csv(
        ["subject", "error"], [(s, repr(e)) for s, e in sorted(report.per_subject.items())]
    )


def eval_summary_md(report: EvalReport, title: str = "Evaluation") -> str:
    rows = [(s, f"{e:.3f}") for s, e in sorted(report.per_subject.items())]
    rows.append(("average", f"{report.overall_mean:.3f}"))
    lines = [
        f"# {title}",
        "",
        f"- guidance policy: {report.guidance_policy}"
        + (f" (noise mode: {report.noise_mode})" if report.noise_mode else ""),
        f"- samples: {report.n_samples}",
        "",
        _md_table(["subject", "angular error (deg)"], rows),
        "",
    ]
    return "\n".join(lines)


def noise_metrics_csv(result: NoiseDistanceResult) -> str:
    rows = [
        (s, repr(result.normal.per_subject[s]), repr(result.noisy.per_subject[s]), repr(d))
        for s, d in sorted(result.per_subject.items())
    ]
    return _csv(["subject", "error_normal", "error_noisy", "distance"], rows)


def noise_summary_md(result: NoiseDistanceResult, title: str = "Guidance-noise robustness") -> str:
    rows = [
        (
            s,
            f"{result.normal.per_subject[s]:.3f}",
            f"{result.noisy.per_subject[s]:.3f}",
            f"{d:.3f}",
        )
        for s, d in sorted(result.per_subject.items())
    ]
    rows.append(
        (
            "average",
            f"{result.normal.overall_mean:.3f}",
            f"{result.noisy.overall_mean:.3f}",
            f"{result.mean:.3f}",
        )
    )
    lines = [
        f"# {title}",
        "",
        f"- noise mode: {result.noisy.noise_mode}",
        "",
        _md_table(["subject", "normal", "noisy", "distance"], rows),
        "",
        NOISE_DISTANCE_REFERENCE,
        "",
    ]
    return "\n".join(lines)


def sweep_metrics_csv(result: SweepResult) -> str:
    rows = [(repr(a), repr(b), repr(e)) for (a, b), e in sorted(result.grid.items())]
    return _csv(["alpha", "beta", "error"], rows)


def sweep_summary_md(result: SweepResult, title: str = "Alpha/beta sweep") -> str:
    alphas = sorted({a for a, _ in result.grid})
    betas = sorted({b for _, b in result.grid})
    rows = []
    for a in alphas:
        row = [f"{a:g}"]
        for b in betas:
            row.append(f"{result.grid[(a, b)]:.3f}" if (a, b) in result.grid else "-")
        rows.append(row)
    lines = [f"# {title}", ""]
    if result.best_cell is not None:
        a, b = result.best_cell
        lines.append(
            f"- best cell: alpha={a:g}, beta={b:g} "
            f"({result.grid[result.best_cell]:.3f} deg; ties break toward larger alpha, then beta)"
        )
        lines.append("")
    lines += [_md_table(["alpha \\ beta"] + [f"{b:g}" for b in betas], rows), ""]
    return "\n".join(lines)


def ablate_metrics_csv(reports_by_side: dict[str, dict]) -> str:
    rows = []
    for side, reports in sorted(reports_by_side.items()):
        for variant, report in reports.items():
            for subject, err in sorted(report.per_subject.items()):
                rows.append((side, variant.value, subject, repr(err)))
    return _csv(["side", "variant", "subject", "error"], rows)


def ablate_summary_md(reports_by_side: dict[str, dict], failures_by_side: dict[str, dict]) -> str:
    """Variant-by-side mean errors; '-' marks a side whose split is empty or failed."""
    sides = list(reports_by_side)
    variants = []
    for reports in reports_by_side.values():
        for v in reports:
            if v not in variants:
                variants.append(v)
    rows = []
    for variant in variants:
        row = [variant.value]
        for side in sides:
            report = reports_by_side[side].get(variant)
            row.append(f"{report.overall_mean:.3f}" if report is not None else "-")
        rows.append(row)
    lines = ["# Ablation battery", "", _md_table(["variant"] + sides, rows), ""]
    exceptions = []
    for side, reports in reports_by_side.items():
        full = next((r for v, r in reports.items() if v.value == "drnet"), None)
        if full is None:
            continue
        for variant, report in reports.items():
            if variant.value != "drnet" and report.overall_mean < full.overall_mean:
                exceptions.append(
                    f"- note: {variant.value} outperformed drnet on side {side} "
                    f"({report.overall_mean:.3f} vs {full.overall_mean:.3f} deg)"
                )
    if exceptions:
        lines += ["Exceptions to the expected ordering:", *exceptions, ""]
    failed = [
        f"- {side}/{name}: {message}"
        for side, failures in sorted(failures_by_side.items())
        for name, message in failures.items()
    ]
    if failed:
        lines += ["Failures:", *failed, ""]
    return "\n".join(lines)


def lopo_metrics_csv(reports: dict[str, EvalReport]) -> str:
    rows = [(s, repr(r.per_subject[s])) for s, r in sorted(reports.items())]
    return _csv(["subject", "error"], rows)


def lopo_summary_md(reports: dict[str, EvalReport], failures: dict[str, str]) -> str:
    rows = [(s, f"{r.per_subject[s]:.3f}") for s, r in sorted(reports.items())]
    if reports:
        mean = np.mean([r.per_subject[s] for s, r in reports.items()])
        rows.append(("average", f"{mean:.3f}"))
    lines = [
        "# Leave-one-person-out",
        "",
        _md_table(["held-out subject", "angular error (deg)"], rows),
        "",
    ]
    if failures:
        lines += ["Failed folds:", *[f"- {s}: {m}" for s, m in sorted(failures.items())], ""]
    return "\n".join(lines)


# --- multi-run report merging ------------------------------------------------


def _label_of(manifest: RunManifest) -> str:
    variant = manifest.config.get("model.variant") if manifest.config else None
    return str(variant or manifest.args.get("variant") or Path(manifest.args.get("out", "run")).name)


def merge_report(runs: list[tuple[RunManifest, dict]]) -> tuple[str, str, str]:
    """Merge completed run dirs into (comparison.md, box_plot.csv, surface.csv).

    ``runs`` pairs each manifest with its parsed metrics rows (list of dict).
    Noise runs contribute distance box data and a versus table; sweep runs
    contribute the alpha/beta surface; plain eval runs contribute error box
    data.
    """
    box_rows = []
    surface_rows = []
    md = ["# Run comparison", ""]
    noise_runs = []
    for manifest, rows in runs:
        label = _label_of(manifest)
        if manifest.command == "sweep":
            for row in rows:
                surface_rows.append((row["alpha"], row["beta"], row["error"]))
            md += [f"## {label} (sweep)", "", "See surface.csv for the alpha/beta grid.", ""]
            continue
        value_key = "distance" if rows and "distance" in rows[0] else "error"
        values = [float(row[value_key]) for row in rows]
        q = quartiles(values)
        box_rows.append(
            (label, repr(q["min"]), repr(q["q1"]), repr(q["median"]), repr(q["q3"]), repr(q["max"]))
        )
        if value_key == "distance":
            noise_runs.append((label, manifest, rows))
        else:
            md += [
                f"## {label} ({manifest.command})",
                "",
                _md_table(
                    ["subject", "error"], [(r["subject"], f"{float(r['error']):.3f}") for r in rows]
                ),
                "",
            ]
    if noise_runs:
        md += _versus_section(noise_runs)
    box_csv = _csv(["run", "min", "q1", "median", "q3", "max"], box_rows)
    surface_csv = _csv(["alpha", "beta", "error"], surface_rows)
    return "\n".join(md) + "\n", box_csv, surface_csv


def _versus_section(noise_runs) -> list[str]:
    """Side-by-side noise tables; 'A-B' cells mean first run versus second."""
    labels = [label for label, _, _ in noise_runs]
    by_subject: dict[str, list[dict]] = {}
    for _, _, rows in noise_runs:
        for row in rows:
            by_subject.setdefault(row["subject"], []).append(row)
    header = ["subject", "normal", "noisy", "distance"]
    table_rows = []
    for subject, rows in sorted(by_subject.items()):
        table_rows.append(
            (
                subject,
                "-".join(f"{float(r['error_normal']):.2f}" for r in rows),
                "-".join(f"{float(r['error_noisy']):.2f}" for r in rows),
                "-".join(f"{float(r['distance']):.2f}" for r in rows),
            )
        )
    avg = []
    for key in ("error_normal", "error_noisy", "distance"):
        avg.append(
            "-".join(
                f"{np.mean([float(r[key]) for r in rows]):.2f}" for _, _, rows in noise_runs
            )
        )
    table_rows.append(("average", *avg))
    return [
        f"## Guidance-noise comparison ({' - '.join(labels)}; '-' reads as versus)",
        "",
        _md_table(header, table_rows),
        "",
        NOISE_DISTANCE_REFERENCE,
        "",
    ]
