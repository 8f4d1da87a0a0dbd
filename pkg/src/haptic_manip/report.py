"""Merge per-stage CSV outputs of a run directory into one ``summary.md``."""

from __future__ import annotations

import csv
import re
from pathlib import Path

KIND_ORDER = ("local_gp", "fc_nn", "lstm")
CURVE_STEPS = (1, 5, 10, 20, 30, 40, 50)


def _rows(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _pm(mean: str, std: str) -> str:
    return f"{float(mean):.2f} ± {float(std):.2f}"


def _obs_section(results: Path) -> list:
    files = sorted((results / "obs").glob("*.csv")) if (results / "obs").is_dir() else []
    table = {}
    for f in files:
        obj = re.match(r"(.+)_c\d_", f.stem).group(1)
        for r in _rows(f):
            table.setdefault(obj, {})[(int(r["comb"]), r["regressor"])] = r
    out = []
    for obj in sorted(table):
        cells = table[obj]
        kinds = [k for k in KIND_ORDER if any(kk == k for _, kk in cells)]
        out += [f"### Observation accuracy — {obj}", "",
                "± is the standard deviation of per-episode RMSEs over the test split.", ""]
        head = "| Comb. | " + " | ".join(f"{k} pos (mm) | {k} ori (deg)" for k in kinds) + " |"
        out += [head, "|" + "---|" * (1 + 2 * len(kinds))]
        for comb in sorted({c for c, _ in cells}):
            row = [str(comb)]
            for k in kinds:
                r = cells.get((comb, k))
                row += [_pm(r["pos_rmse_mm"], r["pos_std"]), _pm(r["ori_rmse_deg"], r["ori_std"])] if r else ["", ""]
            out.append("| " + " | ".join(row) + " |")
        out.append("")
    return out


def _sweep_section(results: Path) -> list:
    d = results / "sweep"
    out = []
    for f in sorted(d.glob("*.csv")) if d.is_dir() else []:
        out += [f"### Training-size sweep — {f.stem}", "", "| fraction | pos (mm) | ori (deg) | n |", "|---|---|---|---|"]
        for r in _rows(f):
            out.append(f"| {r['fraction']} | {_pm(r['pos_rmse_mm'], r['pos_std'])} | "
                       f"{_pm(r['ori_rmse_deg'], r['ori_std'])} | {r['n']} |")
        out.append("")
    return out


def _transfer_section(results: Path) -> list:
    d = results / "transfer"
    out = []
    for f in sorted(d.glob("*.csv")) if d.is_dir() else []:
        with open(f, newline="") as fh:
            rows = list(csv.reader(fh))
        out += [f"### Cross-object transfer — {f.stem} (rows: trained on, columns: tested on)", ""]
        out.append("| " + " | ".join(rows[0]) + " |")
        out.append("|" + "---|" * len(rows[0]))
        for r in rows[1:]:
            out.append("| " + " | ".join([r[0]] + [f"{float(v):.2f}" for v in r[1:]]) + " |")
        out.append("")
    return out


def _trans_section(results: Path) -> list:
    d = results / "trans"
    out = []
    for f in sorted(d.glob("*_onestep.csv")) if d.is_dir() else []:
        base = f.name[: -len("_onestep.csv")]
        r = _rows(f)[0]
        out += [f"### Transition model — {base}", "",
                f"One-step feature-space RMSE {float(r['model_rmse']):.4f} "
                f"(persistence baseline {float(r['persistence_rmse']):.4f}).", ""]
        curve = d / f"{base}_curve.csv"
        if curve.exists():
            rows = _rows(curve)
            out += ["| step | pos err (mm) | ori err (deg) |", "|---|---|---|"]
            for r in rows:
                if int(r["step"]) in CURVE_STEPS or int(r["step"]) == len(rows):
                    out.append(f"| {r['step']} | {float(r['pos_err_mm']):.2f} | {float(r['ori_err_deg']):.2f} |")
            out.append("")
    return out


def _bench_section(results: Path) -> list:
    d = results / "bench"
    out = []
    for f in sorted(d.glob("*.csv")) if d.is_dir() else []:
        out += [f"### Roll-out benchmark — {f.stem}", "",
                "| Method | Goal error (mm) | Path len. (mm) | Success rate | Goals |", "|---|---|---|---|---|"]
        for r in _rows(f):
            out.append(f"| {r['method']} | {_pm(r['goal_err_mm'], r['goal_err_std'])} | "
                       f"{_pm(r['path_len_mm'], r['path_len_std'])} | {float(r['success_rate']):.0%} | {r['n_goals']} |")
        out.append("")
    return out


def render(run_dir) -> str:
    results = Path(run_dir) / "results"
    body = []
    for part in (_obs_section, _sweep_section, _transfer_section, _trans_section, _bench_section):
        body += part(results)
    if not body:
        body = ["No stage outputs found.", ""]
    return "\n".join(["# Run summary", ""] + body)


def write_summary(run_dir) -> Path:
    path = Path(run_dir) / "summary.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(run_dir))
    return path
