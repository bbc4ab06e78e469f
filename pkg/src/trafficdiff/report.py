"""Summary tables and figures built from the eval and fid stage outputs."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from .harness.data import SCENARIOS, EvalReport


def _write(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.2f}" if isinstance(v, float) else v for v in r])


def _mean(rows) -> float | str:
    return float(np.mean([r.accuracy for r in rows])) if rows else ""


def _pivot(report: EvalReport, keys: tuple[str, ...], columns: dict[str, dict]) -> list[list]:
    """One row per distinct ``keys`` tuple; each column averages rows matching its filter."""
    seen = []
    for r in report:
        k = tuple(getattr(r, f) for f in keys)
        if k not in seen:
            seen.append(k)
    out = []
    for k in seen:
        base = dict(zip(keys, k))
        out.append(list(k) + [_mean(report.select(**base, **flt)) for flt in columns.values()])
    return out


def table_hierarchical(report: EvalReport) -> tuple[list[str], list[list]]:
    cols = {sc: {"scenario": sc} for sc in SCENARIOS}
    return ["layer", "data", *SCENARIOS], _pivot(report, ("level", "dataset"), cols)


def table_1d2d(report: EvalReport) -> tuple[list[str], list[list]]:
    cols = {
        "original": {"scenario": "original", "variant": ""},
        "synth-1D": {"scenario": "synth", "variant": "1d-dm"},
        "synth-2D": {"scenario": "synth", "variant": "2d-dm"},
        "ori+synth-1D": {"scenario": "ori+synth", "variant": "1d-dm"},
        "ori+synth-2D": {"scenario": "ori+synth", "variant": "2d-dm"},
    }
    return ["dataset", *cols], _pivot(report, ("dataset",), cols)


def table_fractions(report: EvalReport) -> tuple[list[str], list[list]]:
    rows = []
    fracs = sorted({r.train_fraction for r in report if r.variant in ("1d", "2d")}, reverse=True)
    for ds in dict.fromkeys(r.dataset for r in report):
        for f in fracs:
            sel = {v: report.select(dataset=ds, train_fraction=f, variant=v) for v in ("1d", "2d")}
            size = next((r.train_size for r in sel["1d"] + sel["2d"]), "")
            rows.append([ds, f"{int(round(100 * f))}%", size, _mean(sel["1d"]), _mean(sel["2d"])])
    return ["dataset", "train_fraction", "train_size", "1D", "2D"], rows


def _sweep(report: EvalReport, key: str) -> tuple[list[str], list[list]]:
    cols = {sc: {"scenario": sc} for sc in SCENARIOS}
    return ["dataset", key, *SCENARIOS], _pivot(report, ("dataset", key), cols)


def table_synthsweep(report: EvalReport) -> tuple[list[str], list[list]]:
    rows = []
    for ds in dict.fromkeys(r.dataset for r in report):
        orig = _mean(report.select(dataset=ds, scenario="original"))
        for sc in ("synth", "ori+synth"):
            for r in report.select(dataset=ds, scenario=sc):
                rows.append([ds, sc, r.synth_count, orig, r.accuracy])
    return ["dataset", "scenario", "synth_count", "original", "accuracy"], rows


def read_fid(path: Path) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = defaultdict(dict)
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            out[d["dataset"]][d["class"]] = float(d["fid"])
    return dict(out)


def _savefig(fig, path: Path) -> None:
    fig.savefig(path, dpi=80, metadata={"Software": None})


def _figure_lines(path: Path, title: str, xlabel: str, header, rows, xcol: int, ycols) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for ds in dict.fromkeys(r[0] for r in rows):
        pts = [r for r in rows if r[0] == ds]
        for c in ycols:
            xy = [(r[xcol], r[c]) for r in pts if r[c] != ""]
            if xy:
                x, y = zip(*xy)
                ax.plot(x, y, marker="o", label=f"{ds} {header[c]}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy (%)")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _savefig(fig, path)
    plt.close(fig)


def _figure_fid(path: Path, fid: dict[str, dict[str, float]]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = 0
    ticks, names = [], []
    for ds, vals in fid.items():
        classes = [c for c in vals if c not in ("mean", "std")]
        for c in classes:
            ax.bar(x, vals[c], color="tab:blue")
            ticks.append(x)
            names.append(f"{ds}:{c}")
            x += 1
        x += 1
    ax.set_xticks(ticks)
    ax.set_xticklabels(names, rotation=90, fontsize=6)
    ax.set_ylabel("FID")
    fig.tight_layout()
    _savefig(fig, path)
    plt.close(fig)


def _figure_hist(path: Path, title: str, xlabel: str, data: dict[str, tuple]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (values, bins) in data.items():
        ax.hist(values, bins=bins, alpha=0.5, label=name)
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _savefig(fig, path)
    plt.close(fig)


def _figure_pixel_hist(path: Path, series: dict[str, list]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(series), figsize=(4 * len(series), 3), squeeze=False)
    for ax, (ds, rows) in zip(axes[0], series.items()):
        lo = [float(r["bin_lo"]) for r in rows]
        w = float(rows[0]["bin_hi"]) - lo[0]
        for key, color in (("original", "tab:blue"), ("synthetic", "tab:orange")):
            ax.bar(lo, [float(r[key]) for r in rows], width=w, align="edge", alpha=0.5,
                   color=color, label=key)
        ax.set_title(f"{ds} (overlap {float(rows[0]['overlap']):.2f})")
        ax.set_xlabel("pixel value")
        ax.legend(fontsize=7)
    fig.tight_layout()
    _savefig(fig, path)
    plt.close(fig)


def write_report(root: str | Path, out: str | Path) -> list[Path]:
    """Write every table/figure whose inputs exist under ``root``; returns written paths."""
    root, out = Path(root), Path(out)
    written: list[Path] = []

    def emit(name, table):
        header, rows = table
        _write(out / name, header, rows)
        written.append(out / name)
        return header, rows

    ev = root / "eval"
    if (ev / "hierarchical" / "report.csv").is_file():
        emit("table2.csv", table_hierarchical(EvalReport.from_csv(ev / "hierarchical" / "report.csv")))
    if (ev / "1d2d" / "report.csv").is_file():
        rep = EvalReport.from_csv(ev / "1d2d" / "report.csv")
        emit("table3.csv", table_1d2d(rep))
        emit("table4.csv", table_fractions(rep))
    if (ev / "limited" / "report.csv").is_file():
        h, rows = emit("limited.csv", _sweep(EvalReport.from_csv(ev / "limited" / "report.csv"),
                                             "train_size"))
        _figure_lines(out / "limited.png", "limited original data", "originals per class",
                      h, rows, 1, (2, 3, 4))
        written.append(out / "limited.png")
    if (ev / "realtime" / "report.csv").is_file():
        h, rows = emit("realtime.csv", _sweep(EvalReport.from_csv(ev / "realtime" / "report.csv"),
                                              "crop_length"))
        _figure_lines(out / "realtime.png", "trace prefix", "prefix length (samples)",
                      h, rows, 1, (2, 3, 4))
        written.append(out / "realtime.png")
    if (ev / "synthsweep" / "report.csv").is_file():
        h, rows = emit("synthsweep.csv",
                       table_synthsweep(EvalReport.from_csv(ev / "synthsweep" / "report.csv")))
        synth = [r for r in rows if r[1] == "synth"]
        _figure_lines(out / "synthsweep.png", "synthetic count", "synthetic per class",
                      h, synth, 2, (4,))
        written.append(out / "synthsweep.png")
    if (ev / "anomaly" / "case1.csv").is_file():
        rep = EvalReport.from_csv(ev / "anomaly" / "case1.csv")
        emit("anomaly_case1.csv", (["dataset", "anomaly_train_count", "crop_length", "scenario",
                                    "accuracy"],
                                   [[r.dataset, r.train_size, r.crop_length, r.scenario, r.accuracy]
                                    for r in rep]))
    if (ev / "anomaly" / "case2.csv").is_file():
        groups: dict[tuple, list[float]] = defaultdict(list)
        with open(ev / "anomaly" / "case2.csv", newline="") as fh:
            for d in csv.DictReader(fh):
                groups[(d["dataset"], d["scenario"], d["population"])].append(float(d["entropy"]))
        emit("anomaly_case2.csv", (["dataset", "scenario", "population", "count", "mean_entropy"],
                                   [[*k, len(v), float(np.mean(v))] for k, v in groups.items()]))
        _figure_hist(out / "entropy.png", "predictive entropy", "entropy (nats)",
                     {" ".join(k): (v, 20) for k, v in groups.items()})
        written.append(out / "entropy.png")
    if (root / "fid" / "fid.csv").is_file():
        fid = read_fid(root / "fid" / "fid.csv")
        emit("fid_summary.csv", (["dataset", "mean", "std"],
                                 [[ds, v["mean"], v["std"]] for ds, v in fid.items()]))
        _figure_fid(out / "fid.png", fid)
        written.append(out / "fid.png")
    if (root / "fid" / "histogram.csv").is_file():
        series: dict[str, list] = defaultdict(list)
        with open(root / "fid" / "histogram.csv", newline="") as fh:
            for d in csv.DictReader(fh):
                series[d["dataset"]].append(d)
        _figure_pixel_hist(out / "histogram.png", series)
        written.append(out / "histogram.png")
    return written
