"""Result emission: delimited tables, JSON sidecars, and figure rendering.

All writes are atomic (temp file in the target directory, then rename), CSV
floats use repr-faithful formatting so identical runs produce identical bytes,
and figures are rendered with pinned deterministic SVG settings.
"""

from __future__ import annotations

import json
import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SVG_RC = {
    "svg.hashsalt": "hydrokam",
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(x) for x in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_csv(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        row = []
        for tok in ln.split(","):
            try:
                row.append(float(tok))
            except ValueError:
                row.append(tok)
        rows.append(row)
    return header, rows


def _save_figure(fig, path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".svg")
    os.close(fd)
    try:
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)


def line_figure(path: str, x, ys: dict, xlabel: str, ylabel: str, title: str,
                logx: bool = False, logy: bool = False) -> None:
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots()
        for label, y in ys.items():
            ax.plot(x, y, marker="o", ms=3, lw=1.2, label=label)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if ys and len(ys) > 1 or any(k for k in ys):
            ax.legend(fontsize=8)
        _save_figure(fig, path)


def snapshot_figure(path: str, x, profiles: dict, xlabel: str, ylabel: str,
                    title: str) -> None:
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots()
        for label, vals in profiles.items():
            ax.plot(x, vals, lw=1.0, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(fontsize=7)
        _save_figure(fig, path)


def scatter_figure(path: str, x, y, xlabel: str, ylabel: str, title: str,
                   guides: dict | None = None) -> None:
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots()
        ax.plot(x, y, ".", ms=3, alpha=0.6, label="samples")
        if guides:
            import numpy as np

            xs = np.linspace(min(x), max(x), 200)
            for label, fn in guides.items():
                ax.plot(xs, [fn(v) for v in xs], lw=1.2, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(fontsize=8)
        _save_figure(fig, path)
