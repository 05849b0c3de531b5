"""Matplotlib figures rendered from report tables (Agg backend, PNG files)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def _f(xs):
    return np.array([float(x) for x in xs])


def error_vs_samples(report, path):
    t = report.tables["errors_by_n"]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for setup in sorted(set(t.column("setup"))):
        rows = [r for r in t.rows if r[0] == setup]
        n = _f([r[1] for r in rows])
        med = _f([r[5] for r in rows])
        lo = _f([r[6] for r in rows])
        hi = _f([r[7] for r in rows])
        ok = np.isfinite(med)
        if not ok.any():
            continue
        yerr = np.vstack([med[ok] - lo[ok], hi[ok] - med[ok]])
        ax.errorbar(n[ok], med[ok], yerr=yerr, marker="o", capsize=3, label=setup)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("samples N")
    ax.set_ylabel("relative error of target module")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, path)


def bias_curves(report, path):
    t = report.tables["bias_curves"]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    keys = sorted({(r[0], int(r[1])) for r in t.rows})
    for setup, n in keys:
        rows = [r for r in t.rows if r[0] == setup and int(r[1]) == n]
        ax.loglog(_f([r[2] for r in rows]), _f([r[3] for r in rows]),
                  ls="-" if setup == "mimo" else "--", label=f"{setup} N={n}")
    ax.set_xlabel("frequency (rad/sample)")
    ax.set_ylabel("|mean estimate - true|")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    _save(fig, path)


def spectrum_blocks(report, path):
    t = report.tables["spectrum_blocks"]
    fig, ax = plt.subplots(figsize=(6, 4))
    w = _f(t.column("omega"))
    for name in t.columns[1:]:
        y = np.maximum(_f(t.column(name)), 1e-300)
        ax.loglog(w, y, label=name)
    ax.axhline(1e-8, color="k", ls=":", lw=1, label="threshold")
    ax.set_xlabel("frequency (rad/sample)")
    ax.set_ylabel("relative block norm")
    ax.legend()
    _save(fig, path)


def module_response(report, path):
    t = report.tables["module_response"]
    w = _f(t.column("omega"))
    fig, axes = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    for col, ls in (("estimated", "-"), ("true", "--")):
        if f"{col}_mag" not in t.columns:
            continue
        axes[0].loglog(w, _f(t.column(f"{col}_mag")), ls=ls, label=col)
        axes[1].semilogx(w, _f(t.column(f"{col}_phase")), ls=ls, label=col)
    axes[0].set_ylabel("magnitude")
    axes[1].set_ylabel("phase (rad)")
    axes[1].set_xlabel("frequency (rad/sample)")
    axes[0].legend()
    _save(fig, path)


def signals(report, path):
    t = report.tables["signal_preview"]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = _f(t.column("t"))
    for name in t.columns[1:]:
        ax.plot(x, _f(t.column(name)), lw=0.8, label=name)
    ax.set_xlabel("sample")
    ax.legend(fontsize=7, ncol=4)
    _save(fig, path)
