"""Report emission: atomic JSON/CSV writers, the binary matrix format, and
figure rendering for each experiment kind.

All writes go through a temp-file-then-rename so partially written reports
never appear under the final name. The JSON summary is dumped with sorted
keys so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile

import numpy as np

MATRIX_MAGIC = b"FMONO\x00"
_HEADER = struct.Struct("<8sII")  # magic + 2 pad bytes, rows, cols


def _atomic_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"
    _atomic_bytes(path, text.encode("utf-8"))


def write_csv(path, header, rows) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    _atomic_bytes(path, buf.getvalue().encode("utf-8"))


def write_matrix(path, array: np.ndarray) -> None:
    """Row-major float64 dump with a 16-byte header: 6-byte magic "FMONO\\0",
    2 zero pad bytes, then u32 rows and u32 cols, all little-endian."""
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    if a.ndim != 2:
        raise ValueError("matrix dump expects a 2-D array")
    header = _HEADER.pack(MATRIX_MAGIC + b"\x00\x00", a.shape[0], a.shape[1])
    _atomic_bytes(path, header + a.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated matrix file")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic[:6] != MATRIX_MAGIC:
        raise ValueError("bad magic; not a matrix dump")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# Figures


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["figure.figsize"] = (6.4, 4.0)
    plt.rcParams["font.size"] = 9
    plt.rcParams["axes.grid"] = True
    plt.rcParams["grid.alpha"] = 0.3
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    import matplotlib.pyplot as plt

    plt.close(fig)


def fig_solution(path, grid, u, u2=None, title="solution"):
    plt = _plt()
    fig, ax = plt.subplots()
    if grid.dim == 1:
        x = grid.nodes[:, 0]
        order = np.argsort(x)
        ax.plot(x[order], u[order], "-", lw=1.2, label="u")
        if u2 is not None:
            ax.plot(x[order], u2[order], "--", lw=1.2, label="u2")
        lo, hi = grid.omega_box[0]
        ax.axvspan(lo, hi, color="tab:orange", alpha=0.12, label="Omega")
        ax.legend()
        ax.set_xlabel("x")
    else:
        vals = np.full(grid.n_nodes, np.nan)
        vals[:] = u
        sc = ax.scatter(grid.nodes[:, 0], grid.nodes[:, 1], c=vals, s=14, cmap="viridis")
        fig.colorbar(sc, ax=ax)
        ax.set_aspect("equal")
    ax.set_title(title)
    _save(fig, path)


def fig_matrix(path, matrix, title="matrix"):
    plt = _plt()
    fig, ax = plt.subplots()
    im = ax.imshow(matrix, cmap="RdBu_r")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.grid(False)
    _save(fig, path)


def fig_residuals(path, values, title="residuals", ylabel="residual"):
    plt = _plt()
    fig, ax = plt.subplots()
    ax.semilogy(np.arange(len(values)), np.maximum(np.abs(values), 1e-30), "o", ms=3)
    ax.set_xlabel("trial")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    _save(fig, path)


def fig_masks(path, grid, aggregate, truth=None, title="detection"):
    plt = _plt()
    fig, ax = plt.subplots()
    pts = grid.interior_nodes
    if grid.dim == 1:
        x = pts[:, 0]
        ax.step(x, aggregate.astype(float), where="mid", label="detected", lw=1.5)
        if truth is not None:
            ax.step(x, 1.1 * truth.astype(float), where="mid", label="truth", ls="--")
        ax.set_ylim(-0.1, 1.3)
        ax.set_xlabel("x")
        ax.legend()
    else:
        ax.scatter(pts[:, 0], pts[:, 1], c="0.85", s=12)
        ax.scatter(pts[aggregate, 0], pts[aggregate, 1], c="tab:red", s=14, label="detected")
        if truth is not None:
            ax.scatter(pts[truth, 0], pts[truth, 1], marker="x", c="k", s=10, label="truth")
        ax.set_aspect("equal")
        ax.legend()
    ax.set_title(title)
    _save(fig, path)


def fig_reconstruction(path, cells, truth=None, title="reconstruction"):
    plt = _plt()
    fig, ax = plt.subplots()
    ids = [c.cell_id for c in cells]
    mids = [c.midpoint for c in cells]
    lo = [c.midpoint - c.lower for c in cells]
    hi = [c.upper - c.midpoint for c in cells]
    ax.errorbar(ids, mids, yerr=[np.abs(lo), np.abs(hi)], fmt="o", capsize=4, label="estimate")
    if truth is not None:
        ax.plot(ids, truth, "x", ms=9, c="k", label="truth")
    ax.set_xlabel("cell")
    ax.set_ylabel("value")
    ax.set_xticks(ids)
    ax.legend()
    ax.set_title(title)
    _save(fig, path)


def fig_stability(path, c_est, k_est=None, title="stability ladder"):
    plt = _plt()
    fig, ax = plt.subplots()
    levels = np.arange(1, len(c_est) + 1)
    ax.semilogy(levels, np.maximum(c_est, 1e-30), "-o", ms=3)
    if k_est is not None:
        ax.axvline(k_est, color="tab:red", ls="--", lw=1, label=f"k = {k_est}")
        ax.legend()
    ax.set_xlabel("measurement level l")
    ax.set_ylabel("c_est(l)")
    ax.set_title(title)
    _save(fig, path)


def fig_spectrum(path, eigenvalues, title="spectrum"):
    plt = _plt()
    fig, ax = plt.subplots()
    w = np.sort(np.asarray(eigenvalues))
    ax.plot(np.arange(len(w)), w, "o", ms=3)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.set_title(title)
    _save(fig, path)
