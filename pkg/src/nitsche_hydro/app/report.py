"""Matplotlib report figures written next to the CSV history."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from matplotlib.tri import Triangulation  # noqa: E402

from ..diagnostics import sedov_reference_radius  # noqa: E402
from ..fem import eval_basis  # noqa: E402
from .output import make_snapshot  # noqa: E402

plt.rcParams.update({"font.size": 10, "axes.grid": True, "grid.alpha": 0.3,
                     "savefig.dpi": 130, "figure.autolayout": True})


def _history_arrays(rows) -> dict[str, np.ndarray]:
    keys = rows[0].keys() if rows else ()
    return {k: np.array([float(r[k]) for r in rows]) for k in keys}


def plot_energy(h, path: Path) -> Path:
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax.plot(h["t"], h["ke"], label="kinetic")
    ax.plot(h["t"], h["ie"], label="internal")
    ax.plot(h["t"], h["etotal"], "k--", label="total")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()
    drift = np.abs(h["etotal"] / h["etotal"][0] - 1.0)
    ax2.semilogy(h["t"], np.maximum(drift, 1e-17))
    ax2.set_xlabel("t")
    ax2.set_ylabel("|E(t)/E(0) - 1|")
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_boundary(h, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.semilogy(h["t"][1:], np.maximum(h["bviol"][1:], 1e-20), label="||v.n||")
    ax.semilogy(h["t"][1:], np.maximum(h["ke_penalty"][1:], 1e-20), label="wall kinetic energy")
    ax.set_xlabel("t")
    ax.legend()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_shock(h, reference, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    t = np.linspace(0.0, h["t"][-1], 200)
    ax.plot(t, [sedov_reference_radius(reference, s) for s in t], "k-", label="self-similar")
    ax.plot(h["t"], h["shock_r"], "o", ms=3, label="density maximum")
    ax.set_xlabel("t")
    ax.set_ylabel("shock radius")
    ax.legend()
    fig.savefig(path)
    plt.close(fig)
    return path


def _element_outline(kin, x, n_sub: int = 8) -> list[np.ndarray]:
    s = np.linspace(0.0, 1.0, n_sub + 1)
    zero, one = np.zeros_like(s), np.ones_like(s)
    loop = np.concatenate([np.stack([s, zero], -1), np.stack([one, s], -1),
                           np.stack([s[::-1], one], -1), np.stack([zero, s[::-1]], -1)])
    vals, _ = eval_basis(kin.basis, loop)
    xe = x[kin.elem_dofs]
    return list(np.einsum("qa,eai->eqi", vals, xe))


def plot_fields(problem, state, path: Path) -> Path:
    kin = problem.op.kin
    snap = make_snapshot(state, problem.op)
    k, n1 = kin.degree, kin.degree + 1
    pts = snap.x[kin.elem_dofs].reshape(-1, 2)
    speed = np.linalg.norm(snap.v[kin.elem_dofs], axis=-1).reshape(-1)
    tris = []
    for e in range(kin.elem_dofs.shape[0]):
        base = e * n1 * n1
        for j in range(k):
            for i in range(k):
                a = base + j * n1 + i
                tris += [(a, a + 1, a + n1 + 1), (a, a + n1 + 1, a + n1)]
    tri = Triangulation(pts[:, 0], pts[:, 1], np.asarray(tris))
    fig, axes = plt.subplots(1, 3, figsize=(12, 4))
    for ax, vals, title in ((axes[0], speed, "|v|"),
                            (axes[1], np.log10(snap.density.reshape(-1)), "log10 density")):
        im = ax.tripcolor(tri, vals, shading="gouraud", cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(title)
        ax.set_aspect("equal")
        ax.grid(False)
    axes[2].add_collection(LineCollection(_element_outline(kin, snap.x), lw=0.5, colors="k"))
    axes[2].autoscale()
    axes[2].set_aspect("equal")
    axes[2].set_title("mesh")
    axes[2].grid(False)
    fig.suptitle(f"t = {state.t:.4g}")
    fig.savefig(path)
    plt.close(fig)
    return path


def render_report(outcome, outdir: Path) -> list[Path]:
    """Write the standard figures for a finished run and return their paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    h = _history_arrays(outcome.history.rows)
    prob = outcome.problem
    files = [plot_energy(h, outdir / "energy.png"), plot_boundary(h, outdir / "boundary.png")]
    if np.isfinite(h["shock_r"]).any():
        files.append(plot_shock(h, prob.reference, outdir / "shock_radius.png"))
    files.append(plot_fields(prob, outcome.result.state, outdir / "fields.png"))
    return files
