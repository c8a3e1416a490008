"""SVG figures for experiment results.

Output is byte-stable for identical inputs: the SVG hash salt is fixed and
the date metadata is dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LESION_COLOR = "tab:blue"
NORMAL_COLOR = "tab:red"

STYLE = {
    "svg.hashsalt": "censorseg",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _title(result):
    cfg = result.get("config", {})
    loss = cfg.get("loss", {})
    censor = cfg.get("censor", {})
    if not loss:
        return ""
    return (f"{censor.get('mode', '?')} p={censor.get('p', 0):g} | "
            f"{loss['kind']} a={loss['alpha']:g} b={loss['beta']:g}")


def plot_pr(result, path):
    recall = result["pr"].get("recall", [])
    precision = result["pr"].get("precision", [])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3.2))
        if recall:
            ax.step([0.0] + recall, [precision[0]] + precision, where="post", color="k", lw=1.2)
        lo, hi = result["map_ci95"]
        ax.set_title(f"{_title(result)}\nmAP {result['map']:.3f} ({lo:.3f}, {hi:.3f})", fontsize=8)
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        fig.tight_layout()
        return _save(fig, path)


def plot_entropy_histogram(result, path):
    """Lesion-class probability histogram, GT lesion vs GT normal voxels."""
    hist = result["histograms"]
    lesion = np.asarray(hist["lesion"], dtype=float)
    normal = np.asarray(hist["normal"], dtype=float)
    edges = np.linspace(0.0, 1.0, len(lesion) + 1)
    width = edges[1] - edges[0]
    ent = result["entropy"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3.2))
        ax.bar(edges[:-1], normal, width=width, align="edge", color=NORMAL_COLOR, alpha=0.6, label="GT normal")
        ax.bar(edges[:-1], lesion, width=width, align="edge", color=LESION_COLOR, alpha=0.8, label="GT lesion")
        ax.set_yscale("log")
        ax.set_xlabel("predicted lesion probability")
        ax.set_ylabel("voxels")
        ax.set_title(f"{_title(result)}\nH lesion {ent['lesion_H']:.2f}, normal {ent['normal_H']:.2f}", fontsize=8)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def plot_size_strata(result, path):
    strata = result["size_strata"]
    labels = [f"[{s['lo']:g},{'inf' if s['hi'] is None else format(s['hi'], 'g')})" for s in strata]
    n_gt = [s["n_gt"] for s in strata]
    n_det = [s["n_detected"] for s in strata]
    x = np.arange(len(strata))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3.2))
        ax.bar(x, n_gt, color="0.8", label="GT lesions")
        ax.bar(x, n_det, width=0.5, color=LESION_COLOR, label="detected")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_xlabel("equivalent diameter (mm)")
        ax.set_ylabel("lesions")
        ax.set_title(_title(result), fontsize=8)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def emit_plots(results, out_dir):
    """Three SVGs per result: PR curve, probability histogram, size strata.

    ``results`` is a list of ``(name, result_dict)`` pairs.  Returns the
    written paths.
    """
    out = Path(out_dir)
    paths = []
    for name, res in results:
        paths.append(plot_pr(res, out / f"{name}_pr.svg"))
        paths.append(plot_entropy_histogram(res, out / f"{name}_entropy.svg"))
        paths.append(plot_size_strata(res, out / f"{name}_strata.svg"))
    return paths
