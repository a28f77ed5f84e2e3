"""Deterministic report files: delimited tables, JSON documents, and
matplotlib figures rendered next to them.

Every writer is atomic (temp file + rename) and byte-stable for identical
inputs, so reruns with the same seeds reproduce artifacts exactly.
"""

import csv
import hashlib
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REPORT_FORMAT_VERSION = 1

# fixed PNG metadata: matplotlib's default embeds its version string, which
# would break byte-identical reruns across environments
_PNG_METADATA = {"Software": "vobb-report"}


def _atomic(path, write_fn, mode="w"):
    tmp = path + ".tmp"
    with open(tmp, mode) as fh:
        write_fn(fh)
    os.replace(tmp, path)


def config_digest(config):
    """Stable digest of an (effective) configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_table(path, fieldnames, rows):
    """CSV with a fixed header; values fall back to str()."""
    def go(fh):
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fieldnames})
    _atomic(path, go)


def write_json(path, doc):
    def go(fh):
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _atomic(path, go)


def _save_fig(fig, path):
    tmp = path + ".tmp"
    fig.savefig(tmp, format="png", dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)
    os.replace(tmp, path)


def fig_error_trace(trace, path, title="error trace"):
    """Weighted-total progression over optimization steps."""
    steps = [s for s, _, _ in trace]
    totals = [t for _, _, t in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, totals, marker="o")
    ax.set_xlabel("step")
    ax.set_ylabel("weighted total error")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_fig(fig, path)


def fig_per_level(per_level_by_label, path, title="per-level outside volume"):
    """Grouped bars of per-level OBV sums, one group per tree label."""
    labels = sorted(per_level_by_label)
    levels = sorted({lv for d in per_level_by_label.values() for lv in d})
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(labels), 1)
    for i, lab in enumerate(labels):
        vals = [per_level_by_label[lab].get(lv, 0.0) for lv in levels]
        ax.bar([lv + i * width for lv in levels], vals, width=width, label=lab)
    ax.set_xticks([lv + 0.4 - width / 2 for lv in levels])
    ax.set_xticklabels([str(lv) for lv in levels])
    ax.set_xlabel("level")
    ax.set_ylabel("sum of per-box outside volume")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save_fig(fig, path)


def fig_bench(summary, path, title="collision benchmark"):
    """Mean box-test and triangle-test counts per tree."""
    trees = sorted(summary["trees"])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 4))
    for ax, key, lab in ((ax1, "mean_n_v", "mean box-box tests"),
                         (ax2, "mean_n_p", "mean triangle tests")):
        vals = [summary["trees"][t][key] for t in trees]
        ax.bar(range(len(trees)), vals, tick_label=trees)
        ax.set_ylabel(lab)
        ax.grid(True, axis="y", alpha=0.3)
    if "n_v_reduction" in summary:
        fig.suptitle("%s (n_v reduction %.1f%%)"
                     % (title, 100.0 * summary["n_v_reduction"]))
    else:
        fig.suptitle(title)
    fig.tight_layout()
    _save_fig(fig, path)
