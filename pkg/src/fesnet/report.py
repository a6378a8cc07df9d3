"""Evaluation and training reports: aligned text tables in the style of
the segmentation literature (percentages, two decimals), tab-delimited
per-image output, a flat key-value summary, and matplotlib figures
rendered to files alongside them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

METRIC_KEYS = ("se", "sp", "acc", "auc_point", "auc_roc", "f1")
METRIC_LABELS = ("Se", "Sp", "Acc", "AUC_pt", "AUC_roc", "F1")


def _pct(value) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"


def format_metric_table(rows: list[dict], total: dict, title: str = "",
                        aggregate_mode: str = "global") -> str:
    """One line per image plus an aggregate line, metrics as percentages."""
    header = ["id", "split"] + list(METRIC_LABELS)
    body = []
    for row in rows:
        body.append([str(row["id"]), str(row["split"])] + [_pct(row[k]) for k in METRIC_KEYS])
    body.append([f"ALL ({aggregate_mode})", "-"] + [_pct(total[k]) for k in METRIC_KEYS])
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) for i in range(len(header))]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def write_metrics_tsv(path, rows: list[dict], total: dict,
                      aggregate_mode: str = "global") -> None:
    cols = ["id", "split"] + list(METRIC_KEYS) + ["tp", "tn", "fp", "fn"]
    with open(path, "w") as f:
        f.write("\t".join(cols) + "\n")
        for row in rows + [{**total, "id": f"ALL ({aggregate_mode})", "split": "-"}]:
            cells = [str(row["id"]), str(row["split"])]
            for k in cols[2:]:
                v = row.get(k)
                cells.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
            f.write("\t".join(cells) + "\n")


def write_metrics_kv(path, total: dict, extra: dict | None = None) -> None:
    """Flat machine-readable key=value summary (raw fractions, not percent)."""
    with open(path, "w") as f:
        for k in METRIC_KEYS:
            v = total.get(k)
            f.write(f"{k}={'nan' if v is None else repr(v)}\n")
        for k in ("tp", "tn", "fp", "fn"):
            f.write(f"{k}={total[k]}\n")
        for k, v in sorted((extra or {}).items()):
            f.write(f"{k}={v}\n")


def save_metric_bars(total: dict, path, title: str = "Evaluation metrics") -> None:
    labels = [l for l, k in zip(METRIC_LABELS, METRIC_KEYS) if total.get(k) is not None]
    values = [100.0 * total[k] for k in METRIC_KEYS if total.get(k) is not None]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bars = ax.bar(labels, values, color="#3a7ca5")
    ax.set_ylim(0, 105)
    ax.set_ylabel("%")
    ax.set_title(title)
    for bar, v in zip(bars, values):
        ax.annotate(f"{v:.1f}", (bar.get_x() + bar.get_width() / 2, v),
                    ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loss_curve(step_records: list[dict], path, title: str = "Training loss") -> None:
    steps = [r["step"] for r in step_records]
    losses = [r["loss"] for r in step_records]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=0.8, color="#3a7ca5")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
