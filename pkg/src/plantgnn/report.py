"""Learning-curve CSVs and rendered figures.

The delimited output is the source of truth; alongside it the same data
is rendered to PNG so a run directory is inspectable without further
tooling. Figures use the Agg backend and never open a window.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

CURVES_HEADER = "epoch,train_loss,val_loss,val_miou,val_accuracy,epoch_seconds"


def write_curves_csv(path, rows):
    """One row per epoch: (epoch, train_loss, val_loss, val_miou,
    val_accuracy, epoch_seconds)."""
    with open(path, "w") as f:
        f.write(CURVES_HEADER + "\n")
        for epoch, tl, vl, miou, acc, secs in rows:
            f.write("%d,%.10g,%.10g,%.10g,%.10g,%.10g\n"
                    % (epoch, tl, vl, miou, acc, secs))


def read_curves_csv(path):
    """Rows of floats from a curves CSV (epoch column included)."""
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != CURVES_HEADER:
            raise ValueError("unexpected curves header in %s" % path)
        for line in f:
            line = line.strip()
            if line:
                rows.append(tuple(float(v) for v in line.split(",")))
    return rows


def render_curves(path, rows):
    """Two-panel figure: losses on the left, validation mIoU and
    accuracy on the right."""
    epochs = [r[0] for r in rows]
    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, [r[1] for r in rows], label="train loss")
    ax_loss.plot(epochs, [r[2] for r in rows], label="val loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_loss.legend()
    ax_metric.plot(epochs, [r[3] for r in rows], label="val mIoU")
    ax_metric.plot(epochs, [r[4] for r in rows], label="val accuracy")
    ax_metric.set_xlabel("epoch")
    ax_metric.set_ylim(0.0, 1.02)
    ax_metric.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_kfold(path, fold_mious, aggregate_miou):
    """Bar chart of per-fold validation mIoU with the aggregate marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(fold_mious))
    ax.bar(xs, fold_mious, color="tab:green", alpha=0.8)
    ax.axhline(aggregate_miou, color="tab:red", linestyle="--",
               label="aggregate %.3f" % aggregate_miou)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(["fold %d" % i for i in xs])
    ax.set_ylabel("validation mIoU")
    ax.set_ylim(0.0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
