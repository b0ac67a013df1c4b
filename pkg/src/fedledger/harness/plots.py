"""Plot-ready CSV emission, one file per figure family.

No rendering here; these are stable-schema inputs for external plotting.
Column schemas are documented in the README and covered by tests, so a
downstream notebook can rely on them.
"""

from __future__ import annotations

import os

import numpy as np

from .config import CostParams
from .costs import estimate_time_cost

OVERHEAD_EPOCH_GRID = (1, 10, 50, 100, 200)


class EmptyMetrics(ValueError):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def emit_plots_data(
    metrics,
    out_dir: str,
    client_ids: list[str],
    n_classes: int,
    cost_params: CostParams,
    certificate=None,
) -> dict[str, str]:
    """Write loss_curves.csv, accuracy_curves.csv, per_class.csv, and
    overhead_vs_epochs.csv under out_dir; returns name -> path."""
    if not metrics:
        raise EmptyMetrics("no metrics records to plot")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def client_cell(record, cid, idx):
        entry = record.per_client.get(cid)
        return None if entry is None else entry[idx]

    path = os.path.join(out_dir, "loss_curves.csv")
    _write_csv(
        path,
        ["round", "global_loss"] + [f"loss_{cid}" for cid in client_ids],
        [
            [r.round_no, r.global_loss] + [client_cell(r, cid, 0) for cid in client_ids]
            for r in metrics
        ],
    )
    paths["loss_curves"] = path

    path = os.path.join(out_dir, "accuracy_curves.csv")
    _write_csv(
        path,
        ["round", "train_accuracy", "test_accuracy"] + [f"acc_{cid}" for cid in client_ids],
        [
            [r.round_no, r.train_accuracy, r.test_accuracy]
            + [client_cell(r, cid, 1) for cid in client_ids]
            for r in metrics
        ],
    )
    paths["accuracy_curves"] = path

    final = metrics[-1]
    before = certificate.per_class_accuracy_before if certificate else None
    after = certificate.per_class_accuracy_after if certificate else None
    path = os.path.join(out_dir, "per_class.csv")
    _write_csv(
        path,
        ["class", "accuracy_final", "accuracy_before", "accuracy_after"],
        [
            [
                c,
                final.per_class[c],
                None if before is None else before[c],
                None if after is None else after[c],
            ]
            for c in range(n_classes)
        ],
    )
    paths["per_class"] = path

    path = os.path.join(out_dir, "overhead_vs_epochs.csv")
    rows = []
    for epochs in OVERHEAD_EPOCH_GRID:
        est = estimate_time_cost(epochs, cost_params)
        rows.append([epochs, est.normal, est.ours, est.overhead, est.overhead_ratio])
    _write_csv(path, ["epochs", "normal", "ours", "overhead", "overhead_ratio"], rows)
    paths["overhead_vs_epochs"] = path
    return paths
