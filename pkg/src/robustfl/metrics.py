"""Run artifacts on disk and the analyses computed from them.

``metrics.csv`` is wide: ``round, test_accuracy, train_loss`` followed by an
``eta_k, weight_k, n_k`` triple for every client ``k``.  Clients that did not
participate in a round leave their triple empty.  Floats are written with
``repr`` so every row parses back to the exact same values.  Wall time is
not written (it would break byte-for-byte reproducibility); it goes into
``summary.json`` instead.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .federation import ClientRecord, RoundMetrics

METRICS_FILE = "metrics.csv"
BOUNDS_FILE = "bounds.csv"
SUMMARY_FILE = "summary.json"
ETA_FILE = "eta_trajectory.csv"

BOUNDS_COLUMNS = ["round", "client", "radius", "upper", "lower", "upper_valid", "lower_valid"]


def _fmt(x: float) -> str:
    return repr(float(x))


def metrics_columns(num_clients: int) -> list[str]:
    cols = ["round", "test_accuracy", "train_loss"]
    for k in range(num_clients):
        cols += [f"eta_{k}", f"weight_{k}", f"n_{k}"]
    return cols


def metrics_csv_text(metrics: list[RoundMetrics], num_clients: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(metrics_columns(num_clients))
    for m in metrics:
        row = [str(m.round), _fmt(m.test_accuracy), _fmt(m.train_loss)] + [""] * (3 * num_clients)
        for rec in m.clients:
            base = 3 + 3 * rec.client
            row[base : base + 3] = [_fmt(rec.eta), _fmt(rec.weight), str(rec.n)]
        writer.writerow(row)
    return buf.getvalue()


def write_metrics_csv(path, metrics: list[RoundMetrics], num_clients: int) -> None:
    Path(path).write_text(metrics_csv_text(metrics, num_clients), encoding="utf-8")


def read_metrics_csv(path) -> list[RoundMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["round", "test_accuracy", "train_loss"] or (len(header) - 3) % 3:
            raise ValueError(f"{path}: unexpected metrics header {header[:6]}")
        num_clients = (len(header) - 3) // 3
        out = []
        for row in reader:
            records = []
            for k in range(num_clients):
                eta, weight, n = row[3 + 3 * k : 6 + 3 * k]
                if eta:
                    records.append(ClientRecord(k, float(eta), float(weight), int(n)))
            out.append(RoundMetrics(int(row[0]), float(row[1]), float(row[2]), records))
    return out


def write_bounds_csv(path, profiles) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BOUNDS_COLUMNS)
        for t, client, profile in profiles:
            for bp in profile.pairs:
                writer.writerow(
                    [t, client, _fmt(bp.radius), _fmt(bp.upper), _fmt(bp.lower), int(bp.upper_valid), int(bp.lower_valid)]
                )


def write_eta_trajectory(path, metrics: list[RoundMetrics], global_etas: list[float], num_clients: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "global_eta"] + [f"eta_{k}" for k in range(num_clients)])
        for m, g in zip(metrics, global_etas):
            row = [str(m.round), _fmt(g)] + [""] * num_clients
            for rec in m.clients:
                row[2 + rec.client] = _fmt(rec.eta)
            writer.writerow(row)


def default_window(num_rounds: int, fraction: float = 0.25) -> int:
    return max(1, int(math.ceil(fraction * num_rounds)))


def post_convergence_variance(metrics, window: int | None = None, fraction: float = 0.25) -> float:
    """Population variance of test accuracy over the last ``window`` rounds.

    ``metrics`` may be RoundMetrics or plain accuracies.
    """
    acc = [m.test_accuracy if isinstance(m, RoundMetrics) else float(m) for m in metrics]
    if window is None:
        if not acc:
            raise ValueError("no rounds recorded")
        window = default_window(len(acc), fraction)
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if window > len(acc):
        raise ValueError(f"window {window} exceeds the {len(acc)} recorded rounds")
    return float(np.var(np.asarray(acc[-window:], dtype=float)))


def window_mean_accuracy(metrics, window: int | None = None, fraction: float = 0.25) -> float:
    acc = [m.test_accuracy for m in metrics]
    if not acc:
        raise ValueError("no rounds recorded")
    window = window or default_window(len(acc), fraction)
    return float(np.mean(acc[-window:]))


def read_summary(run_dir) -> dict:
    return json.loads((Path(run_dir) / SUMMARY_FILE).read_text(encoding="utf-8"))


def _comparable(config: dict) -> dict:
    # Partition is what is being compared; output directories always differ.
    return {
        s: {k: v for k, v in keys.items() if (s, k) != ("experiment", "output_dir")}
        for s, keys in config.items()
        if s != "partition"
    }


def compare_bound_disagreements(iid_run, noniid_run, rel_tol: float = 1e-12) -> dict:
    """Compare final global-model disagreement of an IID and a Non-IID run.

    Arguments are run directories or already-loaded summary dicts.  Their
    configs must match in everything but the ``[partition]`` section.
    """
    iid = iid_run if isinstance(iid_run, dict) else read_summary(iid_run)
    non = noniid_run if isinstance(noniid_run, dict) else read_summary(noniid_run)
    a, b = _comparable(iid["config"]), _comparable(non["config"])
    if a != b:
        diff = sorted(
            f"{s}.{k}"
            for s in set(a) | set(b)
            for k in set(a.get(s, {})) | set(b.get(s, {}))
            if a.get(s, {}).get(k) != b.get(s, {}).get(k)
        )
        raise ValueError(f"runs differ outside [partition]: {', '.join(diff)}")
    iid_total = float(iid["final_global_eta"])
    non_total = float(non["final_global_eta"])
    floor = float(iid["config"]["bounds"]["eta_floor"])
    at_floor = iid_total <= floor and non_total <= floor
    if at_floor or math.isclose(iid_total, non_total, rel_tol=rel_tol, abs_tol=0.0):
        verdict = "inconclusive"
    elif iid_total < non_total:
        verdict = "iid_smaller"
    else:
        verdict = "noniid_smaller"
    return {
        "iid_total_eta": iid_total,
        "noniid_total_eta": non_total,
        "iid_accuracy": iid.get("final_accuracy"),
        "noniid_accuracy": non.get("final_accuracy"),
        "verdict": verdict,
    }
