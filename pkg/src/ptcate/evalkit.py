"""Accuracy and decision-quality metrics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .datagen import Dataset
from .nuisance import NuisanceSet

METRIC_COLUMNS = ("gamma", "seed", "kind", "pehe", "policy_loss", "policy_value")


def _predictions(g, X) -> np.ndarray:
    out = g(X) if callable(g) else g
    return np.asarray(out, dtype=float).ravel()


def pehe(g, tau_ref, X, root: bool = False) -> float:
    """Mean squared difference between ``g`` and the reference CATE.

    ``g`` is a callable on ``X`` or an array of predictions. ``root=True``
    returns the square root instead.
    """
    tau_ref = np.asarray(tau_ref, dtype=float).ravel()
    if tau_ref.size == 0:
        raise ValueError("empty evaluation set")
    err = float(np.mean((_predictions(g, X) - tau_ref) ** 2))
    return float(np.sqrt(err)) if root else err


def policy_loss(g, tau_ref, X) -> float:
    """Negative mean payoff of treating exactly the rows with ``g > 0``."""
    tau_ref = np.asarray(tau_ref, dtype=float).ravel()
    if tau_ref.size == 0:
        raise ValueError("empty evaluation set")
    return -float(np.mean((_predictions(g, X) > 0) * tau_ref))


def dr_scores(nuis: NuisanceSet, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Arm-wise augmented IPW scores; their difference is the DR pseudo-outcome."""
    mu1, mu0, p = nuis.evaluate(data.X)
    a, y = data.a, data.y
    psi1 = mu1 + (a == 1) * (y - mu1) / p
    psi0 = mu0 + (a == 0) * (y - mu0) / (1.0 - p)
    return psi1, psi0


def dr_policy_value(policy, nuis: NuisanceSet, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    psi1, psi0 = dr_scores(nuis, data)
    pi = np.clip(_predictions(policy, data.X), 0.0, 1.0)
    return float(np.mean(pi * psi1 + (1.0 - pi) * psi0))


@dataclass
class MetricReport:
    gamma: float
    seed: int
    kind: str
    pehe: float
    policy_loss: float
    policy_value: float
    n_eval: int

    def __post_init__(self):
        if self.pehe < 0:
            raise ValueError("pehe must be nonnegative")
        if self.n_eval <= 0:
            raise ValueError("n_eval must be positive")

    def row(self) -> list:
        return [self.gamma, self.seed, self.kind, self.pehe, self.policy_loss, self.policy_value]


def write_metrics_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["gamma"] = float(r["gamma"])
        r["seed"] = int(r["seed"])
        for k in ("pehe", "policy_loss", "policy_value"):
            r[k] = float(r[k])
    return rows


@dataclass
class ImprovementRow:
    label: str
    mean: float
    std: float
    n_seeds: int
    improvement_abs: float | None = None
    improvement_pct: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def improvement_table(rows, obs_value: float, obs_label: str = "Obs. policy") -> list[ImprovementRow]:
    """Mean and spread of per-seed policy values against the observational policy.

    The standard deviation uses ``ddof=0`` so a single seed reports 0.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to tabulate")
    out = [ImprovementRow(obs_label, float(obs_value), 0.0, 1)]
    for label, values in rows:
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise ValueError(f"row {label!r} has no seeds")
        mean = float(values.mean())
        out.append(ImprovementRow(
            label, mean, float(values.std()), int(values.size),
            improvement_abs=mean - obs_value,
            improvement_pct=100.0 * (mean - obs_value) / obs_value,
        ))
    return out


def format_improvement_table(table: list[ImprovementRow], scale: float = 10.0) -> str:
    lines = [f"{'row':<14}{'policy value':>20}{'improv.':>10}{'improv. (%)':>13}"]
    for r in table:
        pv = f"{r.mean * scale:.3f} +- {r.std * scale:.3f}"
        if r.improvement_abs is None:
            lines.append(f"{r.label:<14}{pv:>20}{'-':>10}{'-':>13}")
        else:
            lines.append(f"{r.label:<14}{pv:>20}{r.improvement_abs:>10.3f}{r.improvement_pct:>13.3f}")
    lines.append(f"(policy values x{scale:g})")
    return "\n".join(lines)
