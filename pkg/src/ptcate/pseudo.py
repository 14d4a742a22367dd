"""Pseudo-outcomes whose conditional mean given X is the CATE."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from . import datagen
from .datagen import Dataset, DGPSpec, Sample
from .nuisance import NuisanceSet, oracle_nuisance


class PseudoOutcomeKind(str, enum.Enum):
    PI = "PI"
    RA = "RA"
    IPW = "IPW"
    DR = "DR"

    @classmethod
    def parse(cls, value) -> "PseudoOutcomeKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown pseudo-outcome kind {value!r}; expected one of PI, RA, IPW, DR") from None


def pseudo_outcomes(kind, mu1, mu0, prop, a, y) -> np.ndarray:
    """Vectorised pseudo-outcome transform given evaluated nuisances."""
    kind = PseudoOutcomeKind.parse(kind)
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind is PseudoOutcomeKind.PI:
        return mu1 - mu0
    if kind is PseudoOutcomeKind.RA:
        return a * (y - mu0) + (1.0 - a) * (mu1 - y)
    w = prop * (1.0 - prop)
    if kind is PseudoOutcomeKind.IPW:
        return (a - prop) * y / w
    mu_a = np.where(a == 1, mu1, mu0)
    return mu1 - mu0 + (a - prop) * (y - mu_a) / w


def pseudo_outcome(kind, nuis: NuisanceSet, sample: Sample) -> float:
    if sample.a not in (0, 1):
        raise ValueError("treatment must be 0 or 1")
    x = np.atleast_2d(np.asarray(sample.x, dtype=float))
    mu1, mu0, p = nuis.evaluate(x)
    if not 0 < p[0] < 1:
        raise ValueError(f"propensity {p[0]} outside (0, 1)")
    return float(pseudo_outcomes(kind, mu1, mu0, p, [sample.a], [sample.y])[0])


@dataclass
class PseudoDataset:
    X: np.ndarray
    y_pseudo: np.ndarray
    kind: PseudoOutcomeKind
    nuisance_provenance: str

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "PseudoDataset":
        return PseudoDataset(self.X[idx], self.y_pseudo[idx], self.kind, self.nuisance_provenance)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{j}" for j in range(self.X.shape[1])] + ["y_pseudo", "kind"])
            for x, yp in zip(self.X, self.y_pseudo):
                w.writerow([repr(float(v)) for v in x] + [repr(float(yp)), self.kind.value])


def build_pseudo_dataset(kind, nuis: NuisanceSet, data: Dataset) -> PseudoDataset:
    kind = PseudoOutcomeKind.parse(kind)
    if len(data) == 0:
        return PseudoDataset(data.X.copy(), np.empty(0), kind, nuis.provenance)
    mu1, mu0, p = nuis.evaluate(data.X)
    if not np.all((p > 0) & (p < 1)):
        raise ValueError("propensity outside (0, 1); clamp it before building pseudo-outcomes")
    y_pseudo = pseudo_outcomes(kind, mu1, mu0, p, data.a, data.y)
    if not np.all(np.isfinite(y_pseudo)):
        raise FloatingPointError("non-finite pseudo-outcome")
    return PseudoDataset(data.X.copy(), y_pseudo, kind, nuis.provenance)


@dataclass
class ConsistencyReport:
    kind: PseudoOutcomeKind
    dgp: str
    n: int
    bin_edges: np.ndarray
    counts: np.ndarray
    z: np.ndarray            # NaN for bins flagged as too small
    center_deviation: np.ndarray  # mean pseudo-outcome minus tau(bin centre)
    tau_spread: np.ndarray   # max - min of tau over the rows in each bin
    min_count: int

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero(self.counts < self.min_count)

    @property
    def max_abs_z(self) -> float:
        z = self.z[np.isfinite(self.z)]
        return float(np.max(np.abs(z))) if z.size else float("nan")


def conditional_mean_check(
    kind, spec: DGPSpec, n: int, n_bins: int = 20, seed: int = 0, min_count: int = 30,
) -> ConsistencyReport:
    """Monte Carlo check that binned pseudo-outcomes average to the CATE.

    Each bin's z-score is the mean of ``y_pseudo - tau(x)`` over its rows
    divided by the standard error of that difference, so the within-bin slope
    of tau does not bias the test. ``center_deviation`` keeps the cruder
    comparison against tau at the bin centre for reporting.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    kind = PseudoOutcomeKind.parse(kind)
    data = datagen.sample_dgp(spec, n, seed)
    pseudo = build_pseudo_dataset(kind, oracle_nuisance(spec), data)
    x = data.X[:, 0]
    resid = pseudo.y_pseudo - data.tau
    edges = np.linspace(*spec.support, n_bins + 1)
    which = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    counts = np.bincount(which, minlength=n_bins)
    z = np.full(n_bins, np.nan)
    dev = np.full(n_bins, np.nan)
    spread = np.full(n_bins, np.nan)
    for b in range(n_bins):
        rows = which == b
        if counts[b] == 0:
            continue
        dev[b] = pseudo.y_pseudo[rows].mean() - datagen.true_cate(spec, centers[b])
        spread[b] = np.ptp(data.tau[rows])
        if counts[b] < min_count:
            continue
        r = resid[rows]
        se = r.std(ddof=1) / np.sqrt(r.size)
        mean = r.mean()
        # PI with oracle nuisances has identically zero residuals
        z[b] = 0.0 if se == 0 and abs(mean) < 1e-12 else mean / se
    return ConsistencyReport(kind, spec.name, n, edges, counts, z, dev, spread, min_count)
