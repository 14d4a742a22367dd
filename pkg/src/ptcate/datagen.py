"""Synthetic data-generating processes, dataset splits and Hillstrom ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

DGP_NAMES = ("fig1_piecewise", "fig2_sigmoid", "settingA", "settingB")
# root of 2 sigmoid(10 x) = 0.5
SIGMOID_ROOT = math.log(1.0 / 3.0) / 10.0


@dataclass(frozen=True)
class DGPSpec:
    name: str
    support: tuple[float, float] = (-0.5, 0.5)
    noise_sd: float = 0.01
    propensity: str | None = None  # "constant" or "logistic"; None picks the DGP default
    n_train: int = 1000
    n_val: int = 0
    n_test: int = 3000

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise ValueError(f"unknown DGP {self.name!r}; expected one of {DGP_NAMES}")
        object.__setattr__(self, "support", tuple(float(s) for s in self.support))
        if not self.support[0] < self.support[1]:
            raise ValueError(f"empty covariate support {self.support}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.propensity is None:
            object.__setattr__(self, "propensity", "logistic" if self.name == "settingB" else "constant")
        if self.propensity not in ("constant", "logistic"):
            raise ValueError(f"unknown propensity {self.propensity!r}")

    @property
    def response_family(self) -> str:
        return "sigmoid" if self.name in ("fig2_sigmoid", "settingA") else "piecewise"


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    a: int
    y: float
    true_cate: float | None = None
    true_propensity: float | None = None


@dataclass
class Dataset:
    """Column-oriented (X, A, Y) data with optional ground truth."""

    X: np.ndarray
    a: np.ndarray
    y: np.ndarray
    tau: np.ndarray | None = None
    pi_b: np.ndarray | None = None
    feature_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.a = np.asarray(self.a).astype(int)
        self.y = np.asarray(self.y, dtype=float)
        n = self.X.shape[0]
        if self.a.shape != (n,) or self.y.shape != (n,):
            raise ValueError("X, a and y must have the same number of rows")
        if n and not np.isin(self.a, (0, 1)).all():
            raise ValueError("treatment must be binary")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("outcomes must be finite")
        if self.pi_b is not None:
            self.pi_b = np.asarray(self.pi_b, dtype=float)
            if n and not np.all((self.pi_b > 0) & (self.pi_b < 1)):
                raise ValueError("propensity must lie strictly inside (0, 1)")
        if self.tau is not None:
            self.tau = np.asarray(self.tau, dtype=float)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            x=self.X[i],
            a=int(self.a[i]),
            y=float(self.y[i]),
            true_cate=None if self.tau is None else float(self.tau[i]),
            true_propensity=None if self.pi_b is None else float(self.pi_b[i]),
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            X=self.X[idx],
            a=self.a[idx],
            y=self.y[idx],
            tau=None if self.tau is None else self.tau[idx],
            pi_b=None if self.pi_b is None else self.pi_b[idx],
            feature_names=self.feature_names,
            meta=dict(self.meta),
        )

    def columns(self) -> list[str]:
        cols = [f"x_{j}" for j in range(self.dim)] + ["a", "y"]
        if self.tau is not None:
            cols.append("tau")
        if self.pi_b is not None:
            cols.append("pi_b")
        return cols

    def to_csv(self, path) -> None:
        extras = [c for c in (self.tau, self.pi_b) if c is not None]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for i in range(len(self)):
                row = [repr(float(v)) for v in self.X[i]]
                row += [str(int(self.a[i])), repr(float(self.y[i]))]
                row += [repr(float(c[i])) for c in extras]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader if r]
        table = np.asarray(rows, dtype=float).reshape(-1, len(header))
        xcols = [j for j, c in enumerate(header) if c.startswith("x_")]
        col = {c: j for j, c in enumerate(header)}
        return cls(
            X=table[:, xcols],
            a=table[:, col["a"]],
            y=table[:, col["y"]],
            tau=table[:, col["tau"]] if "tau" in col else None,
            pi_b=table[:, col["pi_b"]] if "pi_b" in col else None,
        )


def _sigmoid_response(x):
    return 2.0 * expit(10.0 * x) - 0.5


def _piecewise_response(x):
    x = np.asarray(x, dtype=float)
    left = 0.6 * np.sin(8.0 * (x + 0.25)) + 0.3
    middle = 2.0 * expit(10.0 * (x + 2.0)) - 0.5
    right = 0.5 * np.sin(10.0 * (x - 0.25) + 1.5)
    return np.where(x < -0.25, left, np.where(x <= 0.25, middle, right))


def true_response(spec: DGPSpec, a, x):
    """Exact mean outcome of arm ``a`` at covariate ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    base = _sigmoid_response(x) if spec.response_family == "sigmoid" else _piecewise_response(x)
    out = np.asarray(a, dtype=float) * base
    return float(out) if out.ndim == 0 else out


def true_cate(spec: DGPSpec, x):
    return true_response(spec, 1, x) - true_response(spec, 0, x)


def true_propensity(spec: DGPSpec, x):
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, 0.5) if spec.propensity == "constant" else expit(0.1 * x)
    return float(out) if out.ndim == 0 else out


def sample_dgp(spec: DGPSpec, n: int, seed: int) -> Dataset:
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = spec.support
    x = rng.uniform(lo, hi, size=n)
    pi = true_propensity(spec, x)
    a = (rng.uniform(size=n) < pi).astype(int)
    mu = true_response(spec, a, x)
    y = mu + spec.noise_sd * rng.standard_normal(n)
    return Dataset(X=x[:, None], a=a, y=y, tau=true_cate(spec, x), pi_b=pi, meta={"dgp": spec.name, "seed": seed})


def sample_splits(spec: DGPSpec, seed: int) -> tuple[Dataset, Dataset | None, Dataset]:
    """Independent train / validation / test draws of the configured sizes."""
    ss = np.random.SeedSequence(seed)
    s_train, s_val, s_test = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
    train = sample_dgp(spec, spec.n_train, s_train)
    val = sample_dgp(spec, spec.n_val, s_val) if spec.n_val > 0 else None
    test = sample_dgp(spec, spec.n_test, s_test)
    return train, val, test


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.5, 0.2, 0.3)
    seed: int = 0

    def __post_init__(self):
        f = tuple(float(v) for v in self.fractions)
        object.__setattr__(self, "fractions", f)
        if len(f) != 3 or any(v < 0 or v > 1 for v in f) or not math.isclose(sum(f), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be three values in [0, 1] summing to 1, got {f}")


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    n = len(data)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(spec.fractions[0] * n))
    n_val = int(round(spec.fractions[1] * n))
    n_val = min(n_val, n - n_train)
    cuts = (n_train, n_train + n_val)
    return data.subset(perm[:cuts[0]]), data.subset(perm[cuts[0]:cuts[1]]), data.subset(perm[cuts[1]:])


# ---------------------------------------------------------------- Hillstrom

HILLSTROM_NUMERIC = ("recency", "history", "mens", "womens", "newbie")
HILLSTROM_CATEGORICAL = ("history_segment", "zip_code", "channel")
HILLSTROM_REQUIRED = HILLSTROM_NUMERIC + HILLSTROM_CATEGORICAL + ("segment", "visit")
SEGMENT_TREATED = "Mens E-Mail"
SEGMENT_CONTROL = "No E-Mail"
SEGMENT_DROPPED = "Womens E-Mail"


class HillstromFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessOptions:
    outcome: str = "visit"
    one_hot: bool = True


def load_hillstrom(path, options: PreprocessOptions = PreprocessOptions()) -> Dataset:
    """Parse the public Hillstrom CSV into a men's-email vs no-email dataset.

    Categorical columns are one-hot encoded over their sorted distinct values,
    so the encoding does not depend on row order. Numeric columns are left on
    their raw scale; call :func:`standardize` once the training split is known.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in HILLSTROM_REQUIRED + (options.outcome,) if c not in header]
        if missing:
            raise HillstromFormatError(f"missing columns: {', '.join(sorted(set(missing)))}")
        numeric, cats, a, y = [], [], [], []
        bad = []
        for lineno, row in enumerate(reader, start=2):
            seg = (row.get("segment") or "").strip()
            if seg == SEGMENT_DROPPED:
                continue
            try:
                if seg not in (SEGMENT_TREATED, SEGMENT_CONTROL):
                    raise ValueError(f"unknown segment {seg!r}")
                num = [float(row[c]) for c in HILLSTROM_NUMERIC]
                out = float(row[options.outcome])
            except (TypeError, ValueError) as exc:
                bad.append(f"row {lineno}: {exc}")
                continue
            numeric.append(num)
            cats.append([(row[c] or "").strip() for c in HILLSTROM_CATEGORICAL])
            a.append(1 if seg == SEGMENT_TREATED else 0)
            y.append(out)
    if bad:
        shown = "; ".join(bad[:5])
        raise HillstromFormatError(f"{len(bad)} unparseable rows ({shown})")
    if not a:
        raise HillstromFormatError("empty result")

    names = list(HILLSTROM_NUMERIC)
    blocks = [np.asarray(numeric, dtype=float)]
    if options.one_hot:
        cats_arr = np.asarray(cats, dtype=object)
        for j, col in enumerate(HILLSTROM_CATEGORICAL):
            levels = sorted(set(cats_arr[:, j]))
            blocks.append((cats_arr[:, j][:, None] == np.asarray(levels, dtype=object)[None, :]).astype(float))
            names += [f"{col}={lvl}" for lvl in levels]
    X = np.hstack(blocks)
    return Dataset(X=X, a=np.asarray(a), y=np.asarray(y), feature_names=names, meta={"source": str(path)})


def standardize(train: Dataset, *others: Dataset, columns=None) -> tuple[Dataset, ...]:
    """Scale the given columns to zero mean / unit variance using training statistics.

    By default every non-binary column is scaled.
    """
    X = train.X
    if columns is None:
        columns = [j for j in range(X.shape[1]) if not np.isin(X[:, j], (0.0, 1.0)).all()]
    columns = list(columns)
    mean = X[:, columns].mean(axis=0)
    sd = X[:, columns].std(axis=0)
    sd[sd == 0] = 1.0
    out = []
    for d in (train, *others):
        d = d.subset(np.arange(len(d)))
        d.X[:, columns] = (d.X[:, columns] - mean) / sd
        d.meta["standardized_columns"] = columns
        out.append(d)
    return tuple(out)
