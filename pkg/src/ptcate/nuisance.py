"""Stage-1 nuisance estimation: response surfaces and propensity score."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import datagen, ndnet
from .datagen import Dataset, DGPSpec

Evaluable = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NuisanceFitConfig:
    hidden_dims: tuple[int, ...] = (32, 32, 32)
    epochs: int = 2000
    learning_rate: float = 1e-2
    batch_size: int | None = None
    sample_splitting: bool = False
    p_min: float = 0.01
    known_propensity: bool = False

    def __post_init__(self):
        if not 0 < self.p_min < 0.5:
            raise ValueError("p_min must lie in (0, 0.5)")

    def net_spec(self, input_dim: int, output_activation: str) -> ndnet.NetSpec:
        return ndnet.NetSpec(input_dim, tuple(self.hidden_dims), "tanh", output_activation)


@dataclass
class FittedNet:
    """A trained network usable as a function of the covariates."""

    spec: ndnet.NetSpec
    params: ndnet.NetParams
    clamp: tuple[float, float] | None = None

    def __call__(self, X) -> np.ndarray:
        out = ndnet.net_forward(self.params, self.spec, X)
        if self.clamp is not None:
            out = np.clip(out, *self.clamp)
        return out

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "params": ndnet.params_to_json(self.params), "clamp": self.clamp}

    @classmethod
    def from_dict(cls, d: dict) -> "FittedNet":
        clamp = tuple(d["clamp"]) if d.get("clamp") is not None else None
        return cls(ndnet.NetSpec.from_dict(d["spec"]), ndnet.params_from_json(d["params"]), clamp)


@dataclass
class NuisanceSet:
    mu1: Evaluable
    mu0: Evaluable
    prop: Evaluable
    provenance: str = "learned"
    # rows of the training data reserved for the second stage under sample splitting
    holdout: np.ndarray | None = field(default=None, repr=False)

    def evaluate(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mu1, mu0, p = (np.asarray(f(X), dtype=float) for f in (self.mu1, self.mu0, self.prop))
        for name, v in (("mu1", mu1), ("mu0", mu0), ("prop", p)):
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite nuisance evaluation in {name}")
        return mu1, mu0, p

    def to_json(self) -> str:
        parts = {}
        for name in ("mu1", "mu0", "prop"):
            f = getattr(self, name)
            if not isinstance(f, FittedNet):
                raise TypeError(f"{name} is not a fitted network and cannot be serialised")
            parts[name] = f.to_dict()
        return json.dumps({"version": 1, "provenance": self.provenance, **parts})

    @classmethod
    def from_json(cls, text: str) -> "NuisanceSet":
        d = json.loads(text)
        if d.get("version") != 1:
            raise ValueError(f"unsupported nuisance dump version {d.get('version')!r}")
        return cls(*(FittedNet.from_dict(d[k]) for k in ("mu1", "mu0", "prop")), provenance=d["provenance"])


def fit_response(data: Dataset, arm: int, cfg: NuisanceFitConfig, seed: int = 0) -> FittedNet:
    mask = data.a == arm
    if not mask.any():
        raise ValueError(f"no rows with treatment {arm}")
    X, y = data.X[mask], data.y[mask]
    spec = cfg.net_spec(data.dim, "identity")
    params = ndnet.net_init(spec, seed)
    res = ndnet.train(
        params, spec, X, lambda idx: ndnet.mse_loss(y[idx]), cfg.epochs,
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, seed=seed,
    )
    return FittedNet(spec, res.params)


def fit_propensity(data: Dataset, cfg: NuisanceFitConfig, seed: int = 0) -> FittedNet:
    if len(np.unique(data.a)) < 2:
        raise ValueError("propensity fit needs both treatment values")
    spec = cfg.net_spec(data.dim, "sigmoid")
    params = ndnet.net_init(spec, seed)
    labels = data.a.astype(float)
    res = ndnet.train(
        params, spec, data.X, lambda idx: ndnet.bce_loss(labels[idx]), cfg.epochs,
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, seed=seed,
    )
    return FittedNet(spec, res.params, clamp=(cfg.p_min, 1.0 - cfg.p_min))


def oracle_nuisance(spec: DGPSpec) -> NuisanceSet:
    if not isinstance(spec, DGPSpec):
        raise TypeError("oracle nuisances exist only for synthetic DGPs")

    def first(X):
        X = np.asarray(X, dtype=float)
        return X[:, 0] if X.ndim == 2 else X

    return NuisanceSet(
        mu1=lambda X: datagen.true_response(spec, 1, first(X)),
        mu0=lambda X: datagen.true_response(spec, 0, first(X)),
        prop=lambda X: datagen.true_propensity(spec, first(X)),
        provenance="oracle",
    )


def mixed(learned: NuisanceSet, oracle: NuisanceSet, *, prop_from_oracle: bool = True) -> NuisanceSet:
    """Combine learned response surfaces with the oracle propensity (or vice versa)."""
    if prop_from_oracle:
        return NuisanceSet(learned.mu1, learned.mu0, oracle.prop, "mixed", learned.holdout)
    return NuisanceSet(oracle.mu1, oracle.mu0, learned.prop, "mixed", learned.holdout)


def fit_all(data: Dataset, cfg: NuisanceFitConfig, seed: int = 0) -> NuisanceSet:
    """Fit all three nuisances.

    With ``sample_splitting`` the nets see a random half of ``data``; the other
    half is recorded in ``holdout`` for pseudo-outcome construction.
    """
    holdout = None
    fit_data = data
    if cfg.sample_splitting:
        perm = np.random.default_rng([seed, 1]).permutation(len(data))
        half = len(data) // 2
        fit_data = data.subset(np.sort(perm[:half]))
        holdout = np.sort(perm[half:])
    mu1 = fit_response(fit_data, 1, cfg, seed=seed * 3 + 1)
    mu0 = fit_response(fit_data, 0, cfg, seed=seed * 3 + 2)
    prop = fit_propensity(fit_data, cfg, seed=seed * 3 + 3)
    return NuisanceSet(mu1, mu0, prop, "learned", holdout)
