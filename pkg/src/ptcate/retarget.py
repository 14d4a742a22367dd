"""Policy-targeted second-stage CATE learner.

Two networks are trained on a pseudo-outcome dataset: ``g`` (the retargeted
CATE) and ``alpha`` (a covariate-dependent sharpness, bounded below by the
floor ``a``). ``sigmoid(alpha(x) * g(x))`` is a smooth stand-in for the
treatment indicator ``1(g(x) > 0)``.

Training runs in three steps:

1. fit ``g`` by least squares on the pseudo-outcomes (``gamma = 0``);
2. with ``g`` frozen, fit ``alpha`` by a ``|y|``-weighted cross-entropy whose
   label is the sign of the pseudo-outcome, which drives ``alpha`` up where
   ``g`` already has the right sign and down to the floor where it does not;
3. with ``alpha`` frozen, refit ``g`` on
   ``(1 - gamma) * (y - g)^2 - gamma * y * sigmoid(alpha * g)``.

Steps 2 and 3 repeat ``iterations`` times.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import ndnet
from .ndnet import NetParams, NetSpec
from .pseudo import PseudoDataset, PseudoOutcomeKind

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PTConfig:
    gamma: float = 0.5
    alpha_floor: float = 0.1
    iterations: int = 1
    epochs_step1: int = 2000
    epochs_step2: int = 1000
    epochs_step3: int = 1000
    lr_g: float = 1e-3
    lr_alpha: float = 1e-2
    pseudo_kind: PseudoOutcomeKind = PseudoOutcomeKind.DR
    tanh_normalize_step2: bool = True
    inv_alpha_weight_step3: bool = True
    input_dim: int = 1
    g_hidden: tuple[int, ...] = ()
    alpha_hidden: tuple[int, ...] = (32, 32, 32)
    g_weight_decay: float = 0.0
    alpha_weight_clip_quantile: float | None = None
    batch_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "pseudo_kind", PseudoOutcomeKind.parse(self.pseudo_kind))
        object.__setattr__(self, "g_hidden", tuple(self.g_hidden))
        object.__setattr__(self, "alpha_hidden", tuple(self.alpha_hidden))
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.alpha_floor > 0:
            raise ValueError("alpha_floor must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if min(self.epochs_step1, self.epochs_step2, self.epochs_step3) < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.g_weight_decay < 0:
            raise ValueError("g_weight_decay must be nonnegative")
        q = self.alpha_weight_clip_quantile
        if q is not None and not 0 < q <= 1:
            raise ValueError("alpha_weight_clip_quantile must lie in (0, 1]")

    @property
    def g_spec(self) -> NetSpec:
        return NetSpec(self.input_dim, self.g_hidden, "tanh", "identity")

    @property
    def alpha_spec(self) -> NetSpec:
        return NetSpec(self.input_dim, self.alpha_hidden, "relu", "softplus_plus_a", self.alpha_floor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pseudo_kind"] = self.pseudo_kind.value
        d["g_hidden"] = list(self.g_hidden)
        d["alpha_hidden"] = list(self.alpha_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PTConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown PTConfig fields: {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------- losses

def _check_lengths(*arrays):
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("loss inputs must have equal length")
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("loss inputs must be finite")


def loss_g_closure(alpha_out, y_pseudo, gamma: float, inv_alpha_weight: bool = False) -> ndnet.LossClosure:
    """Retargeting loss as a function of the ``g`` output (``alpha`` frozen)."""
    y = np.asarray(y_pseudo, dtype=float)
    if gamma == 0.0:
        # the policy term vanishes; share the plain regression path exactly
        return ndnet.mse_loss(y)
    alpha = np.asarray(alpha_out, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    w = 1.0 / alpha if inv_alpha_weight else np.ones_like(alpha)

    def loss(g):
        _check_lengths(g, alpha, y)
        n = y.size
        r = g - y
        s = expit(alpha * g)
        value = (1.0 - gamma) * np.mean(r**2) - gamma * np.mean(w * y * s)
        grad = ((1.0 - gamma) * 2.0 * r - gamma * w * y * s * (1.0 - s) * alpha) / n
        return float(value), grad

    return loss


def loss_g(g_out, alpha_out, y_pseudo, gamma: float, inv_alpha_weight: bool = False) -> float:
    g_out = np.asarray(g_out, dtype=float)
    _check_lengths(g_out, np.asarray(alpha_out, dtype=float), np.asarray(y_pseudo, dtype=float))
    return loss_g_closure(alpha_out, y_pseudo, gamma, inv_alpha_weight)(g_out)[0]


def _alpha_weights(y, clip_quantile):
    w = np.abs(y)
    if clip_quantile is not None and w.size:
        w = np.minimum(w, np.quantile(w, clip_quantile))
    return w


def loss_alpha_closure(g_out, y_pseudo, clip_quantile: float | None = None) -> ndnet.LossClosure:
    """``|y|``-weighted cross-entropy of ``sigmoid(alpha * g)`` against ``1(y > 0)``."""
    g = np.asarray(g_out, dtype=float)
    y = np.asarray(y_pseudo, dtype=float)
    weight = _alpha_weights(y, clip_quantile)
    label = (y > 0).astype(float)
    # y == 0 rows carry zero weight, so their label is irrelevant

    def loss(alpha):
        _check_lengths(alpha, g, y)
        u = alpha * g
        # -log sigmoid(u) for label 1, -log(1 - sigmoid(u)) = -log sigmoid(-u) for label 0
        signed = np.where(label == 1.0, u, -u)
        nll = np.logaddexp(0.0, -signed)
        value = np.mean(weight * nll)
        grad = weight * (expit(u) - label) * g / y.size
        return float(value), grad

    return loss


def loss_alpha(alpha_out, g_out, y_pseudo, clip_quantile: float | None = None) -> float:
    alpha_out = np.asarray(alpha_out, dtype=float)
    _check_lengths(alpha_out, np.asarray(g_out, dtype=float), np.asarray(y_pseudo, dtype=float))
    return loss_alpha_closure(g_out, y_pseudo, clip_quantile)(alpha_out)[0]


def policy_objective(g_out, y_pseudo, gamma: float) -> float:
    """Unsmoothed objective with the hard indicator ``1(g > 0)``."""
    g = np.asarray(g_out, dtype=float)
    y = np.asarray(y_pseudo, dtype=float)
    return float((1.0 - gamma) * np.mean((y - g) ** 2) - gamma * np.mean((g > 0) * y))


# ----------------------------------------------------------------- model

@dataclass
class PTModel:
    g_params: NetParams
    alpha_params: NetParams
    config: PTConfig
    training_log: list = field(default_factory=list)
    seed: int = 0
    # optimiser state of g, carried from step 1 into step 3
    g_state: ndnet.AdamState | None = field(default=None, repr=False, compare=False)
    g_rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def predict_cate(self, X) -> np.ndarray:
        return ndnet.net_forward(self.g_params, self.config.g_spec, _as_matrix(X))

    def predict_alpha(self, X) -> np.ndarray:
        return ndnet.net_forward(self.alpha_params, self.config.alpha_spec, _as_matrix(X))

    __call__ = predict_cate

    def to_json(self) -> str:
        return json.dumps({
            "version": MODEL_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "g_params": ndnet.params_to_json(self.g_params),
            "alpha_params": ndnet.params_to_json(self.alpha_params),
            "training_log": self.training_log,
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text: str) -> "PTModel":
        d = json.loads(text)
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('version')!r}")
        return cls(
            g_params=ndnet.params_from_json(d["g_params"]),
            alpha_params=ndnet.params_from_json(d["alpha_params"]),
            config=PTConfig.from_dict(d["config"]),
            training_log=d.get("training_log", []),
            seed=d.get("seed", 0),
        )


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _log_losses(model: PTModel, step: int, iteration: int, losses) -> None:
    model.training_log.extend(
        {"step": step, "iteration": iteration, "epoch": e, "loss": float(v)} for e, v in enumerate(losses)
    )


def _seeds(seed: int) -> tuple[int, int, int]:
    g_seed, alpha_seed, batch_seed = np.random.SeedSequence(seed).generate_state(3)
    return int(g_seed), int(alpha_seed), int(batch_seed)


def init_model(cfg: PTConfig, seed: int) -> PTModel:
    g_seed, alpha_seed, _ = _seeds(seed)
    return PTModel(ndnet.net_init(cfg.g_spec, g_seed), ndnet.net_init(cfg.alpha_spec, alpha_seed), cfg, seed=seed)


def step1_init(pseudo: PseudoDataset, cfg: PTConfig, seed: int) -> PTModel:
    """Least-squares fit of ``g`` to the pseudo-outcomes."""
    model = init_model(cfg, seed)
    rng = np.random.default_rng(_seeds(seed)[2])
    y = pseudo.y_pseudo
    alpha_out = model.predict_alpha(pseudo.X)
    res = ndnet.train(
        model.g_params, cfg.g_spec, pseudo.X,
        lambda idx: loss_g_closure(alpha_out[idx], y[idx], 0.0), cfg.epochs_step1,
        learning_rate=cfg.lr_g, weight_decay=cfg.g_weight_decay, batch_size=cfg.batch_size, rng=rng,
    )
    model.g_params, model.g_state, model.g_rng = res.params, res.state, res.rng
    _log_losses(model, 1, 0, res.losses)
    return model


def step2_alpha(model: PTModel, pseudo: PseudoDataset, cfg: PTConfig, iteration: int = 1) -> PTModel:
    """Fit the sharpness network with ``g`` frozen."""
    g_out = model.predict_cate(pseudo.X)
    if cfg.tanh_normalize_step2:
        g_out = np.tanh(g_out)
    y = pseudo.y_pseudo
    res = ndnet.train(
        model.alpha_params, cfg.alpha_spec, pseudo.X,
        lambda idx: loss_alpha_closure(g_out[idx], y[idx], cfg.alpha_weight_clip_quantile),
        cfg.epochs_step2, learning_rate=cfg.lr_alpha, batch_size=cfg.batch_size,
        rng=np.random.default_rng([_seeds(model.seed)[2], iteration]),
    )
    out = replace(model, alpha_params=res.params, training_log=list(model.training_log))
    _log_losses(out, 2, iteration, res.losses)
    return out


def step3_refine(model: PTModel, pseudo: PseudoDataset, cfg: PTConfig, iteration: int = 1) -> PTModel:
    """Refit ``g`` on the retargeting loss with ``alpha`` frozen."""
    alpha_out = model.predict_alpha(pseudo.X)
    y = pseudo.y_pseudo
    res = ndnet.train(
        model.g_params, cfg.g_spec, pseudo.X,
        lambda idx: loss_g_closure(alpha_out[idx], y[idx], cfg.gamma, cfg.inv_alpha_weight_step3),
        cfg.epochs_step3, learning_rate=cfg.lr_g, weight_decay=(1.0 - cfg.gamma) * cfg.g_weight_decay,
        batch_size=cfg.batch_size,
        state=model.g_state, rng=copy.deepcopy(model.g_rng),
    )
    out = replace(model, g_params=res.params, g_state=res.state, g_rng=res.rng,
                  training_log=list(model.training_log))
    _log_losses(out, 3, iteration, res.losses)
    return out


def train_ptcate(pseudo: PseudoDataset, cfg: PTConfig, seed: int, init: PTModel | None = None) -> PTModel:
    """Step 1 once, then ``cfg.iterations`` rounds of steps 2 and 3.

    ``init`` may carry a finished step-1 model (from :func:`step1_init` with the
    same pseudo dataset and seed) so a gamma sweep pays for step 1 once.
    """
    if init is None:
        model = step1_init(pseudo, cfg, seed)
    else:
        model = replace(init, config=cfg, training_log=list(init.training_log))
    for it in range(1, cfg.iterations + 1):
        if cfg.gamma == 0.0:
            # alpha does not enter the gamma = 0 loss
            model.training_log.append({"step": 2, "iteration": it, "skipped": "gamma=0"})
        else:
            model = step2_alpha(model, pseudo, cfg, it)
        model = step3_refine(model, pseudo, cfg, it)
    return model


def fit_two_stage(pseudo: PseudoDataset, cfg: PTConfig, seed: int) -> PTModel:
    """Plain least-squares second stage with the same epoch budget as ``g`` in PT-CATE."""
    model = init_model(cfg, seed)
    rng = np.random.default_rng(_seeds(seed)[2])
    y = pseudo.y_pseudo
    res = ndnet.train(
        model.g_params, cfg.g_spec, pseudo.X, lambda idx: ndnet.mse_loss(y[idx]),
        cfg.epochs_step1 + cfg.iterations * cfg.epochs_step3,
        learning_rate=cfg.lr_g, weight_decay=cfg.g_weight_decay, batch_size=cfg.batch_size, rng=rng,
    )
    model.g_params, model.g_state = res.params, res.state
    _log_losses(model, 1, 0, res.losses)
    return model


def select_alpha_floor(
    candidates, train_pseudo: PseudoDataset, val_pseudo: PseudoDataset, cfg: PTConfig, seed: int,
) -> float:
    """Pick the floor whose model minimises the hard-indicator objective on validation data.

    Ties go to the smallest floor.
    """
    candidates = sorted(float(c) for c in candidates)
    if not candidates:
        raise ValueError("no alpha floor candidates")
    if len(candidates) == 1:
        return candidates[0]
    init = step1_init(train_pseudo, cfg, seed)
    best, best_loss = None, np.inf
    for a in candidates:
        c = replace(cfg, alpha_floor=a)
        start = replace(init, alpha_params=ndnet.net_init(c.alpha_spec, _seeds(seed)[1]))
        model = train_ptcate(train_pseudo, c, seed, init=start)
        val = policy_objective(model.predict_cate(val_pseudo.X), val_pseudo.y_pseudo, cfg.gamma)
        log.info("alpha floor %g: validation objective %.6g", a, val)
        if val < best_loss:
            best, best_loss = a, val
    return best


@dataclass(frozen=True)
class StochasticPolicy:
    model: PTModel

    def __call__(self, X) -> np.ndarray:
        X = _as_matrix(X)
        return expit(self.model.predict_alpha(X) * self.model.predict_cate(X))


def stochastic_policy(model: PTModel) -> StochasticPolicy:
    return StochasticPolicy(model)


def threshold_policy(g) -> callable:
    """Deterministic policy ``1(g(x) > 0)``; ties at zero go untreated."""
    return lambda X: (np.asarray(g(X)) > 0).astype(float)
