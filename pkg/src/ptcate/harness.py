"""Experiment orchestration: configs, gamma sweeps, Hillstrom runs, gradient checks."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__, datagen, evalkit, ndnet, nuisance, pseudo, retarget
from .datagen import DGPSpec, SplitSpec
from .evalkit import MetricReport
from .nuisance import NuisanceFitConfig
from .pseudo import PseudoOutcomeKind
from .retarget import PTConfig

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
DEFAULT_GAMMA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 0.98)
WORKERS_ENV = "PTCATE_WORKERS"
HILLSTROM_URL = "http://www.minethatdata.com/Kevin_Hillstrom_MineThatData_E-MailAnalytics_DataMiningChallenge_2008.03.20.csv"


class ConfigError(ValueError):
    pass


class DatasetNotBundledError(FileNotFoundError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    data: dict
    nuisance: NuisanceFitConfig
    oracle_nuisance: bool
    ptcate: PTConfig
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    pseudo_kinds: tuple[PseudoOutcomeKind, ...] = tuple(PseudoOutcomeKind)
    ptcate_by_kind: dict = field(default_factory=dict)
    alpha_floor_candidates: tuple[float, ...] = ()
    output_dir: str = "runs/out"
    workers: int = 1
    save_models: bool = False
    source_text: str = ""

    def __post_init__(self):
        g = tuple(float(v) for v in self.gamma_grid)
        if not g:
            raise ConfigError("gamma_grid must not be empty")
        if any(v < 0 or v > 1 for v in g):
            raise ConfigError("gamma_grid values must lie in [0, 1]")
        if list(g) != sorted(g):
            raise ConfigError("gamma_grid must be sorted")
        self.gamma_grid = g
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        self.seeds = tuple(int(s) for s in self.seeds)
        self.pseudo_kinds = tuple(PseudoOutcomeKind.parse(k) for k in self.pseudo_kinds)
        self.ptcate_by_kind = {PseudoOutcomeKind.parse(k): dict(v) for k, v in self.ptcate_by_kind.items()}

    @property
    def is_synthetic(self) -> bool:
        return self.data.get("dgp") in datagen.DGP_NAMES

    def dgp_spec(self) -> DGPSpec:
        keys = ("support", "noise_sd", "propensity", "n_train", "n_val", "n_test")
        return DGPSpec(self.data["dgp"], **{k: self.data[k] for k in keys if k in self.data})

    def pt_config(self, kind, gamma: float) -> PTConfig:
        kind = PseudoOutcomeKind.parse(kind)
        return replace(self.ptcate, pseudo_kind=kind, gamma=float(gamma), **self.ptcate_by_kind.get(kind, {}))


def _resolve_config_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix else p.name + ".yaml"
    builtin = resources.files("ptcate") / "configs" / name
    if builtin.is_file():
        return Path(str(builtin))
    raise ConfigError(f"config not found: {path}")


def builtin_configs() -> list[str]:
    return sorted(p.name for p in (resources.files("ptcate") / "configs").iterdir() if p.name.endswith(".yaml"))


def parse_config(text: str) -> ExperimentConfig:
    raw = yaml.safe_load(text) or {}
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    known = {"version", "name", "data", "nuisance", "ptcate", "ptcate_by_kind", "gamma_grid", "seeds",
             "pseudo_kinds", "output_dir", "workers", "save_models"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "data" not in raw:
        raise ConfigError("config needs a data section")
    nraw = dict(raw.get("nuisance") or {})
    oracle = bool(nraw.pop("oracle", False))
    if "hidden_dims" in nraw:
        nraw["hidden_dims"] = tuple(nraw["hidden_dims"])
    praw = dict(raw.get("ptcate") or {})
    candidates = tuple(float(a) for a in praw.pop("alpha_floor_candidates", ()) or ())
    try:
        ncfg = NuisanceFitConfig(**nraw)
        pcfg = PTConfig.from_dict(praw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        data=dict(raw["data"]),
        nuisance=ncfg,
        oracle_nuisance=oracle,
        ptcate=pcfg,
        gamma_grid=tuple(raw.get("gamma_grid", DEFAULT_GAMMA_GRID)),
        seeds=tuple(raw.get("seeds", (0, 1, 2, 3, 4))),
        pseudo_kinds=tuple(raw.get("pseudo_kinds", [k.value for k in PseudoOutcomeKind])),
        ptcate_by_kind=raw.get("ptcate_by_kind") or {},
        alpha_floor_candidates=candidates,
        output_dir=str(raw.get("output_dir", "runs/out")),
        workers=int(raw.get("workers", 1)),
        save_models=bool(raw.get("save_models", False)),
        source_text=text,
    )
    if cfg.is_synthetic:
        cfg.dgp_spec()
    elif cfg.data.get("dataset") != "hillstrom":
        raise ConfigError("data section needs dgp (one of %s) or dataset: hillstrom" % ", ".join(datagen.DGP_NAMES))
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(_resolve_config_path(path).read_text())


# ----------------------------------------------------------------- results

@dataclass
class ExperimentResult:
    reports: list[MetricReport]
    runtimes: dict
    config_text: str
    code_version: str = __version__
    failures: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def sorted_reports(self) -> list[MetricReport]:
        order = {k.value: i for i, k in enumerate(PseudoOutcomeKind)}
        return sorted(self.reports, key=lambda r: (order.get(r.kind, 99), r.gamma, r.seed))

    def summary(self) -> dict:
        """(kind, gamma) -> mean and standard error of each metric over seeds."""
        groups: dict = {}
        for r in self.reports:
            groups.setdefault((r.kind, r.gamma), []).append(r)
        out = {}
        for key, rs in groups.items():
            entry = {"n": len(rs)}
            for metric in ("pehe", "policy_loss", "policy_value"):
                v = np.array([getattr(r, metric) for r in rs])
                se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
                entry[metric] = (float(v.mean()), float(se))
            out[key] = entry
        return out

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        evalkit.write_metrics_csv(self.sorted_reports(), out / "metrics.csv")
        (out / "config_snapshot.yaml").write_text(self.config_text)
        meta = {
            "code_version": self.code_version,
            "runtimes": self.runtimes,
            "failures": self.failures,
            "overrides": self.overrides,
            **self.extra,
        }
        (out / "result.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return out / "metrics.csv"


def _worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return max(1, cfg.workers)


# ----------------------------------------------------------------- synthetic sweep

CURVE_GRID = np.linspace(-0.5, 0.5, 201)


def _synthetic_data(cfg: ExperimentConfig, seed: int):
    spec = cfg.dgp_spec()
    train, val, test = datagen.sample_splits(spec, seed)
    return spec, train, val, test


def _stage1(cfg: ExperimentConfig, spec: DGPSpec, train, seed: int) -> nuisance.NuisanceSet:
    if cfg.oracle_nuisance:
        nuis = nuisance.oracle_nuisance(spec)
        if cfg.nuisance.sample_splitting:
            perm = np.random.default_rng([seed, 1]).permutation(len(train))
            nuis.holdout = np.sort(perm[len(train) // 2:])
        return nuis
    nuis = nuisance.fit_all(train, cfg.nuisance, seed)
    if cfg.nuisance.known_propensity:
        nuis = nuisance.mixed(nuis, nuisance.oracle_nuisance(spec))
    return nuis


def _true_policy_value(spec: DGPSpec, g, X) -> float:
    x = X[:, 0]
    treat = (np.asarray(g(X)) > 0).astype(float)
    return float(np.mean(treat * datagen.true_response(spec, 1, x) + (1 - treat) * datagen.true_response(spec, 0, x)))


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """All (kind, gamma) cells of one seed; stage 1 is fitted once and shared."""
    out = {"reports": [], "runtimes": {}, "failures": {}, "curves": {}}
    t0 = time.perf_counter()
    try:
        spec, train, val, test = _synthetic_data(cfg, seed)
        nuis = _stage1(cfg, spec, train, seed)
    except Exception as exc:  # noqa: BLE001 - recorded, other seeds proceed
        for kind in cfg.pseudo_kinds:
            out["failures"][f"{kind.value}/seed={seed}"] = f"{type(exc).__name__}: {exc}"
        return out
    out["runtimes"][f"stage1/seed={seed}"] = time.perf_counter() - t0
    second_stage = train if nuis.holdout is None else train.subset(nuis.holdout)
    val_nuis = nuisance.oracle_nuisance(spec) if cfg.oracle_nuisance else nuis
    for kind in cfg.pseudo_kinds:
        cell = f"{kind.value}/seed={seed}"
        try:
            ps = pseudo.build_pseudo_dataset(kind, nuis, second_stage)
            base = cfg.pt_config(kind, cfg.gamma_grid[0])
            t1 = time.perf_counter()
            init = retarget.step1_init(ps, base, seed)
            out["runtimes"][f"step1/{cell}"] = time.perf_counter() - t1
            floors = {}
            for gamma in cfg.gamma_grid:
                pt = cfg.pt_config(kind, gamma)
                if cfg.alpha_floor_candidates and gamma > 0:
                    if val is None:
                        raise ConfigError("alpha floor selection needs n_val > 0")
                    ps_val = pseudo.build_pseudo_dataset(kind, val_nuis, val)
                    a = retarget.select_alpha_floor(cfg.alpha_floor_candidates, ps, ps_val, pt, seed)
                    pt = replace(pt, alpha_floor=a)
                    floors[gamma] = a
                t1 = time.perf_counter()
                model = retarget.train_ptcate(ps, pt, seed, init=init)
                out["runtimes"][f"{cell}/gamma={gamma}"] = time.perf_counter() - t1
                out["reports"].append(MetricReport(
                    gamma=gamma, seed=seed, kind=kind.value,
                    pehe=evalkit.pehe(model, test.tau, test.X),
                    policy_loss=evalkit.policy_loss(model, test.tau, test.X),
                    policy_value=_true_policy_value(spec, model, test.X),
                    n_eval=len(test),
                ))
                if test.dim == 1:
                    out["curves"][(kind.value, seed, gamma)] = model.predict_cate(CURVE_GRID[:, None]).tolist()
                if cfg.save_models:
                    d = Path(cfg.output_dir) / "models"
                    d.mkdir(parents=True, exist_ok=True)
                    (d / f"{kind.value}_seed{seed}_gamma{gamma}.json").write_text(model.to_json())
            if floors:
                out["runtimes"][f"alpha_floor/{cell}"] = floors
        except Exception as exc:  # noqa: BLE001 - crash isolation per cell
            log.warning("cell %s failed: %s", cell, exc)
            out["failures"][cell] = f"{type(exc).__name__}: {exc}"
            out["reports"] = [r for r in out["reports"] if not (r.kind == kind.value and r.seed == seed)]
    return out


def run_sweep(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    if not cfg.is_synthetic:
        raise ConfigError("run_sweep needs a synthetic dgp; use run_hillstrom for real data")
    workers = _worker_count(cfg)
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        parts = [run_seed(cfg, s) for s in cfg.seeds]
    result = ExperimentResult(reports=[], runtimes={}, config_text=cfg.source_text)
    for p in parts:
        result.reports += p["reports"]
        result.runtimes.update(p["runtimes"])
        result.failures.update(p["failures"])
        result.curves.update(p["curves"])
    result.extra["dgp"] = cfg.data["dgp"]
    if write:
        result.write(cfg.output_dir)
    return result


# ----------------------------------------------------------------- hillstrom

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_hillstrom(cfg: ExperimentConfig, write: bool = True):
    """Gamma sweep on the Hillstrom data; returns (result, improvement table)."""
    path = cfg.data.get("path")
    if not path or not Path(path).exists():
        raise DatasetNotBundledError(
            f"dataset not bundled: Hillstrom CSV not found at {path!r}; download it from {HILLSTROM_URL} "
            "and set data.path in the config"
        )
    digest = sha256_file(path)
    expected = cfg.data.get("sha256")
    if expected and expected.lower() != digest:
        raise ConfigError(f"sha256 mismatch for {path}: expected {expected}, got {digest}")
    data = datagen.load_hillstrom(path, datagen.PreprocessOptions(outcome=cfg.data.get("outcome", "visit")))
    fractions = tuple(cfg.data.get("split", (0.5, 0.2, 0.3)))
    split_seed = int(cfg.data.get("split_seed", 0))
    train, val, test = datagen.split(data, SplitSpec(fractions, split_seed))
    train, val, test = datagen.standardize(train, val, test)

    kind = PseudoOutcomeKind.DR
    result = ExperimentResult(reports=[], runtimes={}, config_text=cfg.source_text)
    obs_values = []
    per_gamma = {g: [] for g in cfg.gamma_grid}
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        ncfg = replace(cfg.nuisance, known_propensity=False)
        nuis = nuisance.fit_all(train, ncfg, seed)
        second_stage = train if nuis.holdout is None else train.subset(nuis.holdout)
        ps = pseudo.build_pseudo_dataset(kind, nuis, second_stage)
        ps_test = pseudo.build_pseudo_dataset(kind, nuis, test)
        result.runtimes[f"stage1/seed={seed}"] = time.perf_counter() - t0
        obs = evalkit.dr_policy_value(nuis.prop, nuis, test)
        obs_values.append(obs)
        base = replace(cfg.pt_config(kind, cfg.gamma_grid[0]), input_dim=data.dim)
        init = retarget.step1_init(ps, base, seed)
        for gamma in cfg.gamma_grid:
            pt = replace(cfg.pt_config(kind, gamma), input_dim=data.dim)
            if cfg.alpha_floor_candidates and gamma > 0:
                ps_val = pseudo.build_pseudo_dataset(kind, nuis, val)
                pt = replace(pt, alpha_floor=retarget.select_alpha_floor(cfg.alpha_floor_candidates, ps, ps_val, pt, seed))
            t1 = time.perf_counter()
            model = retarget.train_ptcate(ps, pt, seed, init=init)
            result.runtimes[f"DR/seed={seed}/gamma={gamma}"] = time.perf_counter() - t1
            value = evalkit.dr_policy_value(retarget.threshold_policy(model), nuis, test)
            per_gamma[gamma].append(value)
            result.reports.append(MetricReport(
                gamma=gamma, seed=seed, kind=kind.value,
                pehe=evalkit.pehe(model, ps_test.y_pseudo, test.X),
                policy_loss=evalkit.policy_loss(model, ps_test.y_pseudo, test.X),
                policy_value=value, n_eval=len(test),
            ))
    obs_value = float(np.mean(obs_values))
    table = evalkit.improvement_table([(f"gamma = {g:g}", v) for g, v in per_gamma.items()], obs_value)
    result.extra.update({
        "dataset_sha256": digest,
        "observational_policy_values": obs_values,
        "improvement_table": [r.as_dict() for r in table],
    })
    if write:
        result.write(cfg.output_dir)
        (Path(cfg.output_dir) / "improvement_table.txt").write_text(evalkit.format_improvement_table(table) + "\n")
    return result, table


# ----------------------------------------------------------------- gradient checks

def gradcheck_suite(seed: int = 0, batch: int = 32, h: float = 1e-5) -> dict[str, ndnet.GradCheckReport]:
    """Finite-difference check of every training loss on small random networks."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(batch, 2))
    y = rng.normal(size=batch)
    labels = (rng.uniform(size=batch) < 0.5).astype(float)
    g_spec = ndnet.NetSpec(2, (8, 8), "tanh", "identity")
    alpha_spec = ndnet.NetSpec(2, (8, 8), "relu", "softplus_plus_a", 0.5)
    prop_spec = ndnet.NetSpec(2, (8, 8), "tanh", "sigmoid")
    g_params = ndnet.net_init(g_spec, seed + 1)
    alpha_params = ndnet.net_init(alpha_spec, seed + 2)
    alpha_out = ndnet.net_forward(alpha_params, alpha_spec, X)
    g_out = ndnet.net_forward(g_params, g_spec, X)
    out = {
        "nuisance_mse": ndnet.finite_diff_check(g_params, g_spec, X, ndnet.mse_loss(y), h),
        "nuisance_bce": ndnet.finite_diff_check(ndnet.net_init(prop_spec, seed + 3), prop_spec, X,
                                                ndnet.bce_loss(labels), h),
        "loss_alpha": ndnet.finite_diff_check(alpha_params, alpha_spec, X,
                                              retarget.loss_alpha_closure(np.tanh(g_out), y), h),
        "g_weight_decay": ndnet.finite_diff_check(g_params, g_spec, X,
                                                  retarget.loss_g_closure(alpha_out, y, 0.5, True), h,
                                                  weight_decay=1e-2),
    }
    for gamma in (0.0, 0.5, 1.0):
        for inv in (False, True):
            out[f"loss_g[gamma={gamma:g},inv_alpha={inv}]"] = ndnet.finite_diff_check(
                g_params, g_spec, X, retarget.loss_g_closure(alpha_out, y, gamma, inv), h)
    return out
