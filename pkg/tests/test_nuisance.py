import numpy as np
import pytest

from ptcate import datagen, nuisance
from ptcate.datagen import DGPSpec
from ptcate.nuisance import NuisanceFitConfig

FAST = NuisanceFitConfig(hidden_dims=(16, 16), epochs=400, learning_rate=1e-2)
GRID = np.linspace(-0.5, 0.5, 101)[:, None]


def test_constant_outcome_arm_is_learned():
    rng = np.random.default_rng(0)
    n = 400
    X = rng.uniform(-0.5, 0.5, size=(n, 1))
    a = (rng.uniform(size=n) < 0.5).astype(int)
    d = datagen.Dataset(X=X, a=a, y=np.full(n, 0.7))
    f = nuisance.fit_response(d, 1, NuisanceFitConfig(hidden_dims=(16, 16)), seed=0)
    assert np.max(np.abs(f(GRID) - 0.7)) < 0.01


def test_zero_control_arm_noise_free():
    d = datagen.sample_dgp(DGPSpec("fig2_sigmoid", noise_sd=0.0), 800, 1)
    f = nuisance.fit_response(d, 0, FAST, seed=2)
    assert np.max(np.abs(f(GRID))) < 0.02


def test_treated_arm_tracks_truth():
    spec = DGPSpec("fig2_sigmoid")
    d = datagen.sample_dgp(spec, 1000, 2)
    f = nuisance.fit_response(d, 1, NuisanceFitConfig(hidden_dims=(16, 16), epochs=1500), seed=0)
    assert np.mean((f(GRID) - datagen.true_response(spec, 1, GRID[:, 0])) ** 2) < 1e-3


def test_missing_arm_raises():
    d = datagen.Dataset(X=np.zeros((4, 1)), a=np.zeros(4, int), y=np.zeros(4))
    with pytest.raises(ValueError):
        nuisance.fit_response(d, 1, FAST)
    with pytest.raises(ValueError):
        nuisance.fit_propensity(d, FAST)


def test_rct_propensity_near_half():
    d = datagen.sample_dgp(DGPSpec("settingA"), 10_000, 3)
    p = nuisance.fit_propensity(d, NuisanceFitConfig(hidden_dims=(8,), epochs=300), seed=0)
    assert abs(np.mean(p(d.X)) - 0.5) < 0.02


def test_propensity_is_clamped():
    cfg = NuisanceFitConfig(hidden_dims=(4,), epochs=10)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(100, 1))
    d = datagen.Dataset(X=X, a=(X[:, 0] > 0).astype(int), y=np.zeros(100))
    p = nuisance.fit_propensity(d, cfg)
    out = p(np.linspace(-1000, 1000, 51)[:, None])
    assert out.min() >= 0.01 and out.max() <= 0.99


def test_logistic_propensity_trend():
    d = datagen.sample_dgp(DGPSpec("settingB"), 10_000, 4)
    p = nuisance.fit_propensity(d, NuisanceFitConfig(hidden_dims=(), epochs=1500, learning_rate=0.05), seed=0)
    lo, hi = p(np.array([[-0.5], [0.5]]))
    assert hi > lo


def test_p_min_validated():
    with pytest.raises(ValueError):
        NuisanceFitConfig(p_min=0.6)


def test_oracle_values():
    orc = nuisance.oracle_nuisance(DGPSpec("fig2_sigmoid"))
    mu1, mu0, p = orc.evaluate(np.array([[0.0], [0.3]]))
    assert mu1[0] - mu0[0] == pytest.approx(0.5)
    assert np.all(p == 0.5)
    assert orc.provenance == "oracle"
    with pytest.raises(TypeError):
        nuisance.oracle_nuisance("settingA")


def test_mixed_takes_oracle_propensity():
    spec = DGPSpec("settingB")
    learned = nuisance.NuisanceSet(lambda X: np.ones(len(X)), lambda X: np.zeros(len(X)),
                                   lambda X: np.full(len(X), 0.3))
    m = nuisance.mixed(learned, nuisance.oracle_nuisance(spec))
    mu1, mu0, p = m.evaluate(np.array([[0.5]]))
    assert mu1[0] == 1.0 and p[0] == pytest.approx(datagen.true_propensity(spec, 0.5))


def test_non_finite_evaluation_raises():
    bad = nuisance.NuisanceSet(lambda X: np.full(len(X), np.nan), lambda X: np.zeros(len(X)),
                               lambda X: np.full(len(X), 0.5))
    with pytest.raises(FloatingPointError):
        bad.evaluate(np.zeros((2, 1)))


def test_fit_all_without_splitting_uses_everything():
    d = datagen.sample_dgp(DGPSpec("settingA"), 200, 0)
    ns = nuisance.fit_all(d, NuisanceFitConfig(hidden_dims=(4,), epochs=5), seed=1)
    assert ns.holdout is None and ns.provenance == "learned"


def test_fit_all_with_splitting_is_disjoint_and_deterministic():
    d = datagen.sample_dgp(DGPSpec("settingA"), 201, 0)
    cfg = NuisanceFitConfig(hidden_dims=(4,), epochs=5, sample_splitting=True)
    a = nuisance.fit_all(d, cfg, seed=3)
    b = nuisance.fit_all(d, cfg, seed=3)
    assert np.array_equal(a.holdout, b.holdout)
    assert len(a.holdout) == 201 - 100
    assert len(np.unique(a.holdout)) == len(a.holdout)
    c = nuisance.fit_all(d, cfg, seed=4)
    assert not np.array_equal(a.holdout, c.holdout)
    assert np.array_equal(a.mu1(d.X), b.mu1(d.X))


def test_nuisance_json_round_trip():
    d = datagen.sample_dgp(DGPSpec("settingB"), 100, 0)
    ns = nuisance.fit_all(d, NuisanceFitConfig(hidden_dims=(3,), epochs=3), seed=0)
    back = nuisance.NuisanceSet.from_json(ns.to_json())
    for x, y in zip(ns.evaluate(d.X), back.evaluate(d.X)):
        assert np.array_equal(x, y)
    with pytest.raises(TypeError):
        nuisance.oracle_nuisance(DGPSpec("settingA")).to_json()
