import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from srsqueeze import tensor as T
from srsqueeze.data import PatchSampler
from srsqueeze.losses import charbonnier
from srsqueeze.models import ModelConfig, build
from srsqueeze.pruning import (Phase, PruneConfig, measure_density, obprox_step, orthant_update,
                               prune_loss, run_pruning, soft_threshold)
from srsqueeze.tensor import Tensor

from oracles import scalar_charbonnier

floats = st.floats(-10, 10, allow_nan=False, width=32)


def test_config_validation():
    for bad in (dict(epsilon=0), dict(lam=-1), dict(switch_point=1.0), dict(zero_tol=-1)):
        with pytest.raises(ValueError):
            PruneConfig(**bad)


# -- loss ----------------------------------------------------------------------------

def test_loss_floor_is_epsilon():
    img = np.random.default_rng(0).random((1, 3, 4, 4)).astype(np.float32)
    params = [Tensor(np.zeros((2, 2)), requires_grad=True)]
    loss = prune_loss(Tensor(img), Tensor(img), params, PruneConfig())
    assert loss.item() == pytest.approx(1e-3, rel=1e-6)


def test_loss_single_param():
    img = np.ones((1, 1, 2, 2), np.float32)
    loss = prune_loss(Tensor(img), Tensor(img), [Tensor(np.array([2.0], np.float32))], PruneConfig(lam=1e-4))
    assert loss.item() == pytest.approx(1e-3 + 2e-4, rel=1e-6)


def test_loss_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    sr, gt = rng.random((2, 3, 5, 5)), rng.random((2, 3, 5, 5))
    params = [rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, 7)]
    cfg = PruneConfig(lam=1e-2)
    got = prune_loss(Tensor(sr), Tensor(gt), [Tensor(p) for p in params], cfg).item()
    expected = scalar_charbonnier(sr, gt, cfg.epsilon) + cfg.lam * sum(abs(v) for p in params for v in p.ravel())
    assert got == pytest.approx(expected, abs=1e-6)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        prune_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))), [Tensor([1.0])], PruneConfig())


# -- solver steps --------------------------------------------------------------------

@pytest.mark.parametrize("phase", list(Phase))
def test_zero_is_fixed_point(phase):
    p = Tensor(np.zeros(4, np.float32))
    obprox_step([p], [np.zeros(4, np.float32)], PruneConfig(lr=1.0, lam=0.1), phase)
    assert np.all(p.data == 0)


def test_orthant_keeps_zeros_even_with_gradient():
    p = Tensor(np.array([0.0, 0.5], np.float32))
    obprox_step([p], [np.array([5.0, 0.0], np.float32)], PruneConfig(lr=0.1, lam=0.0), Phase.ORTHANT)
    assert p.data[0] == 0


def test_prox_soft_threshold_example():
    p = Tensor(np.array([0.5], np.float32))
    obprox_step([p], [np.zeros(1, np.float32)], PruneConfig(lr=1.0, lam=0.1), Phase.PROX_SG)
    assert p.data[0] == pytest.approx(0.4)


@given(arrays(np.float32, 16, elements=floats), st.floats(0, 5))
def test_soft_threshold_properties(x, t):
    y = soft_threshold(x, t)
    assert np.all(np.abs(y) <= np.abs(x))
    assert np.all((np.sign(y) == np.sign(x)) | (y == 0))
    assert np.all(y[np.abs(x) <= np.float32(t)] == 0)


@given(arrays(np.float32, 16, elements=floats), arrays(np.float32, 16, elements=floats),
       st.floats(1e-4, 1.0), st.floats(0, 1.0))
def test_orthant_never_flips_sign(theta, grad, lr, lam):
    out = orthant_update(theta, grad, lr, lam)
    assert np.all((np.sign(out) == np.sign(theta)) | (out == 0))
    assert np.all(out[theta == 0] == 0)


def _toy_objective(theta, a, A, lam):
    d = theta - a
    return 0.5 * np.einsum("...i,ij,...j->...", d, A, d) + lam * np.abs(theta).sum(-1)


def test_solver_matches_grid_search():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    a = np.array([0.8, -0.05])
    lam = 0.3
    # exhaustive 1e-3 grid over [-1.5, 1.5]^2
    g = np.round(np.arange(-1500, 1501) * 1e-3, 3)
    best, best_val = None, np.inf
    for chunk in np.array_split(g, 30):
        grid = np.stack(np.meshgrid(chunk, g, indexing="ij"), -1)
        vals = _toy_objective(grid, a, A, lam)
        k = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[k] < best_val:
            best_val, best = vals[k], grid[k]

    theta = Tensor(np.array([-0.7, 0.9]), requires_grad=True)
    cfg = PruneConfig(lr=0.05, lam=lam, epochs=1, steps_per_epoch=2000, switch_point=0.5)
    for step in range(cfg.total_steps):
        grad = A @ (theta.data - a)  # smooth part only
        phase = Phase.PROX_SG if step < cfg.switch_point * cfg.total_steps else Phase.ORTHANT
        obprox_step([theta], [grad], cfg, phase)
    np.testing.assert_allclose(theta.data, best, atol=2e-3)
    assert theta.data[1] == 0  # the small coordinate is pruned exactly


# -- density -------------------------------------------------------------------------

def test_density_extremes():
    model = build(ModelConfig(8, 2, 2))
    assert measure_density(model).density == 1.0
    for p in model.deep_parameters():
        p.data[...] = 0
    rep = measure_density(model)
    assert rep.density == 0.0 and rep.nonzero_deep == 0
    assert rep.total_deep == sum(p.size for p in model.deep_parameters())


def test_density_hand_constructed():
    # n_c=1, n_l=1, n_b=5, kernel=1: deep = 6 convs x (1 weight + 1 bias) = 12
    model = build(ModelConfig(1, 1, 5, kernel=1, in_channels=1))
    deep = model.deep_parameters()
    assert sum(p.size for p in deep) == 12
    for p in deep[:3]:
        p.data[...] = 0
    assert measure_density(model).density == 0.75


def test_density_tenth_zeroed():
    model = build(ModelConfig(16, 2, 2), seed=3)
    flat = [(p, i) for p in model.deep_parameters() for i in range(p.size)]
    assert len(flat) == 11_600
    pick = np.random.default_rng(0).choice(len(flat), size=len(flat) // 10, replace=False)
    for k in pick:
        p, i = flat[k]
        p.data.reshape(-1)[i] = 0
    assert measure_density(model).density == 0.9


def test_density_ignores_peripheral_zeros():
    model = build(ModelConfig(8, 1, 2))
    model.params["shallow.weight"].data[...] = 0
    model.params["recon.out.bias"].data[...] = 0
    assert measure_density(model).density == 1.0


@given(st.lists(st.floats(0, 0.2), min_size=2, max_size=6))
@settings(max_examples=25, deadline=None)
def test_density_monotone_in_tolerance(tols):
    model = build(ModelConfig(8, 2, 2), seed=4)
    tols = sorted(tols)
    ds = [measure_density(model, t).density for t in tols]
    assert all(x >= y for x, y in zip(ds, ds[1:]))


# -- run_pruning ---------------------------------------------------------------------

def _prune(model, images, lam, seed=0, steps=200):
    cfg = PruneConfig(lam=lam, lr=0.1, epochs=steps // 10, steps_per_epoch=10, batch=8, patch=32, seed=seed)
    return run_pruning(model, PatchSampler(images, patch=32, scale=2, seed=seed), cfg)


def test_empty_dataset_rejected():
    class Empty:
        scale = 2

        def __len__(self):
            return 0

    with pytest.raises(ValueError, match="empty"):
        run_pruning(build(ModelConfig(4, 1, 1)), Empty(), PruneConfig())


def test_no_sparsity_pressure_keeps_density(pretrained_tiny, train_images):
    rep = _prune(pretrained_tiny.copy(), train_images, lam=0.0, steps=60)
    assert rep.density > 0.98


def test_l1_lowers_density_and_keeps_fit(pretrained_tiny, train_images):
    base = pretrained_tiny.copy()
    dense = _prune(pretrained_tiny.copy(), train_images, lam=0.0)
    sparse_model = pretrained_tiny.copy()
    sparse = _prune(sparse_model, train_images, lam=1e-4)
    assert sparse.density < dense.density
    # sanity bound: fidelity on the training set at most doubles
    lr_b, hr_b = PatchSampler(train_images, patch=32, scale=2, seed=99).batch(16)
    with T.no_grad():
        before = charbonnier(base(lr_b), hr_b).item()
        after = charbonnier(sparse_model(lr_b), hr_b).item()
    assert after <= 2 * before
    assert sparse.metadata["charbonnier_after"] <= 2 * sparse.metadata["charbonnier_before"]
    assert sparse.metadata["steps"] == 200 and sparse.metadata["switch_step"] == 100


def test_report_serialises(pretrained_tiny, train_images):
    import json
    rep = _prune(pretrained_tiny.copy(), train_images, lam=1e-4, steps=10)
    d = json.loads(json.dumps(rep.to_dict()))
    assert set(d) >= {"nonzero_deep", "total_deep", "density", "per_layer_density"}
    assert 0 <= d["density"] <= 1
