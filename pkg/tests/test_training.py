import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpanet import _backend
from lpanet.network import Dims, Gradients, forward_collect, init_network, predict
from lpanet.surfaces import SurfaceId, train_test_split
from lpanet.training import (
    NonFiniteLossError,
    OptimizerState,
    Paradigm,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    backward,
    check_gradients,
    default_lambdas,
    e2e_batch_loss,
    epoch_permutation,
    grad_check,
    lpa_batch_loss,
    mae,
    mse,
    train,
)

E2E = TrainConfig(paradigm="e2e")


def randomize(net, seed, scale=0.4):
    net.theta[:] = np.random.default_rng(seed).normal(scale=scale, size=net.theta.shape)
    return net


def test_mse_mae_hand_values():
    p = np.array([[1.0], [2.0], [4.0]])
    t = np.array([[0.0], [2.0], [2.0]])
    assert mse(p, t) == pytest.approx(5.0 / 3.0)
    assert mae(p, t) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mse(p, t[:2])
    with pytest.raises(ValueError):
        mae(np.zeros((0, 1)), np.zeros((0, 1)))


def test_default_lambdas():
    assert default_lambdas(6) == (0.1, 0.1, 0.1, 0.1, 0.1, 1.0)
    assert default_lambdas(1) == (1.0,)


def test_config_validation():
    assert TrainConfig(paradigm="LPA").paradigm is Paradigm.LPA
    with pytest.raises(ValueError):
        TrainConfig(paradigm="sgd")
    with pytest.raises(ValueError):
        TrainConfig(lambdas=(0.0, 0.0))
    with pytest.raises(ValueError):
        TrainConfig(lambdas=(-1.0, 1.0))
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(adam_beta2=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="3 blocks"):
        TrainConfig(lambdas=(1.0, 1.0)).resolved_lambdas(3)


def test_lpa_loss_matches_per_depth_loop(small_net, small_batch):
    randomize(small_net, 0)
    x, y = small_batch
    lam = [0.3, 0.0, 2.0]
    loss, per = lpa_batch_loss(small_net, (x, y), lam)
    ref = []
    for depth in range(1, 4):
        h = x @ small_net.preproc_w.T + small_net.preproc_b
        for b in small_net.blocks[:depth]:
            h = h + np.maximum(h @ b.w_in.T + b.b_in, 0) @ b.w_out.T + b.b_out
        ref.append(np.mean((h @ small_net.readout.T - y) ** 2))
    np.testing.assert_allclose(per, ref, rtol=1e-13)
    assert loss == pytest.approx(0.3 * ref[0] + 2.0 * ref[2], rel=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_lpa_with_final_weight_only_equals_e2e(seed, small_dims, kernels):
    net = randomize(init_network(small_dims, 0), seed)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (20, 2)), rng.normal(size=(20, 1))
    onehot = (0.0,) * (small_dims.n_blocks - 1) + (1.0,)
    lpa_loss, _ = lpa_batch_loss(net, (x, y), onehot)
    assert abs(lpa_loss - e2e_batch_loss(net, (x, y))) <= 1e-12 * lpa_loss
    g_lpa = backward(net, (x, y), TrainConfig(paradigm="lpa", lambdas=onehot), kernels=kernels)
    g_e2e = backward(net, (x, y), E2E, kernels=kernels)
    assert np.max(np.abs(g_lpa.theta - g_e2e.theta)) <= 1e-12 * np.max(np.abs(g_e2e.theta))


def test_kernel_loss_matches_reference_losses(small_net, small_batch, kernels):
    randomize(small_net, 1)
    x, y = small_batch
    lam = np.array([0.5, 0.25, 1.0])
    g = np.empty(small_net.dims.n_params)
    loss, per = kernels.loss_grad(small_net.theta, *small_net.dims.kernel_args(), x, y, lam, g)
    ref_loss, ref_per = lpa_batch_loss(small_net, (x, y), lam)
    assert loss == pytest.approx(ref_loss, rel=1e-13)
    np.testing.assert_allclose(per, ref_per, rtol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3),
       st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3),
       st.integers(0, 1000))
def test_gradient_is_linear_in_lambda(la, lb, seed):
    dims = Dims(d=5, hidden=4, n_blocks=3)
    net = randomize(init_network(dims, 0), seed)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (12, 2)), rng.normal(size=(12, 1))
    g = _backend.kernels
    grad = {}
    for key, lam in (("a", la), ("b", lb), ("ab", np.add(la, lb))):
        out = np.empty(dims.n_params)
        g.loss_grad(net.theta, *dims.kernel_args(), x, y, np.asarray(lam, dtype=float), out)
        grad[key] = out
    scale = max(1e-300, np.max(np.abs(grad["a"])) + np.max(np.abs(grad["b"])))
    assert np.max(np.abs(grad["ab"] - grad["a"] - grad["b"])) <= 1e-10 * scale


def test_readout_gradient_closed_form(small_net, small_batch):
    randomize(small_net, 2)
    x, y = small_batch
    g = backward(small_net, (x, y), E2E)
    h = forward_collect(small_net, x).states[-1]
    ref = 2.0 / x.shape[0] * (h @ small_net.readout.T - y).T @ h
    np.testing.assert_allclose(g.readout, ref, rtol=1e-12, atol=1e-15)


def test_backends_agree():
    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    dims = Dims()
    net = randomize(init_network(dims, 0), 3, scale=0.2)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-1, 1, (128, 2)), rng.normal(size=(128, 1))
    lam = np.array(default_lambdas(6))
    outs = []
    for name in ("python", "cython"):
        grad = np.empty(dims.n_params)
        loss, per = _backend.get(name).loss_grad(net.theta, *dims.kernel_args(), x, y, lam, grad)
        outs.append((loss, per, grad))
    assert outs[0][0] == pytest.approx(outs[1][0], rel=1e-13)
    np.testing.assert_allclose(outs[0][1], outs[1][1], rtol=1e-13)
    assert np.max(np.abs(outs[0][2] - outs[1][2])) <= 1e-12 * np.max(np.abs(outs[0][2]))


@pytest.mark.parametrize("paradigm", ["e2e", "lpa"])
def test_grad_check_small_net(paradigm, small_net, small_batch, kernels):
    randomize(small_net, 4)
    rep = check_gradients(small_net, small_batch, TrainConfig(paradigm=paradigm), kernels=kernels)
    assert rep.n_checked + rep.n_kink_skipped == small_net.dims.n_params
    assert rep.max_rel_error <= 1e-7


def test_grad_check_in_linear_regime_is_tight(small_net, small_batch):
    # a positive b_in offset keeps every ReLU active, so the loss is a smooth polynomial
    randomize(small_net, 5, scale=0.3)
    for b in small_net.blocks:
        b.b_in[:] = 4.0
    fs = forward_collect(small_net, small_batch[0])
    for b, h in zip(small_net.blocks, fs.states):
        assert np.all(h @ b.w_in.T + b.b_in > 0.1)
    for paradigm in ("e2e", "lpa"):
        rep = check_gradients(small_net, small_batch, TrainConfig(paradigm=paradigm))
        assert rep.n_kink_skipped == 0
        assert rep.max_rel_error <= 1e-9


def test_grad_check_catches_a_corrupted_gradient(small_net, small_batch):
    randomize(small_net, 6)
    for b in small_net.blocks:
        b.b_in[:] = 50.0
    cfg = TrainConfig(paradigm="lpa")
    grads = backward(small_net, small_batch, cfg)
    k = small_net.dims.d * 2 + small_net.dims.d + 3  # block1.w_in[0,3]
    bad = Gradients(small_net.dims, grads.theta.copy())
    bad.theta[k] *= 1.05
    rep = check_gradients(small_net, small_batch, cfg, grads=bad)
    assert rep.max_rel_error > 1e-2
    assert rep.worst_param == small_net.param_name(k)


def test_grad_check_subset_is_seeded(small_net, small_batch):
    randomize(small_net, 7)
    a = check_gradients(small_net, small_batch, E2E, max_params=20, seed=3)
    b = check_gradients(small_net, small_batch, E2E, max_params=20, seed=3)
    assert a == b and a.n_checked + a.n_kink_skipped == 20
    assert grad_check(small_net, small_batch, E2E, max_params=20, seed=3) == a.max_rel_error


def test_kinks_are_skipped():
    dims = Dims(d=3, hidden=3, n_blocks=1)
    net = randomize(init_network(dims, 0), 8)
    x = np.array([[0.2, -0.4]])
    z = (x @ net.preproc_w.T + net.preproc_b) @ net.blocks[0].w_in.T
    net.blocks[0].b_in[:] = -z[0] + 1e-9  # every unit sits just above its kink
    rep = check_gradients(net, (x, np.zeros((1, 1))), E2E)
    assert rep.n_kink_skipped > 0


def test_adam_first_step_moves_each_parameter_by_lr(small_net, small_batch):
    randomize(small_net, 9)
    cfg = TrainConfig(lr=0.1)
    g = backward(small_net, small_batch, cfg)
    before = small_net.theta.copy()
    adam_step(small_net, g, OptimizerState.zeros(small_net.dims.n_params), cfg)
    step = small_net.theta - before
    big = np.abs(g.theta) > 1e-4
    np.testing.assert_allclose(np.abs(step[big]), 0.1, rtol=1e-3)
    assert np.all(np.sign(step[big]) == -np.sign(g.theta[big]))


def test_adam_matches_scalar_reference():
    dims = Dims(d=1, hidden=1, d_in=1, n_blocks=1)
    net = init_network(dims, 0)
    cfg = TrainConfig(lr=0.01)
    st_ = OptimizerState.zeros(dims.n_params)
    rng = np.random.default_rng(0)
    ref = net.theta.copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for t in range(1, 6):
        g = rng.normal(size=dims.n_params)
        adam_step(net, Gradients(dims, g), st_, cfg)
        for k in range(dims.n_params):
            m[k] = 0.9 * m[k] + 0.1 * g[k]
            v[k] = 0.999 * v[k] + 0.001 * g[k] ** 2
            ref[k] -= 0.01 * (m[k] / (1 - 0.9**t)) / (np.sqrt(v[k] / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(net.theta, ref, rtol=1e-14)
    assert st_.t == 5


def test_adam_shape_check(small_net):
    with pytest.raises(ValueError):
        adam_step(small_net, Gradients(small_net.dims), OptimizerState.zeros(3), TrainConfig())


def test_nonfinite_loss_raises(small_net, small_batch):
    x, y = small_batch
    y = y.copy()
    y[0, 0] = np.nan
    with pytest.raises(NonFiniteLossError, match="batch 4"):
        backward(small_net, (x, y), E2E, batch_index=4)


def test_epoch_permutation():
    a = epoch_permutation(100, 1, 1)
    assert np.array_equal(a, epoch_permutation(100, 1, 1))
    assert not np.array_equal(a, epoch_permutation(100, 1, 2))
    assert not np.array_equal(a, epoch_permutation(100, 2, 1))


@pytest.fixture(scope="module")
def tiny_data():
    return train_test_split(SurfaceId.STANDING_WAVE_GRID, 0, 512, 256)


def test_training_reduces_loss_and_is_deterministic(tiny_data):
    tr, te = tiny_data
    dims = Dims(d=8, hidden=8, n_blocks=3)
    cfg = TrainConfig(paradigm="lpa", epochs=15, batch_size=32, seed=1)
    n1, n2 = init_network(dims, 1), init_network(dims, 1)
    seen = []
    h1 = train(n1, tr, te, cfg, on_epoch=seen.append)
    h2 = train(n2, tr, te, cfg)
    assert np.array_equal(n1.theta, n2.theta)
    assert h1 == h2 and h1.csv_rows() == h2.csv_rows()
    assert seen == h1.records and len(h1) == 15
    assert h1.records[-1].total_loss < 0.5 * h1.records[0].total_loss
    assert h1.records[-1].test_mse == pytest.approx(mse(predict(n1, te.inputs), te.targets[:, None]))


def test_total_loss_is_weighted_sum_of_layer_losses(tiny_data):
    tr, te = tiny_data
    dims = Dims(d=6, hidden=6, n_blocks=3)
    cfg = TrainConfig(paradigm="lpa", lambdas=(0.2, 0.5, 1.0), epochs=2, batch_size=100)
    h = train(init_network(dims, 0), tr, te, cfg)
    for r in h.records:
        assert r.total_loss == pytest.approx(np.dot((0.2, 0.5, 1.0), r.layer_losses), rel=1e-12)


def test_training_across_backends_agrees(tiny_data):
    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    tr, te = tiny_data
    dims = Dims(d=8, hidden=8, n_blocks=3)
    cfg = TrainConfig(epochs=3, batch_size=64)
    a, b = init_network(dims, 0), init_network(dims, 0)
    train(a, tr, te, cfg, kernels=_backend.get("python"))
    train(b, tr, te, cfg, kernels=_backend.get("cython"))
    assert np.max(np.abs(a.theta - b.theta)) <= 1e-9


def test_history_csv(tiny_data, tmp_path):
    tr, te = tiny_data
    h = train(init_network(Dims(d=4, hidden=4, n_blocks=2), 0), tr, te, TrainConfig(epochs=2))
    p = tmp_path / "h.csv"
    h.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "epoch,total_loss,loss_1,loss_2,test_mse,test_mae"
    assert len(lines) == 3 and lines[1].startswith("1,")


def test_zero_epochs(tiny_data):
    tr, te = tiny_data
    net = init_network(Dims(d=4, hidden=4, n_blocks=2), 0)
    before = net.theta.copy()
    assert len(train(net, tr, te, TrainConfig(epochs=0))) == 0
    assert np.array_equal(net.theta, before)


def test_divergence_guard(tiny_data):
    tr, te = tiny_data
    net = init_network(Dims(d=8, hidden=8, n_blocks=3), 0)
    with pytest.raises(TrainingDivergedError, match="epoch"):
        train(net, tr, te, TrainConfig(lr=1e9, epochs=3))


def test_unit_offset_scores():
    t = np.random.default_rng(0).normal(size=(7, 1))
    assert mse(t + 1.0, t) == pytest.approx(1.0)
    assert mae(t - 2.5, t) == pytest.approx(2.5)
    assert mse(t, t) == 0.0


def test_zero_net_zero_target_gives_zero_gradient(small_dims):
    from lpanet.network import ResidualNetwork

    net = ResidualNetwork(small_dims)
    x = np.random.default_rng(0).uniform(-1, 1, (8, 2))
    for paradigm in ("e2e", "lpa"):
        g = backward(net, (x, np.zeros((8, 1))), TrainConfig(paradigm=paradigm))
        assert not g.theta.any()


def test_zero_gradient_leaves_parameters(small_net):
    before = small_net.theta.copy()
    adam_step(small_net, Gradients(small_net.dims), OptimizerState.zeros(small_net.dims.n_params), TrainConfig())
    assert np.array_equal(small_net.theta, before)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_layer_losses_nonnegative(seed):
    dims = Dims(d=4, hidden=3, n_blocks=3)
    net = randomize(init_network(dims, 0), seed, scale=1.0)
    rng = np.random.default_rng(seed)
    loss, per = lpa_batch_loss(net, (rng.uniform(-1, 1, (9, 2)), rng.normal(size=(9, 1))), [0.1, 0.1, 1.0])
    assert loss >= 0 and np.all(per >= 0)
