import numpy as np
import pytest
import torch

from cfa_forecast import nnet
from cfa_forecast.exceptions import ContractError
from cfa_forecast.models import CFANet, LSTMNet, mean_forecast, read_key_dump, write_key_dump
from oracles import autograd_grad, central_difference_grad, directional_fd, relative_error

D = torch.float64


def small_cfa(seed=0, **kw):
    args = dict(d_model=8, n_heads=2, n_conv_layers=2, kernel_size=3, hidden=8, disc_hidden=8, k=1)
    args.update(kw)
    return CFANet(seed=seed, dtype=D, **args)


def _series(seed, B, T):
    g = torch.Generator().manual_seed(seed)
    t = torch.arange(T, dtype=D)
    phase = torch.rand(B, 1, generator=g, dtype=D) * 6.28
    return torch.sin(2 * np.pi * t / 7 + phase) + 0.1 * torch.randn(B, T, generator=g, dtype=D)


# ------------------------------------------------------ composed gradients


@pytest.mark.parametrize("seed", range(20))
def test_cfa_forward_directional_derivative(seed):
    cfg = [dict(), dict(n_heads=1), dict(kernel_size=5), dict(n_conv_layers=1), dict(k=2)][seed % 5]
    net = small_cfa(seed, **cfg)
    ctx, tgt = _series(seed, 2, 16), _series(seed + 100, 2, 4)
    lab = torch.rand(2, net.k, generator=torch.Generator().manual_seed(seed), dtype=D)
    lam = 0.5

    def loss():
        pred, K, Q = net.teacher_forced(ctx, tgt)
        return nnet.mse_loss(pred, tgt) - lam * nnet.mse_loss(net.discriminate(K, Q), lab)

    params = list(net.parameters())
    g = torch.Generator().manual_seed(1000 + seed)
    for _ in range(3):
        direction = [torch.randn(p.shape, generator=g, dtype=D) for p in params]
        net.zero_grad()
        loss().backward()
        analytic = sum((p.grad * d).sum() for p, d in zip(params, direction)).item()
        numeric = directional_fd(loss, params, direction)
        assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12) < 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_discriminator_grad_wrt_inputs_and_params(seed):
    net = small_cfa(seed, d_model=4, disc_hidden=3, k=1 + seed % 2)
    g = torch.Generator().manual_seed(seed)
    K, Q = torch.randn(2, 5, 4, generator=g, dtype=D), torch.randn(2, 5, 4, generator=g, dtype=D)
    lab = torch.rand(2, net.k, generator=g, dtype=D)
    dparams = [p.detach().clone() for p in net.disc.parameters()]

    def f(K, Q, *ps):
        with torch.no_grad():
            for p, v in zip(net.disc.parameters(), ps):
                p.copy_(v)
        return nnet.mse_loss(net.discriminate(K, Q), lab)

    def f_functional(K, Q, *ps):
        h = torch.cat([K.mean(-2), Q.mean(-2)], -1)
        for i in range(0, len(ps), 2):
            h = nnet.linear(h, ps[i], ps[i + 1])
            if i < len(ps) - 2:
                h = torch.nn.functional.gelu(h)
        return nnet.mse_loss(torch.sigmoid(h), lab)

    tensors = [K, Q] + dparams
    assert torch.allclose(f(*tensors), f_functional(*tensors))
    a = autograd_grad(f_functional, tensors)
    n = central_difference_grad(f, tensors)
    assert relative_error(a, n) < 1e-5


# ---------------------------------------------------------------- behaviour


def test_teacher_forcing_equals_autoregressive_on_own_outputs():
    net = small_cfa(3)
    ctx = _series(0, 3, 20)
    with torch.no_grad():
        y = net.forecast(ctx, 6)
        pred, _, _ = net.teacher_forced(ctx, y)
    assert torch.allclose(pred, y, atol=1e-12)


def test_incremental_forecast_matches_full_reencode():
    net = small_cfa(4, n_conv_layers=3, kernel_size=3)
    ctx = _series(1, 2, 15)
    with torch.no_grad():
        a = net.forecast(ctx, 8, incremental=True)
        b = net.forecast(ctx, 8, incremental=False)
    assert torch.allclose(a, b, atol=1e-12)


def test_lstm_teacher_forcing_equals_autoregressive():
    net = LSTMNet(hidden=6, n_layers=2, seed=0, dtype=D)
    ctx = _series(2, 3, 12)
    with torch.no_grad():
        y = net.forecast(ctx, 5)
        pred, K, Q = net.teacher_forced(ctx, y)
    assert K is None and Q is None
    assert torch.allclose(pred, y, atol=1e-12)


def test_encoder_is_causal():
    net = small_cfa(5)
    x = _series(3, 1, 20)
    x2 = x.clone()
    x2[..., 12:] += 3.0
    with torch.no_grad():
        K1, Q1, V1 = net.encode(x)
        K2, Q2, V2 = net.encode(x2)
    assert torch.equal(K1[..., :12, :], K2[..., :12, :])
    assert torch.equal(V1[..., :12, :], V2[..., :12, :])


def test_attention_weights_do_not_depend_on_values():
    net = small_cfa(6)
    K, Q, V = net.encode(_series(4, 2, 12))
    q = torch.arange(1, 12)
    _, w1 = net.attend(K, Q, V, q, return_weights=True)
    _, w2 = net.attend(K, Q, torch.randn_like(V), q, return_weights=True)
    assert torch.equal(w1, w2)
    # query p only sees keys before it
    for i, p in enumerate(q.tolist()):
        assert torch.all(w1[..., i, p:] == 0)


def test_discriminator_isolation_gradients():
    net = small_cfa(7)
    ctx, tgt = _series(5, 2, 16), _series(6, 2, 4)
    pred, K, Q = net.teacher_forced(ctx, tgt)
    lf = nnet.mse_loss(pred, tgt)
    disc = list(net.disc.parameters())
    grads = torch.autograd.grad(lf, disc, allow_unused=True)
    assert all(g is None or torch.all(g == 0) for g in grads)
    ld = nnet.mse_loss(net.discriminate(K, Q), torch.full((2, 1), 0.1, dtype=D))
    value_path = list(net.proj_v.parameters()) + list(net.attn_out.parameters()) + list(net.decoder.parameters())
    grads = torch.autograd.grad(ld, value_path, allow_unused=True)
    assert all(g is None or torch.all(g == 0) for g in grads)


def test_discriminator_output_shape_range_and_pooling_symmetry():
    net = small_cfa(8, k=3)
    g = torch.Generator().manual_seed(0)
    K, Q = torch.randn(4, 9, 8, generator=g, dtype=D), torch.randn(4, 9, 8, generator=g, dtype=D)
    out = net.discriminate(K, Q)
    assert out.shape == (4, 3)
    assert torch.all((out > 0) & (out < 1))
    perm = torch.randperm(9, generator=g)
    assert torch.allclose(net.discriminate(K[:, perm], Q[:, perm]), out, atol=1e-14)
    with pytest.raises(ContractError):
        net.discriminate(K, Q[:, :5])


def test_param_groups_partition():
    net = small_cfa(9)
    groups = net.param_groups()
    names = set(dict(net.named_parameters()))
    gen, dis = set(groups[nnet.GENERATIVE]), set(groups[nnet.DISCRIMINATIVE])
    assert gen | dis == names and not gen & dis
    assert dis == {n for n in names if n.startswith("disc.")}
    assert net.disc.layers[-1].W.shape[1] == net.k


def test_forecast_is_finite_on_random_inputs():
    net = CFANet(seed=0)
    g = torch.Generator().manual_seed(0)
    ctx = torch.randn(1000, 40, generator=g) * torch.rand(1000, 1, generator=g) * 5
    with torch.no_grad():
        y = net.forecast(ctx, 3)
    assert y.shape == (1000, 3) and torch.all(torch.isfinite(y))


def test_zero_decoder_gives_zero_forecast():
    net = small_cfa(0, zero_decoder=True)
    with torch.no_grad():
        assert torch.all(net.forecast(_series(0, 2, 10), 4) == 0)


def test_contract_errors():
    with pytest.raises(ContractError):
        CFANet(d_model=10, n_heads=4)
    with pytest.raises(ContractError):
        CFANet(kernel_size=4)
    net = small_cfa()
    with pytest.raises(ContractError):
        net.forecast(_series(0, 1, 10), 0)
    with pytest.raises(ContractError):
        net.encode(torch.zeros(1, 2, dtype=D))


def test_mean_forecast():
    assert mean_forecast([1.0, 2.0, 6.0], 2).tolist() == [3.0, 3.0]
    np.testing.assert_array_equal(mean_forecast(np.ones((2, 4)), 3), np.ones((2, 3)))
    with pytest.raises(ContractError):
        mean_forecast([], 2)


def test_key_dump_roundtrip(tmp_path):
    reps = np.arange(6, dtype=float).reshape(3, 2) / 7
    periods = np.array([15.0, 16.5, 17.25])
    p = tmp_path / "keys.csv"
    write_key_dump(p, reps, periods)
    assert p.read_text().splitlines()[0] == "k0,k1,period"
    r, q = read_key_dump(p)
    assert np.array_equal(r, reps) and np.array_equal(q, periods)
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ContractError):
        read_key_dump(p)
