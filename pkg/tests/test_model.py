import numpy as np
import pytest

from helmnet import layers as L
from helmnet.model import ModelConfig, build, format_summary, summarize
from helmnet.optim import softmax_cross_entropy
from helmnet.tensor import ShapeError
from oracles import assert_grad_close, numeric_grad


def _convs(model):
    return [l for l in model.layers if isinstance(l, L.Conv2d)]


def _linears(model):
    return [l for l in model.layers if isinstance(l, L.Linear)]


def test_final_channel_progression():
    m = build(ModelConfig("final"))
    assert [(c.in_ch, c.out_ch) for c in _convs(m)] == [(3, 11), (11, 22), (22, 44)]
    assert _linears(m)[0].in_features == 44 * 26 * 26 == 29_744
    assert [l.out_features for l in _linears(m)] == [200, 100, 50, 2]


def test_initial_and_modified_layout():
    m = build(ModelConfig("initial"))
    assert len(_convs(m)) == 1
    assert [l.out_features for l in _linears(m)] == [40, 2]
    m = build(ModelConfig("modified"))
    assert [c.out_ch for c in _convs(m)] == [11, 22]
    assert [l.out_features for l in _linears(m)] == [100, 50, 2]


def test_unknown_variant():
    with pytest.raises(ValueError):
        ModelConfig("huge")


def test_summary_rows_final():
    rows = {r.layer_name: r for r in summarize(build(ModelConfig("final")))}
    assert (rows["Conv2d-1"].output_shape, rows["Conv2d-1"].parameter_count) == ("222x222", 308)
    assert rows["FC3"].parameter_count == 5_050
    assert rows["Output"].parameter_count == 102
    assert rows["Conv2d-3"].parameter_count == 8_756 and rows["Conv2d-3"].deviates
    assert rows["FC1"].parameter_count == 5_949_000 and rows["FC1"].deviates
    total = 308 + (11 * 9 * 22 + 22) + 8_756 + 5_949_000 + 20_100 + 5_050 + 102
    assert rows["Total"].parameter_count == total
    assert rows["Total"].reference_count == 5_995_698
    text = format_summary(list(rows.values()))
    assert "lists 8,760" in text and "lists 5,950,000" in text


def test_summary_shapes_follow_pool_and_conv_law():
    rows = summarize(build(ModelConfig("final", dropout_rate=0.1)))
    shapes = [r.output_shape for r in rows if r.layer_name.startswith(("Conv2d", "MaxPool2d"))]
    assert shapes == ["222x222", "111x111", "109x109", "54x54", "52x52", "26x26"]
    drops = [r.output_shape for r in rows if r.layer_name == "Dropout"]
    assert drops == ["54x54", "26x26", "200", "100", "50"]


def test_flags_preserve_conv_and_linear_counts():
    plain = build(ModelConfig("final"))
    bn = build(ModelConfig("final", use_batchnorm=True, dropout_rate=0.25))
    count = lambda m: [l.parameter_count for l in m.layers if isinstance(l, (L.Conv2d, L.Linear))]
    assert count(plain) == count(bn)
    assert bn.parameter_count - plain.parameter_count == 2 * (11 + 22 + 44)


def test_build_is_deterministic():
    a = build(ModelConfig("modified", input_size=32, init_seed=5))
    b = build(ModelConfig("modified", input_size=32, init_seed=5))
    for (_, pa, _), (_, pb, _) in zip(a.named_parameters(), b.named_parameters()):
        assert pa.tobytes() == pb.tobytes()


def test_forward_shapes_and_determinism(rng):
    m = build(ModelConfig("final", use_batchnorm=True, dropout_rate=0.1))
    x = rng.random((2, 3, 224, 224), dtype=np.float32)
    y1 = m.forward(x, train=False)
    y2 = m.forward(x, train=False)
    assert y1.shape == (2, 2) and y1.tobytes() == y2.tobytes()
    with pytest.raises(ShapeError):
        m.forward(np.zeros((1, 3, 64, 64), np.float32))


def test_train_equals_eval_without_stochastic_layers(rng):
    m = build(ModelConfig("modified", input_size=32))
    x = rng.random((3, 3, 32, 32), dtype=np.float32)
    assert np.array_equal(m.forward(x, train=True), m.forward(x, train=False))


def test_backward_contracts(rng):
    m = build(ModelConfig("initial", input_size=16, use_batchnorm=True, dropout_rate=0.2))
    with pytest.raises(L.ContractError):
        m.backward(np.zeros((2, 2), np.float32))
    x = rng.random((2, 3, 16, 16), dtype=np.float32)
    m.forward(x, train=True)
    m.backward(np.zeros((2, 2), np.float32))
    for name, p, g in m.named_parameters():
        assert g.shape == p.shape, name
        assert not g.any(), name


def _whole_model_check(cfg, n=3, seed=0, per_tensor=12, h=1e-5):
    # A deep ReLU/max-pool stack is piecewise linear; h=1e-3 steps cross kinks,
    # so the whole-model check uses a smaller step than the per-layer checks.
    model = build(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 20, size=(n,) + cfg.input_shape)
    labels = np.arange(n) % 2
    model.set_step(3)

    def loss():
        return softmax_cross_entropy(model.forward(x, train=True), labels).loss

    out = softmax_cross_entropy(model.forward(x, train=True), labels)
    model.zero_grad()
    gx = model.backward(out.logit_grad)
    assert_grad_close(gx, numeric_grad(loss, x, h=h), 1e-3, atol=1e-7)
    for name, p, g in model.named_parameters():
        idx = rng.choice(p.size, size=min(per_tensor, p.size), replace=False)
        num = numeric_grad(loss, p, h=h, indices=idx)
        assert_grad_close(g, num, 1e-3, atol=1e-7, indices=idx)


def test_whole_model_gradient_initial_8x8():
    _whole_model_check(ModelConfig("initial", use_batchnorm=True, dropout_rate=0.2, input_size=8))


def test_whole_model_gradient_final_shrunk():
    # 22x22 is the smallest input the three-block stack accepts
    _whole_model_check(ModelConfig("final", use_batchnorm=True, dropout_rate=0.1, input_size=22), seed=1)
