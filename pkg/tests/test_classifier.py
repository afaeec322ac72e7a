import numpy as np
import pytest

from helpers import numeric_grad, rel_err
from textdistill import autodiff as ad
from textdistill.classifier import (ArchSpec, InitSpec, TextCnnParams, forward, init, loss,
                                    predict, sgd_step)
from textdistill.errors import DimensionError, LabelError, SchemaError

ARCH = ArchSpec(filters_per_height=3, fc_hidden=5, classes=3, embed_dim=4, extra_fc_layers=1)


def reference_forward(p, x):
    """Plain-loop text CNN: conv, ReLU, max-over-time, FC stack."""
    pooled = []
    for h in ARCH.filter_heights:
        w, b = p[f"conv{h}.weight"], p[f"conv{h}.bias"]
        for i in range(w.shape[0]):
            acts = [max(0.0, b[i] + np.sum(w[i] * x[t:t + h])) for t in range(len(x) - h + 1)]
            pooled.append(max(acts))
    hidden = np.array(pooled)
    for k in range(ARCH.extra_fc_layers):
        hidden = np.maximum(hidden @ p[f"fc{k}.weight"] + p[f"fc{k}.bias"], 0.0)
    return hidden @ p["out.weight"] + p["out.bias"]


def test_forward_matches_reference_loops():
    params = init(ARCH, InitSpec("random", 3))
    rng = np.random.default_rng(0)
    p = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in params.numpy().items()}
    params = TextCnnParams(ARCH, p)
    x = rng.normal(size=(2, 7, 4))
    out = forward(params, x).data
    for b in range(2):
        np.testing.assert_allclose(out[b], reference_forward(p, x[b]), rtol=1e-10)
    np.testing.assert_allclose(forward(params, x[0]).data, out[0])


def test_parameter_count():
    f, d, hid, c = 3, 4, 5, 3
    expected = sum(f * h * d + f for h in (3, 4, 5)) + (3 * f) * hid + hid + hid * c + c
    assert ARCH.parameter_count() == expected
    assert init(ARCH).flat().size == expected


def test_init_fixed_vs_random():
    a = init(ARCH, InitSpec("fixed", 1), draw_index=0)
    b = init(ARCH, InitSpec("fixed", 1), draw_index=9)
    c = init(ARCH, InitSpec("random", 1), draw_index=0)
    d = init(ARCH, InitSpec("random", 1), draw_index=1)
    assert a.equals(b) and not c.equals(d) and not a.equals(c)


def test_init_is_glorot_uniform_with_zero_bias():
    arch = ArchSpec(filters_per_height=64, embed_dim=16, fc_hidden=64, extra_fc_layers=1)
    params = init(arch, InitSpec("random", 0))
    for name, value in params.numpy().items():
        if name.endswith("bias"):
            assert np.all(value == 0)
            continue
        if value.ndim == 3:
            fan_in, fan_out = value.shape[1] * value.shape[2], value.shape[0]
        else:
            fan_in, fan_out = value.shape
        bound = np.sqrt(6 / (fan_in + fan_out))
        assert np.abs(value).max() <= bound
        assert np.var(value) == pytest.approx(bound ** 2 / 3, rel=0.2)


def test_loss_gradient_matches_finite_differences():
    params = init(ARCH, InitSpec("random", 2))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 6, 4))
    y = np.eye(3)[[0, 2, 1]]
    leaves = params.leaves()
    grads = ad.grad(loss(leaves, x, y), leaves.values())
    for name, g in zip(params.names(), grads):
        def f(v, name=name):
            t = dict(params.numpy())
            t[name] = v
            return loss(TextCnnParams(ARCH, t), x, y).item()
        assert rel_err(g.data, numeric_grad(f, params.numpy()[name])) < 1e-5, name


def test_loss_validates_labels_and_lengths():
    params = init(ARCH)
    x = np.zeros((2, 6, 4))
    with pytest.raises(LabelError):
        loss(params, x, np.array([[0.5, 0.2, 0.2], [1, 0, 0]]))
    with pytest.raises(DimensionError):
        loss(params, np.zeros((2, 4, 4)), np.eye(3)[:2])
    with pytest.raises(DimensionError):
        loss(params, x, np.eye(2))


def test_sgd_step_moves_against_gradient():
    params = init(ARCH, InitSpec("random", 4))
    x = np.random.default_rng(3).normal(size=(6, 6, 4))
    y = np.eye(3)[[0, 1, 2, 0, 1, 2]]
    before = loss(params, x, y).item()
    leaves = params.leaves()
    grads = ad.grad(loss(leaves, x, y), leaves.values())
    with ad.no_grad():
        after = loss(sgd_step(params, grads, 0.05), x, y).item()
    assert after < before
    with pytest.raises(ValueError):
        sgd_step(params, grads, -1.0)


def test_params_roundtrip(tmp_path):
    params = init(ARCH, InitSpec("random", 5))
    path = tmp_path / "p.bin"
    params.save(path)
    back = TextCnnParams.load(path)
    assert back.arch == ARCH and back.equals(params)
    with pytest.raises(SchemaError):
        TextCnnParams.from_bytes(b"format=nope\n\n")


def test_predict_shape():
    preds = predict(init(ARCH), np.zeros((4, 6, 4)))
    assert preds.shape == (4,) and preds.dtype.kind == "i"


def test_arch_validation():
    with pytest.raises(ValueError):
        ArchSpec(extra_fc_layers=4)
    with pytest.raises(ValueError):
        InitSpec("sometimes")
