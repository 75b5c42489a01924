import numpy as np
import pytest

from asetm.autodiff import AdamW, Tensor, as_params, backward, grad_check, load_checkpoint, no_grad, ops, \
    save_checkpoint
from asetm.checks import loss_cases, primitive_cases

PRIMITIVES = primitive_cases(0)
LOSSES = loss_cases(0)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradcheck(name):
    f, inputs = PRIMITIVES[name]
    rep = grad_check(f, inputs, h=1e-5, tol=1e-5)
    assert rep.passed, f"{name}: {rep}"


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_loss_gradcheck(name):
    f, inputs = LOSSES[name]
    rep = grad_check(f, inputs, h=1e-4, tol=1e-5)
    assert rep.passed, f"{name}: {rep}"


def test_gradcheck_catches_wrong_gradient():
    from asetm.autodiff.tensor import record

    def bad_square(a):
        return record("bad", a.data ** 2, (a,), lambda g: (3.0 * g * a.data,))

    rep = grad_check(lambda a: ops.sum(bad_square(a)), [Tensor(np.linspace(0.5, 1.5, 6))])
    assert not rep.passed


def test_gradient_accumulates_over_reuse():
    a = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    backward(ops.sum(ops.add(ops.mul(a, a), a)))
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = ops.mul(a, 2.0)
    assert not out.requires_grad
    with pytest.raises(ValueError):
        backward(ops.sum(out))


def test_broadcast_mismatch_raises():
    with pytest.raises(ValueError):
        ops.add(Tensor(np.ones((3, 4))), Tensor(np.ones(3)))


def test_backward_needs_scalar():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ops.mul(a, 2.0))


def test_operator_overloads():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = ((a * 3.0 - 1.0) / 2.0 + a).sum()
    backward(out)
    np.testing.assert_allclose(a.grad, [2.5, 2.5])


def test_adamw_first_step_and_decay():
    p = as_params({"w": np.array([1.0, -2.0])})
    opt = AdamW(p, lr=0.1, weight_decay=0.0)
    p["w"].grad = np.array([0.5, -3.0])
    opt.step()
    # the bias-corrected first step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p["w"].data, [0.9, -1.9], atol=1e-7)
    q = as_params({"w": np.array([1.0])})
    opt = AdamW(q, lr=0.1, weight_decay=0.5)
    q["w"].grad = np.zeros(1)
    opt.step()
    np.testing.assert_allclose(q["w"].data, [0.95])


def test_adamw_minimises_quadratic():
    p = as_params({"x": np.array([3.0, -4.0])})
    opt = AdamW(p, lr=0.05, weight_decay=0.0)
    for _ in range(500):
        opt.zero_grad()
        backward(ops.sum(ops.square(p["x"])))
        opt.step()
    assert np.max(np.abs(p["x"].data)) < 1e-2


def test_grad_clip_scales_update():
    p = as_params({"w": np.zeros(2)})
    opt = AdamW(p, grad_clip=1.0)
    p["w"].grad = np.array([30.0, 40.0])
    assert opt.grad_norm() == pytest.approx(50.0)
    opt.step()
    np.testing.assert_allclose(opt.m["w"], (1 - 0.8) * np.array([0.6, 0.8]))


def test_optimizer_state_round_trip(tmp_path):
    p = as_params({"a": np.ones((2, 3)), "b": np.zeros(1)})
    opt = AdamW(p)
    for k in p:
        p[k].grad = np.ones_like(p[k].data)
    opt.step()
    blob = {**{k: v.data for k, v in p.items()}, **opt.state_tensors()}
    save_checkpoint(tmp_path / "x.ckpt", blob)
    back = load_checkpoint(tmp_path / "x.ckpt")
    assert set(back) == set(blob)
    for k in blob:
        np.testing.assert_array_equal(back[k], blob[k])
    opt2 = AdamW(as_params({k: back[k] for k in p}))
    opt2.load_state_tensors(back)
    assert opt2.step_count == 1
    np.testing.assert_array_equal(opt2.v["a"], opt.v["a"])


def test_checkpoint_corruption(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", {"x": np.arange(3.0)})
    raw = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXXXX" + raw[6:])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "long.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "long.ckpt")


def test_scalar_checkpoint(tmp_path):
    save_checkpoint(tmp_path / "s.ckpt", {"s": np.float64(2.5)})
    assert load_checkpoint(tmp_path / "s.ckpt")["s"] == 2.5
