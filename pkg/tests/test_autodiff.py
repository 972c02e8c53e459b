import numpy as np
import pytest

from v2vforge.autodiff import GradTape, OptState, Tensor, adamw_step, check_gradients, load_tensors, save_tensors
from v2vforge.autodiff import tensor as tz
from v2vforge.autodiff.checkpoint import CheckpointError
from v2vforge.autodiff.gradcheck import NondeterministicFunction

R = np.random.default_rng(3)


def _weights(shape):
    # fixed random projection so every output entry matters
    return np.random.default_rng(11).standard_normal(shape)


def _proj(y):
    return (y * _weights(y.shape)).sum()


CASES = {
    "add": (lambda p: p["a"] + p["b"], {"a": (3, 4), "b": (4,)}),
    "sub": (lambda p: p["a"] - p["b"], {"a": (3, 4), "b": (3, 1)}),
    "mul": (lambda p: p["a"] * p["b"], {"a": (2, 3), "b": (2, 3)}),
    "neg": (lambda p: -p["a"], {"a": (5,)}),
    "scale": (lambda p: p["a"] * 2.5, {"a": (5,)}),
    "add_scalar": (lambda p: p["a"] + 1.5, {"a": (5,)}),
    "matmul": (lambda p: p["a"] @ p["b"], {"a": (2, 3, 4), "b": (4, 5)}),
    "matmul_batched": (lambda p: p["a"] @ p["b"], {"a": (2, 3, 4), "b": (2, 4, 5)}),
    "reshape": (lambda p: p["a"].reshape(6, 2), {"a": (3, 4)}),
    "transpose": (lambda p: p["a"].transpose(2, 0, 1), {"a": (2, 3, 4)}),
    "concat": (lambda p: tz.concat([p["a"], p["b"]], axis=1), {"a": (2, 3), "b": (2, 2)}),
    "getitem": (lambda p: p["a"][:, 1:3], {"a": (3, 4)}),
    "getitem_fancy": (lambda p: p["a"][np.array([0, 2, 0])], {"a": (3, 4)}),
    "sum": (lambda p: p["a"].sum(axis=1), {"a": (3, 4)}),
    "mean": (lambda p: p["a"].mean(axis=0, keepdims=True), {"a": (3, 4)}),
    "softmax": (lambda p: tz.softmax(p["a"]), {"a": (3, 5)}),
    "layer_norm": (lambda p: tz.layer_norm(p["a"]), {"a": (3, 6)}),
    "gelu": (lambda p: tz.gelu(p["a"]), {"a": (4, 3)}),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients(name):
    fn, shapes = CASES[name]
    params = {k: R.standard_normal(s) for k, s in shapes.items()}
    err = check_gradients(lambda p: _proj(fn(p)), params)
    assert err <= 1e-6, f"{name}: rel err {err}"


def test_mse_gradient():
    params = {"a": R.standard_normal((3, 4)), "b": R.standard_normal((3, 4))}
    assert check_gradients(lambda p: tz.mse(p["a"], p["b"]), params) <= 1e-6


def test_every_differentiable_primitive_is_covered():
    covered = {n.split("_batched")[0].split("_fancy")[0] for n in CASES} | {"mse"}
    diff = {n for n, p in tz.PRIMITIVES.items() if p.differentiable}
    assert diff <= covered


def test_unused_parameter_gets_zero_gradient():
    with GradTape() as tape:
        x = tape.watch("x", np.ones(3))
        tape.watch("unused", np.ones((2, 2)))
        loss = (x * x).sum()
    g = tape.gradient(loss)
    assert np.array_equal(g["unused"], np.zeros((2, 2)))
    assert np.allclose(g["x"], 2.0)


def test_non_scalar_loss_rejected():
    with GradTape() as tape:
        x = tape.watch("x", np.ones(3))
        y = x * 2.0
    with pytest.raises(ValueError):
        tape.gradient(y)


def test_non_finite_loss_reported():
    with GradTape() as tape:
        x = tape.watch("x", np.array([np.inf, 1.0]))
        y = x.sum()
    with pytest.raises(FloatingPointError):
        tape.gradient(y)


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3))
    y = x * 3.0
    assert not y.requires_grad


def test_tape_gradient_doctest_value():
    with GradTape() as tape:
        x = tape.watch("x", np.array([3.0]))
        y = (x * x).sum()
    assert tape.gradient(y)["x"][0] == 6.0


def test_float32_stays_float32():
    a = Tensor(np.ones((2, 3), np.float32))
    for out in (tz.gelu(a), tz.layer_norm(a), a.mean(axis=1), a * 0.5, tz.softmax(a)):
        assert out.dtype == np.float32


def test_gradcheck_detects_nondeterminism():
    calls = []

    def f(p):
        calls.append(1)
        return p["a"].sum() * float(len(calls))

    with pytest.raises(NondeterministicFunction):
        check_gradients(f, {"a": np.ones(2)})


def test_adamw_lr_zero_and_frozen():
    p = {"a": np.ones(3, np.float32), "frozen": np.full(2, 5.0, np.float32)}
    g = {"a": np.array([1.0, -2.0, 0.5], np.float32)}
    new, state = adamw_step(p, g, OptState(lr=0.0, weight_decay=0.1))
    assert np.array_equal(new["a"], p["a"]) and new["frozen"] is p["frozen"]
    new, _ = adamw_step(p, g, OptState(lr=0.1))
    # first Adam step moves each entry by ~lr against the gradient sign
    assert np.allclose(new["a"], 1.0 - 0.1 * np.sign(g["a"]), atol=1e-6)


def test_adamw_shape_mismatch():
    with pytest.raises(ValueError):
        adamw_step({"a": np.ones(3)}, {"a": np.ones(2)}, OptState())


def test_checkpoint_round_trip(tmp_path):
    tensors = {"w": R.standard_normal((3, 4)).astype(np.float32), "b": np.zeros(4, np.float32), "s": np.float32(2.0).reshape(())}
    path = tmp_path / "x.rtns"
    save_tensors(tensors, path)
    back = load_tensors(path)
    assert set(back) == set(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "x.rtns"
    save_tensors({"w": np.ones((2, 2), np.float32)}, path)
    raw = path.read_bytes()
    (tmp_path / "bad.rtns").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "bad.rtns")
    (tmp_path / "short.rtns").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_tensors(tmp_path / "short.rtns")
