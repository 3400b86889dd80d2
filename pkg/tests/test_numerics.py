import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grad_errors
from trajoutlier.errors import DataError
from trajoutlier.numerics import (
    AdamState,
    ShapeError,
    Tensor,
    adam_step,
    cosine_sim,
    load_checkpoint,
    lr_at,
    no_grad,
    save_checkpoint,
    seeded_rng,
    stable_hash,
)
from trajoutlier.numerics import tensor as T
from trajoutlier.numerics.gradcheck import rel_error

TOL = 1e-5


def test_matmul_forward():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_add_broadcast_error():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))


def test_add_gradient_unbroadcasts():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a + b).sum().backward()
    assert b.grad.shape == (4,)
    assert np.array_equal(b.grad, np.full(4, 3.0))


@pytest.mark.parametrize("name,build,shapes", [
    ("matmul", lambda t: T.matmul(t[0], t[1]).sum(), [(3, 4), (4, 2)]),
    ("batched matmul", lambda t: (T.matmul(t[0], t[1]) ** 2).sum(), [(2, 3, 4), (4, 5)]),
    ("batched both", lambda t: T.matmul(t[0], t[1]).tanh().sum(), [(2, 3, 4), (2, 4, 3)]),
    ("mul/div", lambda t: (t[0] * t[1] / (t[1] * t[1] + 1.0)).sum(), [(3, 4), (4,)]),
    ("tanh/exp/log", lambda t: (t[0].tanh().exp() + (t[0] * t[0] + 1.0).log()).sum(), [(5,)]),
    ("relu", lambda t: (t[0].relu() * t[1]).sum(), [(6,), (6,)]),
    ("sqrt/power", lambda t: (T.sqrt(t[0] * t[0] + 1.0) + T.power(t[0], 3)).sum(), [(4,)]),
    ("logsumexp", lambda t: T.logsumexp(t[0], axis=1).sum(), [(3, 5)]),
    ("softmax", lambda t: (T.softmax(t[0], axis=-1) * t[1]).sum(), [(3, 5), (3, 5)]),
    ("l2_normalize", lambda t: (T.l2_normalize(t[0]) * t[1]).sum(), [(3, 5), (3, 5)]),
    ("layer_norm", lambda t: (T.layer_norm(t[0], t[1], t[2]) * t[3]).sum(), [(3, 6), (6,), (6,), (3, 6)]),
    ("mean", lambda t: (t[0].mean(axis=0) ** 2).sum(), [(4, 3)]),
    ("transpose", lambda t: (T.transpose(t[0], (1, 2, 0)) * t[1]).sum(), [(2, 3, 4), (3, 4, 2)]),
    ("reshape", lambda t: (t[0].reshape(6, 2) * t[1]).sum(), [(3, 4), (6, 2)]),
    ("concat", lambda t: (T.concat([t[0], t[1]], axis=1) ** 2).sum(), [(2, 3), (2, 2)]),
    ("stack", lambda t: (T.stack([t[0], t[1]], axis=1) ** 2).sum(), [(2, 3), (2, 3)]),
    ("getitem", lambda t: (t[0][:, 1:3] ** 2).sum() + (t[0][[0, 0, 1]] ** 2).sum(), [(3, 4)]),
    ("take", lambda t: (T.take(t[0], [2, 0, 2]) * t[1]).sum(), [(3, 4), (3, 4)]),
    ("where", lambda t: T.where(np.array([True, False, True]), t[0], t[1]).exp().sum(), [(3,), (3,)]),
    ("masked_mean", lambda t: (T.masked_mean(t[0], np.array([[1, 1, 0], [0, 0, 0]]), axis=1) ** 2).sum(),
     [(2, 3, 4)]),
])
def test_op_gradients(name, build, shapes, rng):
    arrays = [rng.normal(size=s) for s in shapes]
    errs = grad_errors(build, arrays)
    assert max(errs) < TOL, (name, errs)


def test_masked_mean_all_false_slice_is_zero():
    x = Tensor(np.ones((2, 3, 4)))
    out = T.masked_mean(x, np.zeros((2, 3), dtype=bool), axis=1)
    assert np.array_equal(out.data, np.zeros((2, 4)))


def test_l2_normalize_zero_vector_is_finite():
    v = Tensor(np.zeros(4), requires_grad=True)
    out = T.l2_normalize(v)
    out.sum().backward()
    assert np.all(np.isfinite(out.data)) and np.all(np.isfinite(v.grad))


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (w * 2.0).sum()
    assert not y.requires_grad


def test_backward_needs_scalar():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3), requires_grad=True).exp().backward()


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    assert x.grad[0] == pytest.approx(8.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_logsumexp_matches_naive(rows, cols, seed):
    a = np.random.default_rng(seed).normal(scale=3.0, size=(rows, cols))
    assert np.allclose(T.logsumexp(Tensor(a), axis=1).data, np.log(np.exp(a).sum(axis=1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_l2_normalize_unit_norm(d, seed):
    a = np.random.default_rng(seed).normal(size=(3, d))
    n = np.linalg.norm(T.l2_normalize(Tensor(a)).data, axis=-1)
    assert np.allclose(n, 1.0, atol=1e-12)


# -- rng ----------------------------------------------------------------------

def test_seeded_rng_is_reproducible_per_stream():
    a = seeded_rng(7, "map").random(5)
    b = seeded_rng(7, "map").random(5)
    c = seeded_rng(7, "agent/a00001").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stable_hash_matches_sha256_prefix():
    for key in ("map", "agent/a00001", ""):
        expect = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
        assert stable_hash(key) == expect
    assert stable_hash(5) == 5
    with pytest.raises(ValueError):
        stable_hash(-1)


# -- optimizer ----------------------------------------------------------------

def test_lr_schedule():
    assert lr_at(0) == 5e-3
    assert lr_at(49) == 5e-3
    assert lr_at(50) == pytest.approx(4.5e-3)
    assert lr_at(199) == pytest.approx(5e-3 * 0.9 ** 3)


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first step exactly lr * sign(g) (up to eps)
    p = Tensor(np.array([1.0, -2.0]))
    st_ = AdamState.init([p], lr=0.1)
    adam_step([p], [np.array([0.5, -3.0])], st_)
    assert np.allclose(p.data, [0.9, -1.9], atol=1e-6)


def test_adam_none_grad_leaves_param():
    p = Tensor(np.array([1.0, 2.0]))
    st_ = AdamState.init([p])
    for _ in range(3):
        adam_step([p], [None], st_)
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    st_ = AdamState.init([p], lr=0.1)
    for _ in range(500):
        p.grad = None
        (p * p).sum().backward()
        adam_step([p], [p.grad], st_)
    assert np.linalg.norm(p.data) < 1e-2


# -- kernels ------------------------------------------------------------------

def test_cosine_sim_cases():
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 1], [2, 2]) == pytest.approx(1.0)
    assert cosine_sim([0, 0], [1, 2]) == 0.0


def test_rel_error_zero_when_both_vanish():
    assert rel_error(np.zeros(3), np.zeros(3)) == 0.0
    assert rel_error([1.0, 0.0], [1.0, 0.0]) == 0.0


# -- checkpoint ---------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    tensors = {"b": rng.normal(size=(2, 3)), "a": rng.normal(size=(4,)), "s": np.array(1.5)}
    meta = {"arch": "cnn", "hash": "abc", "nested": {"x": [1, 2]}}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, meta)
    back, meta2 = load_checkpoint(path)
    assert meta2 == meta
    assert set(back) == set(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    raw = path.read_bytes()
    save_checkpoint(path, tensors, meta)
    assert path.read_bytes() == raw


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 20)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"a": np.ones(2)}, {})
    with open(path, "ab") as fh:
        fh.write(b"x")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_is_bit_exact(tmp_path):
    path = tmp_path / "m.ckpt"
    x = np.array([math.pi, -0.0, 1e-300])
    save_checkpoint(path, {"x": x}, {})
    assert load_checkpoint(path)[0]["x"].tobytes() == x.tobytes()


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"a": np.ones(8)}, {"k": 1})
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(DataError):
        load_checkpoint(path)
