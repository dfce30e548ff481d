import numpy as np
import pytest

from helpers_oracles import max_rel_err, numerical_grad
from ssdc import engine
from ssdc.engine import Tape, Tensor

RNG = np.random.default_rng(7)


def check_grad(op, shapes, trials=20, make_input=None, **kwargs):
    """FD-check an op: scalar loss = sum(op(xs) * weights), all inputs perturbed."""
    for t in range(trials):
        xs = [make_input(s) if make_input else RNG.normal(0, 1, s) for s in shapes]
        out_shape = op(*[Tensor(x) for x in xs], **kwargs).data.shape
        weights = RNG.normal(0, 1, out_shape)

        for i in range(len(xs)):
            def f(xi):
                args = [Tensor(x) for x in xs]
                args[i] = Tensor(xi)
                return float((op(*args, **kwargs).data * weights).sum())

            tens = [Tensor(x, requires_grad=(j == i)) for j, x in enumerate(xs)]
            with Tape() as tape:
                loss = engine.sum_(engine.mul(op(*tens, **kwargs), weights))
            tape.backward(loss)
            num = numerical_grad(f, xs[i].copy())
            assert max_rel_err(tens[i].grad, num) < 1e-4, f"{op.__name__} input {i} trial {t}"


class TestPrimitiveGradients:
    def test_add(self):
        check_grad(engine.add, [(3, 4), (3, 4)], trials=5)

    def test_add_broadcast_bias(self):
        check_grad(engine.add, [(3, 4), (4,)], trials=5)

    def test_sub(self):
        check_grad(engine.sub, [(3, 4), (3, 4)], trials=5)

    def test_mul(self):
        check_grad(engine.mul, [(5,), (5,)], trials=5)

    def test_mul_keepdims_broadcast(self):
        check_grad(engine.mul, [(3, 4), (3, 1)], trials=5)

    def test_div(self):
        check_grad(engine.div, [(4, 3), (4, 3)], trials=5,
                   make_input=lambda s: RNG.uniform(0.5, 2.0, s))

    def test_neg(self):
        check_grad(engine.neg, [(6,)], trials=3)

    def test_matmul(self):
        check_grad(engine.matmul, [(3, 4), (4, 2)], trials=5)

    def test_bmm(self):
        check_grad(engine.bmm, [(2, 3, 4), (2, 4, 2)], trials=5)

    def test_transpose(self):
        check_grad(lambda a: engine.transpose(a, (1, 0, 2)), [(2, 3, 4)], trials=3)

    def test_reshape(self):
        check_grad(lambda a: engine.reshape(a, (6, 2)), [(3, 4)], trials=3)

    def test_concat(self):
        check_grad(lambda a, b: engine.concat([a, b], axis=1), [(2, 3), (2, 2)], trials=3)

    def test_slice(self):
        check_grad(lambda a: a[1:3, :2], [(4, 3)], trials=3)

    def test_exp(self):
        check_grad(engine.exp, [(5,)], trials=5)

    def test_log(self):
        check_grad(engine.log, [(5,)], trials=5, make_input=lambda s: RNG.uniform(0.5, 3.0, s))

    def test_log1p(self):
        check_grad(engine.log1p, [(5,)], trials=5, make_input=lambda s: RNG.uniform(0.0, 3.0, s))

    def test_sqrt(self):
        check_grad(engine.sqrt, [(5,)], trials=5, make_input=lambda s: RNG.uniform(0.5, 3.0, s))

    def test_pow_const(self):
        check_grad(lambda a: engine.pow_const(a, 3), [(5,)], trials=5)

    def test_sigmoid(self):
        check_grad(engine.sigmoid, [(7,)], trials=5)

    def test_tanh(self):
        check_grad(engine.tanh, [(7,)], trials=5)

    def test_relu(self):
        # keep inputs away from the kink, where FD is undefined
        check_grad(engine.relu, [(7,)], trials=5,
                   make_input=lambda s: np.where(np.abs(x := RNG.normal(0, 1, s)) < 0.01, 0.5, x))

    def test_clamp(self):
        check_grad(lambda a: engine.clamp(a, -0.8, 0.8), [(7,)], trials=5,
                   make_input=lambda s: np.where(np.abs(np.abs(x := RNG.normal(0, 1, s)) - 0.8) < 0.01, 0.0, x))

    def test_softmax(self):
        check_grad(lambda a: engine.softmax(a, axis=-1), [(3, 5)], trials=5)

    def test_log_softmax(self):
        check_grad(lambda a: engine.log_softmax(a, axis=-1), [(3, 5)], trials=5)

    def test_mean_all(self):
        check_grad(engine.mean, [(3, 4)], trials=3)

    def test_mean_axis_keepdims(self):
        check_grad(lambda a: engine.mean(a, axis=-1, keepdims=True), [(3, 4)], trials=3)

    def test_sum_axis_tuple(self):
        check_grad(lambda a: engine.sum_(a, axis=(1, 2)), [(2, 3, 4)], trials=3)

    def test_layer_norm(self):
        check_grad(engine.layer_norm, [(4, 6)], trials=5)

    def test_avg_pool2(self):
        check_grad(engine.avg_pool2, [(2, 3, 4, 4)], trials=3)


class TestForwardSemantics:
    def test_softmax_uniform_rows(self):
        out = engine.softmax(Tensor(np.zeros((2, 5))), axis=-1)
        assert np.allclose(out.data, 0.2)

    def test_layer_norm_moments(self):
        x = Tensor(RNG.normal(3.0, 2.0, (6, 32)))
        y = engine.layer_norm(x).data
        assert np.abs(y.mean(axis=-1)).max() < 1e-6
        assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-6

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError) as exc:
            engine.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)

    def test_matmul_shape_check(self):
        with pytest.raises(ValueError):
            engine.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_forward_deterministic(self):
        x = RNG.normal(0, 1, (4, 4))
        a = engine.tanh(engine.matmul(Tensor(x), Tensor(x))).data
        b = engine.tanh(engine.matmul(Tensor(x), Tensor(x))).data
        assert np.array_equal(a, b)

    def test_no_tape_no_tracking(self):
        p = Tensor(np.ones(3), requires_grad=True)
        out = engine.mul(p, 2.0)
        assert out._track is False  # nothing recorded outside a tape


class TestComposedGraph:
    def test_three_layer_mlp_matches_fd(self):
        sizes = [(5, 8), (8,), (8, 6), (6,), (6, 1), (1,)]
        params = [RNG.normal(0, 0.5, s) for s in sizes]
        x = RNG.normal(0, 1, (3, 5))

        def forward(ps):
            h = np.tanh(x @ ps[0] + ps[1])
            h = np.tanh(h @ ps[2] + ps[3])
            return float((h @ ps[4] + ps[5]).sum())

        tensors = [Tensor(p, requires_grad=True) for p in params]
        with Tape() as tape:
            h = engine.tanh(engine.add(engine.matmul(Tensor(x), tensors[0]), tensors[1]))
            h = engine.tanh(engine.add(engine.matmul(h, tensors[2]), tensors[3]))
            loss = engine.sum_(engine.add(engine.matmul(h, tensors[4]), tensors[5]))
        tape.backward(loss)

        for i in range(len(params)):
            def f(pi, i=i):
                ps = [p.copy() for p in params]
                ps[i] = pi
                return forward(ps)

            num = numerical_grad(f, params[i].copy())
            assert max_rel_err(tensors[i].grad, num) < 1e-4, f"param {i}"

    def test_gradient_accumulates_over_reuse(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        with Tape() as tape:
            loss = engine.sum_(engine.add(engine.mul(p, 3.0), engine.mul(p, p)))
        tape.backward(loss)
        assert np.allclose(p.grad, 3.0 + 2.0 * 2.0)


class TestSgd:
    def test_zero_lr_keeps_params(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.array([5.0, -1.0])
        engine.sgd_step([p], 0.0)
        assert np.array_equal(p.data, [1.0, 2.0])
        assert p.grad is None

    def test_scalar_update(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        p.grad = np.array(2.0)
        engine.sgd_step([p], 0.1)
        assert np.allclose(p.data, 0.8)

    def test_quadratic_bowl_converges_geometrically(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        for _ in range(50):
            with Tape() as tape:
                loss = engine.mul(p, p)
            tape.backward(loss)
            engine.sgd_step([p], 0.1)
        # p_k = (1 - 2*lr)^k exactly
        assert abs(float(p.data)) < 1e-4
        assert np.isclose(float(p.data), 0.8 ** 50, rtol=1e-9)

    def test_missing_grad_rejected(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(ValueError, match="no gradient"):
            engine.sgd_step([p], 0.1)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = {
            "a.w": Tensor(RNG.normal(0, 1, (3, 4))),
            "b.bias": Tensor(RNG.normal(0, 1, (7,))),
        }
        path = tmp_path / "ckpt.bin"
        engine.save_checkpoint(params, path)
        loaded = engine.load_checkpoint(path)
        assert set(loaded) == set(params)
        for k in params:
            assert np.array_equal(loaded[k], params[k].data)

    def test_manifest_format(self, tmp_path):
        import json
        params = {"w": Tensor(np.zeros((2, 2))), "b": Tensor(np.zeros(3))}
        engine.save_checkpoint(params, tmp_path / "c.bin")
        meta = json.loads((tmp_path / "c.bin.json").read_text())
        assert meta["dtype"] == "<f8"
        entries = {e["name"]: e for e in meta["params"]}
        assert entries["b"]["shape"] == [3]
        assert entries["b"]["offset"] == 0  # sorted order: b before w
        assert entries["w"]["offset"] == 24
