from __future__ import annotations

import numpy as np
import pytest

from conftest import random_csr, split_for, typed_graph
from gtnet.autodiff import OP_KINDS, NonFiniteError, Tape, UnsupportedOp, finite_diff_check
from gtnet.model import GtnConfig, GtnParams, gtn_forward, init_params, loss
from gtnet.sparse import CombinePlan, CsrMatrix, ShapeError


def _vals(x):
    return x.values if isinstance(x, CsrMatrix) else np.asarray(x, dtype=np.float64)


def _perturb(x, d, t):
    if isinstance(x, CsrMatrix):
        return x.with_values(x.values + t * d)
    return x + t * d


def check_adjoint(build, inputs, rng, h=1e-4, tol=1e-8):
    """<J u, v> against <u, J^T v>, with J u from a 5-point central stencil."""
    tape = Tape()
    ids = [tape.leaf(x) for x in inputs]
    out = build(tape, ids)
    y = _vals(tape.value(out))
    v = rng.standard_normal(y.shape)
    grads = tape.vjp(out, v)
    dirs = [rng.standard_normal(_vals(x).shape) for x in inputs]

    def f(t):
        tp = Tape()
        ids_t = [tp.leaf(_perturb(x, d, t)) for x, d in zip(inputs, dirs)]
        return _vals(tp.value(build(tp, ids_t)))

    jvp = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)
    lhs = float(np.sum(jvp * v))
    rhs = sum(float(np.sum(d * grads.get(i, 0.0))) for d, i in zip(dirs, ids))
    assert abs(lhs - rhs) <= tol * max(1.0, abs(lhs)), (lhs, rhs)
    return grads, ids


def test_softmax_sum_has_zero_gradient(rng):
    tape = Tape()
    w = tape.param("w", rng.standard_normal(5))
    grads = tape.backward(tape.sum(tape.softmax(w)))
    assert np.allclose(grads["w"], 0.0, atol=1e-15)


def test_matmul_weight_gradient_is_xt_g(rng):
    x, w = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
    tape = Tape()
    wid = tape.param("W", w)
    y = tape.matmul(tape.const(x), wid)
    g = rng.standard_normal((4, 2))
    grads = tape.vjp(y, g)
    assert np.allclose(grads[wid], x.T @ g, atol=1e-14)


def test_adjoint_softmax(rng):
    check_adjoint(lambda t, i: t.softmax(i[0]), [rng.standard_normal((3, 4))], rng)


def test_adjoint_select(rng):
    check_adjoint(lambda t, i: t.select(i[0], (1, 0)), [rng.standard_normal((3, 2, 4))], rng)


def test_adjoint_convex_combine(rng):
    plan = CombinePlan([random_csr(rng, 6, 6) for _ in range(3)])
    check_adjoint(lambda t, i: t.convex_combine(i[0], plan), [rng.random(3)], rng)


def test_adjoint_spmm_ss_both_operands(backend, rng):
    a, b = random_csr(rng, 6, 5), random_csr(rng, 5, 7)
    grads, ids = check_adjoint(lambda t, i: t.spmm_ss(i[0], i[1]), [a, b], rng)
    # gradients live exactly on each operand's pattern
    assert grads[ids[0]].shape == a.values.shape
    assert grads[ids[1]].shape == b.values.shape


@pytest.mark.parametrize("mode", ["inverse", "symmetric"])
@pytest.mark.parametrize("detach", [False, True])
def test_adjoint_row_normalize(rng, mode, detach):
    a = random_csr(rng, 6, 6, nonneg=True)
    if detach:
        # detached degrees: adjoint of the frozen scaling only
        tape = Tape()
        i = tape.leaf(a)
        out = tape.row_normalize(i, mode, detach_degrees=True)
        g = rng.standard_normal(a.nnz)
        got = tape.vjp(out, g)[i]
        scale = tape.value(out).values / a.values
        assert np.allclose(got, g * scale, atol=1e-14)
    else:
        check_adjoint(lambda t, i: t.row_normalize(i[0], mode), [a], rng)


def test_adjoint_add_identity(rng):
    check_adjoint(lambda t, i: t.add_identity(i[0]), [random_csr(rng, 5, 5)], rng)


def test_adjoint_spmm_sd(backend, rng):
    check_adjoint(lambda t, i: t.spmm_sd(i[0], i[1]),
                  [random_csr(rng, 6, 5), rng.standard_normal((5, 3))], rng)


def test_adjoint_dense_ops(rng):
    check_adjoint(lambda t, i: t.matmul(i[0], i[1]),
                  [rng.standard_normal((4, 3)), rng.standard_normal((3, 2))], rng)
    check_adjoint(lambda t, i: t.add_bias(i[0], i[1]),
                  [rng.standard_normal((4, 3)), rng.standard_normal(3)], rng)
    x = rng.standard_normal((5, 4))
    x[np.abs(x) < 0.05] = 0.5   # keep away from the kink
    check_adjoint(lambda t, i: t.relu(i[0]), [x], rng)
    check_adjoint(lambda t, i: t.concat_cols([i[0], i[1]]),
                  [rng.standard_normal((4, 2)), rng.standard_normal((4, 3))], rng)


def test_adjoint_cross_entropy(rng):
    labels, index = np.array([0, 2, 1]), np.array([0, 3, 4])
    check_adjoint(lambda t, i: t.cross_entropy(i[0], labels, index),
                  [rng.standard_normal((5, 3))], rng)


def test_adjoint_reductions(rng):
    check_adjoint(lambda t, i: t.sum(i[0]), [random_csr(rng, 4, 4)], rng)
    check_adjoint(lambda t, i: t.sum_squares(i[0]), [rng.standard_normal((3, 3))], rng)


def test_relu_subgradient_zero_at_kink():
    tape = Tape()
    x = tape.param("x", np.array([[0.0, 1.0, -1.0]]))
    grads = tape.backward(tape.sum(tape.relu(x)))
    assert np.array_equal(grads["x"], [[0.0, 1.0, 0.0]])


def test_every_op_kind_is_covered():
    covered = {"softmax", "select", "convex_combine", "spmm_ss", "row_normalize", "add_identity",
               "spmm_sd", "matmul", "add_bias", "relu", "concat_cols", "cross_entropy", "sum",
               "sum_squares"}
    assert set(OP_KINDS) == covered


def test_record_errors(rng):
    tape = Tape()
    x = tape.param("x", rng.standard_normal((2, 2)))
    with pytest.raises(UnsupportedOp):
        tape.record("conv2d", [x])
    with pytest.raises(ValueError):
        tape.record("relu", [7])
    with pytest.raises(ShapeError):
        tape.backward(tape.relu(x))
    with pytest.raises(ValueError):
        tape.param("x", 1.0)


def test_unreached_parameter_gets_zero_gradient(rng):
    tape = Tape()
    x = tape.param("x", rng.standard_normal(3))
    tape.param("unused", np.ones((2, 2)))
    grads = tape.backward(tape.sum_squares(x))
    assert np.array_equal(grads["unused"], np.zeros((2, 2)))


def test_finite_diff_quadratic(rng):
    def f(p):
        return 0.5 * float(np.sum(p["w"] ** 2)), {"w": p["w"].copy()}
    assert finite_diff_check(f, {"w": rng.standard_normal(6)}) <= 1e-9


def test_finite_diff_rejects_bad_inputs():
    with pytest.raises(ValueError):
        finite_diff_check(lambda p: (0.0, p), {"w": np.zeros(1)}, epsilon=0)
    with pytest.raises(NonFiniteError):
        finite_diff_check(lambda p: (float("nan"), p), {"w": np.zeros(1)})


def test_finite_diff_single_gt_layer_frozen_head(backend, rng):
    graph = typed_graph(rng, counts=(("A", 3), ("P", 3), ("C", 2)))
    split = split_for(graph, "A")
    k = len(graph.adj)
    x = graph.features
    w = rng.standard_normal((x.shape[1], 2))

    def f(p):
        tape = Tape()
        sel = tape.param("sel", p["sel"])
        alpha = tape.softmax(sel)
        q1 = tape.convex_combine(tape.select(alpha, 0), graph.plan)
        q2 = tape.convex_combine(tape.select(alpha, 1), graph.plan)
        a = tape.spmm_ss(q1, q2)
        h = tape.spmm_sd(tape.row_normalize(tape.add_identity(a)), tape.matmul(tape.const(x), tape.const(w)))
        out = tape.cross_entropy(h, split.labels[split.train], split.train)
        return float(tape.value(out)), tape.backward(out)

    assert finite_diff_check(f, {"sel": rng.standard_normal((2, k))}) <= 1e-6


@pytest.mark.parametrize("normalize_at", ["consumption", "output"])
@pytest.mark.parametrize("gcn_norm", ["inverse", "symmetric"])
def test_finite_diff_full_gtn(backend, desk, normalize_at, gcn_norm):
    graph, split, _ = desk
    cfg = GtnConfig(num_layers=2, num_channels=2, hidden_dim=8, classifier_hidden=8,
                    normalize_at=normalize_at, gcn_norm=gcn_norm)
    g = graph.with_identity(True)
    assert len(g.adj) == 4
    params = init_params(cfg, 4, g.num_features, split.num_classes, seed=3)

    def f(p):
        out = gtn_forward(g, GtnParams.from_dict(p), cfg)
        value = loss(out, split)
        grads = out.backward()
        for v in grads.values():
            assert np.all(np.isfinite(v))
        return value, grads

    assert finite_diff_check(f, params.as_dict()) <= 1e-4
