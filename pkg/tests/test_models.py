import numpy as np
import pytest
import scipy.sparse as sp

from graphfb import autodiff as ad
from graphfb.graph import Graph
from graphfb.models import (
    ModelSpec,
    ParamSet,
    build_model_operators,
    fb_gcn_forward,
    fb_sage_forward,
    gcn_forward,
    init_params,
    layer_dims,
    mlp_forward,
    model_forward,
)
from graphfb.operators import OperatorKind, build_operator
from graphfb.synth import random_attributed_graph


def make_params(spec, in_dim, n_classes, seed=0):
    return init_params(spec, in_dim, n_classes, seed)


def set_fb_weights(params, value_lp, value_hp, raw_alpha=0.0):
    for name, t in params.named():
        if name.startswith("w_lp"):
            t.values = np.full_like(t.values, value_lp)
        elif name.startswith("w_hp"):
            t.values = np.full_like(t.values, value_hp)
        elif name.startswith("a_"):
            t.values = np.full_like(t.values, raw_alpha)


# ---------------------------------------------------------------- ModelSpec


def test_model_spec_defaults_per_arch():
    gcn = ModelSpec(arch="gcn")
    assert gcn.lp_kind is OperatorKind.HAT_A_SYM and gcn.hp_kind is None
    fb = ModelSpec(arch="fb_gcn")
    assert (fb.lp_kind, fb.hp_kind) == (OperatorKind.HAT_A_SYM, OperatorKind.HAT_L_SYM)
    sage = ModelSpec(arch="fb_sage")
    assert (sage.lp_kind, sage.hp_kind) == (OperatorKind.HAT_A_RW, OperatorKind.HAT_L_RW)


def test_model_spec_validation():
    with pytest.raises(ValueError, match="perfect-reconstruction"):
        ModelSpec(arch="fb_gcn", lp_kind=OperatorKind.HAT_A_SYM, hp_kind=OperatorKind.HAT_L_RW)
    with pytest.raises(ValueError, match="channel_mode"):
        ModelSpec(arch="gcn", channel_mode="lp_only")
    with pytest.raises(ValueError, match="ablation"):
        ModelSpec(arch="mlp", transform_mode="linear")
    with pytest.raises(ValueError, match="unknown arch"):
        ModelSpec(arch="gat")
    # lazy pair is a valid filterbank choice
    fb = ModelSpec(arch="fb_gcn", lp_kind=OperatorKind.A_LRW, hp_kind=OperatorKind.L_LRW)
    assert fb.lp_kind is OperatorKind.A_LRW


def test_model_spec_round_trip_and_hash():
    spec = ModelSpec(arch="fb_gcn", hidden_dim=16, dropout_p=0.3)
    again = ModelSpec.from_dict(spec.to_dict())
    assert again == spec
    assert again.spec_hash() == spec.spec_hash()


# --------------------------------------------------------------- init_params


def test_init_params_deterministic():
    spec = ModelSpec(arch="fb_gcn", hidden_dim=8)
    a = init_params(spec, 5, 3, seed=4)
    b = init_params(spec, 5, 3, seed=4)
    for (na, ta), (nb, tb) in zip(a.named(), b.named()):
        assert na == nb and np.array_equal(ta.values, tb.values)


def test_init_alpha_is_half():
    spec = ModelSpec(arch="fb_gcn", hidden_dim=4)
    params = init_params(spec, 5, 3, seed=0)
    for entry in params.effective_alphas():
        assert entry["lp"] == 0.5 and entry["hp"] == 0.5


def test_init_glorot_bound():
    spec = ModelSpec(arch="mlp", hidden_dim=32, n_layers=2)
    params = init_params(spec, 1433, 7, seed=0)
    bound = np.sqrt(6.0 / (1433 + 32))
    w0 = params["w0"].values
    assert w0.shape == (1433, 32)
    assert np.abs(w0).max() <= bound
    assert np.abs(w0).max() > 0.8 * bound  # actually fills the range


def test_param_serialization_round_trip():
    spec = ModelSpec(arch="fb_sage", hidden_dim=4)
    params = init_params(spec, 3, 2, seed=1)
    payload = params.to_payload()
    again = ParamSet.from_payload(payload)
    for (n1, t1), (n2, t2) in zip(params.named(), again.named()):
        assert n1 == n2 and np.array_equal(t1.values, t2.values)
    payload["spec_hash"] = "deadbeef"
    with pytest.raises(ValueError, match="hash"):
        ParamSet.from_payload(payload)


# ------------------------------------------------------------------ forwards


def test_mlp_zero_input_zero_logits():
    spec = ModelSpec(arch="mlp", hidden_dim=4, dropout_p=0.0)
    params = make_params(spec, 3, 2)
    logits = mlp_forward(params, np.zeros((5, 3)))
    assert np.array_equal(logits.values, np.zeros((5, 2)))


def test_mlp_hand_computed():
    spec = ModelSpec(arch="mlp", hidden_dim=2, dropout_p=0.0)
    params = make_params(spec, 2, 2)
    params["w0"].values = np.array([[1.0, -1.0], [0.5, 2.0]])
    params["w1"].values = np.array([[1.0, 0.0], [1.0, 1.0]])
    x = np.array([[2.0, 1.0]])
    h = np.maximum(x @ params["w0"].values, 0.0)
    expected = h @ params["w1"].values
    out = mlp_forward(params, x)
    assert np.allclose(out.values, expected, atol=1e-15)


def test_mlp_permutation_of_rows():
    spec = ModelSpec(arch="mlp", hidden_dim=4, dropout_p=0.0)
    params = make_params(spec, 3, 2)
    x = np.random.default_rng(0).standard_normal((6, 3))
    perm = np.random.default_rng(1).permutation(6)
    out = mlp_forward(params, x).values
    out_p = mlp_forward(params, x[perm]).values
    assert np.array_equal(out_p, out[perm])


def test_gcn_zero_weights_zero_logits(k3):
    spec = ModelSpec(arch="gcn", hidden_dim=4, dropout_p=0.0)
    params = make_params(spec, k3.n_features, k3.n_classes)
    for _, t in params.named():
        t.values = np.zeros_like(t.values)
    ops = build_model_operators(k3, spec)
    out = gcn_forward(ops["prop"], params, k3.features)
    assert np.array_equal(out.values, np.zeros((3, 2)))


def test_gcn_identity_operator_reduces_to_mlp(k3):
    spec = ModelSpec(arch="gcn", hidden_dim=4, dropout_p=0.0)
    params = make_params(spec, k3.n_features, k3.n_classes, seed=3)
    eye = sp.identity(3, format="csr")
    out = gcn_forward(eye, params, k3.features).values
    mlp_spec = ModelSpec(arch="mlp", hidden_dim=4, dropout_p=0.0)
    mlp_params = make_params(mlp_spec, k3.n_features, k3.n_classes, seed=3)
    assert np.array_equal(out, mlp_forward(mlp_params, k3.features).values)


def test_gcn_hand_computed_k3(k3):
    spec = ModelSpec(arch="gcn", hidden_dim=2, dropout_p=0.0)
    params = make_params(spec, 2, 2)
    w0 = np.array([[0.7, -0.2], [0.1, 0.4]])
    w1 = np.array([[1.0, -1.0], [0.3, 0.6]])
    params["w0"].values = w0.copy()
    params["w1"].values = w1.copy()
    ops = build_model_operators(k3, spec)
    a_hat = ops["prop"].matrix.toarray()
    expected = a_hat @ np.maximum(a_hat @ k3.features @ w0, 0.0) @ w1
    out = gcn_forward(ops["prop"], params, k3.features).values
    assert np.allclose(out, expected, atol=1e-14)


def test_fb_gcn_zero_input(k3):
    spec = ModelSpec(arch="fb_gcn", hidden_dim=4, dropout_p=0.0)
    params = make_params(spec, 2, 2)
    ops = build_model_operators(k3, spec)
    out = fb_gcn_forward(ops["lp"], ops["hp"], params, np.zeros((3, 2)))
    assert np.array_equal(out.values, np.zeros((3, 2)))


def test_fb_gcn_two_node_hand_computation():
    # path on two nodes, one feature, weights all ones, raw alpha 0 (=0.5)
    g = Graph.from_edges(2, [(0, 1)], np.array([[1.0], [2.0]]), [0, 1], 2)
    spec = ModelSpec(arch="fb_gcn", hidden_dim=1, n_layers=2, dropout_p=0.0)
    params = make_params(spec, 1, 2)
    set_fb_weights(params, 1.0, 1.0, raw_alpha=0.0)
    ops = build_model_operators(g, spec)
    lp = ops["lp"].matrix.toarray()
    hp = ops["hp"].matrix.toarray()
    x = g.features
    h_lp = lp @ np.maximum(x @ np.ones((1, 1)), 0)
    h_hp = hp @ np.maximum(x @ np.ones((1, 1)), 0)
    h1 = np.maximum(0.5 * h_lp + 0.5 * h_hp, 0)
    out_lp = lp @ np.maximum(h1 @ np.ones((1, 2)), 0)
    out_hp = hp @ np.maximum(h1 @ np.ones((1, 2)), 0)
    expected = 0.5 * out_lp + 0.5 * out_hp  # final layer: no outer relu
    out = fb_gcn_forward(ops["lp"], ops["hp"], params, x).values
    assert np.allclose(out, expected, atol=1e-14)


def test_fb_gcn_lp_only_ignores_hp_channel(k3):
    spec = ModelSpec(arch="fb_gcn", hidden_dim=4, dropout_p=0.0, channel_mode="lp_only")
    params = make_params(spec, 2, 2, seed=5)
    ops = build_model_operators(k3, spec)
    base = fb_gcn_forward(ops["lp"], ops["hp"], params, k3.features).values
    for name, t in params.named():
        if name.startswith(("w_hp", "a_hp")):
            t.values = t.values + 100.0  # must not matter
    again = fb_gcn_forward(ops["lp"], ops["hp"], params, k3.features).values
    assert np.array_equal(base, again)


def test_fb_gcn_inactive_channel_gets_zero_grad():
    g = random_attributed_graph(10, 4, 2, 0.4, np.random.default_rng(20))
    for mode, inactive in (("lp_only", "hp"), ("hp_only", "lp")):
        spec = ModelSpec(arch="fb_gcn", hidden_dim=4, dropout_p=0.0, channel_mode=mode)
        params = make_params(spec, 4, 2, seed=6)
        ops = build_model_operators(g, spec)
        ad.zero_grad(list(params.tensors.values()))
        logits = fb_gcn_forward(ops["lp"], ops["hp"], params, g.features)
        loss = ad.softmax_cross_entropy(logits, g.labels, np.arange(g.n_nodes))
        ad.backward(loss)
        for name, t in params.named():
            if name.startswith((f"w_{inactive}", f"a_{inactive}")):
                assert np.array_equal(t.grad, np.zeros_like(t.values)), name
            else:
                assert np.abs(t.grad).sum() > 0, name
        # the optimizer only sees the active channel
        trainable_names = [n for n, _ in params.named() if not n.startswith((f"w_{inactive}", f"a_{inactive}"))]
        assert len(params.trainable()) == len(trainable_names)


def test_fb_layer_level_reconstruction_linear_shared_weights(k3):
    # linear transform, shared weights, unit alphas: LP@(HW) + HP@(HW) == HW
    rng = np.random.default_rng(7)
    w = rng.standard_normal((2, 4))
    lp = build_operator(k3, OperatorKind.HAT_A_SYM)
    hp = build_operator(k3, OperatorKind.HAT_L_SYM)
    hw = k3.features @ w
    recon = lp.matrix @ hw + hp.matrix @ hw
    assert np.allclose(recon, hw, rtol=1e-12, atol=1e-12)


def test_fb_sage_matrix_form_equals_node_loop():
    rng = np.random.default_rng(8)
    g = random_attributed_graph(10, 3, 2, 0.35, rng)
    spec = ModelSpec(arch="fb_sage", hidden_dim=4, dropout_p=0.0)
    params = make_params(spec, 3, 2, seed=9)
    ops = build_model_operators(g, spec)
    capture = {}
    fb_sage_forward(ops["lp"], ops["hp"], params, g.features, capture=capture)

    # node-level oracle for layer 1
    w_lp = params["w_lp0"].values
    w_hp = params["w_hp0"].values
    h_lp_hat = np.maximum(g.features @ w_lp, 0.0)
    h_hp_hat = np.maximum(g.features @ w_hp, 0.0)
    n = g.n_nodes
    lp_loop = np.zeros_like(h_lp_hat)
    hp_loop = np.zeros_like(h_hp_hat)
    for i in range(n):
        w_i = 1.0 / (g.degrees[i] + 1.0)
        closed = list(g.neighbors(i)) + [i]
        for j in closed:
            lp_loop[i] += w_i * (h_lp_hat[i] + h_lp_hat[j])
            hp_loop[i] += w_i * (h_hp_hat[i] - h_hp_hat[j])
    assert np.max(np.abs(capture["layer1"]["lp"] - lp_loop)) < 1e-12
    assert np.max(np.abs(capture["layer1"]["hp"] - hp_loop)) < 1e-12


def test_fb_sage_constant_rows_kill_hp_channel():
    g = random_attributed_graph(8, 3, 2, 0.4, np.random.default_rng(10))
    spec = ModelSpec(arch="fb_sage", hidden_dim=4, dropout_p=0.0)
    params = make_params(spec, 3, 2, seed=11)
    ops = build_model_operators(g, spec)
    capture = {}
    x = np.ones((8, 3))  # identical rows -> identical transformed rows
    fb_sage_forward(ops["lp"], ops["hp"], params, x, capture=capture)
    assert np.max(np.abs(capture["layer1"]["hp"])) < 1e-14


def test_fb_sage_single_isolated_node():
    g = Graph.from_edges(1, [], np.array([[1.0, -2.0]]), [0], 1)
    spec = ModelSpec(arch="fb_sage", hidden_dim=2, n_layers=1, dropout_p=0.0)
    params = make_params(spec, 2, 1, seed=12)
    ops = build_model_operators(g, spec)
    capture = {}
    fb_sage_forward(ops["lp"], ops["hp"], params, g.features, capture=capture)
    h_hat = np.maximum(g.features @ params["w_lp0"].values, 0.0)
    # closed neighborhood of an isolated node is itself: (h_i + h_i) * 1/(0+1)
    assert np.allclose(capture["layer1"]["lp"], 2.0 * h_hat, atol=1e-14)
    assert np.array_equal(capture["layer1"]["hp"], np.zeros_like(h_hat))


def test_linear_transform_mode_removes_inner_relu(k3):
    spec_nl = ModelSpec(arch="fb_gcn", hidden_dim=3, dropout_p=0.0)
    spec_lin = ModelSpec(arch="fb_gcn", hidden_dim=3, dropout_p=0.0, transform_mode="linear")
    params = make_params(spec_nl, 2, 2, seed=13)
    params_lin = make_params(spec_lin, 2, 2, seed=13)
    ops = build_model_operators(k3, spec_nl)
    x = -np.abs(k3.features) - 1.0  # all-negative input so relu changes things
    out_nl = fb_gcn_forward(ops["lp"], ops["hp"], params, x).values
    out_lin = fb_gcn_forward(ops["lp"], ops["hp"], params_lin, x).values
    assert not np.allclose(out_nl, out_lin)


@pytest.mark.parametrize("arch", ["mlp", "gcn", "fb_gcn", "fb_sage"])
def test_permutation_equivariance(arch):
    rng = np.random.default_rng(14)
    g = random_attributed_graph(12, 4, 3, 0.35, rng)
    perm = rng.permutation(12)
    inv = np.empty(12, dtype=np.int64)
    inv[perm] = np.arange(12)
    # relabeled graph: node perm[i] -> i
    edges = []
    for i in range(12):
        for j in g.neighbors(i):
            if i < j:
                edges.append((inv[i], inv[j]))
    g_perm = Graph.from_edges(12, edges, g.features[perm], g.labels[perm], g.n_classes)

    spec = ModelSpec(arch=arch, hidden_dim=5, dropout_p=0.0)
    params = make_params(spec, 4, 3, seed=15)
    out = model_forward(build_model_operators(g, spec), params, g.features).values
    out_perm = model_forward(build_model_operators(g_perm, spec), params, g_perm.features).values
    assert np.allclose(out_perm, out[perm], rtol=1e-9, atol=1e-11)


def test_layer_dims():
    spec = ModelSpec(arch="gcn", hidden_dim=16, n_layers=3)
    assert layer_dims(spec, 100, 7) == [100, 16, 16, 7]
