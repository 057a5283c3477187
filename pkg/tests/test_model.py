import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from objimportance import model
from objimportance.config import RunConfig
from objimportance.geometry import BBox, Proposal, pad_proposals, roi_pool, spatial_max_pool, temporal_aggregate
from objimportance.graph import gcn_forward
from objimportance.head import fuse_global, score_nodes
from objimportance.trainer import GRADCHECK_CONFIG, random_instance

SMALL = RunConfig(n_proposals=8, channels=6, pool_size=3, frames=2, height=6, width=7, mlp_hidden=(10, 5))


def random_scene(rng, cfg, n_real=5):
    grid = rng.random((cfg.frames, cfg.height, cfg.width, cfg.channels))
    props = []
    for _ in range(n_real):
        x1, x2 = np.sort(rng.uniform(0, 1, 2))
        y1, y2 = np.sort(rng.uniform(0, 1, 2))
        props.append(Proposal(BBox(x1, y1, x2, y2), label=int(rng.random() < 0.4)))
    return grid, pad_proposals(props, cfg.n_proposals)


def test_param_shapes_default():
    shapes = model.param_shapes(RunConfig())
    assert shapes["temporal_conv"] == (2, 1, 1, 16, 16)
    assert shapes["edge.gamma"] == (16, 16) and shapes["edge.phi"] == (32,)
    assert [shapes[f"mlp.w{k}"] for k in (1, 2, 3)] == [(32, 128), (128, 32), (32, 1)]
    assert model.param_shapes(RunConfig(no_global_descriptor=True))["mlp.w1"] == (16, 128)


def test_init_is_seeded_and_glorot_bounded():
    cfg = RunConfig()
    a, b = model.init_params(cfg, seed=3), model.init_params(cfg, seed=3)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert np.all(np.abs(a["gcn.w1"]) <= np.sqrt(6 / 32))
    assert np.all(a["mlp.b1"] == 0)
    z = model.init_params(cfg.replace(mlp_init="zeros"))
    assert all(np.all(z[k] == 0) for k in z if k.startswith("mlp."))


def test_forward_matches_composition_of_module_ops(rng):
    cfg = SMALL
    params = model.init_params(cfg, seed=1)
    grid, props = random_scene(rng, cfg)
    scores, e, _ = model.forward(model.build_batch([grid], [props], cfg.pool_size), params, cfg)
    agg = temporal_aggregate(grid, params["temporal_conv"])
    v = np.stack([spatial_max_pool(roi_pool(agg, p.box, cfg.pool_size)[0])[0] for p in props])
    u, e_ref, _ = gcn_forward(v, model.edge_params(params), model.gcn_weights(params))
    want = score_nodes(fuse_global(u, grid.mean(axis=(0, 1, 2))), model.mlp_params(params))
    np.testing.assert_allclose(scores[0], want, rtol=0, atol=1e-12)
    np.testing.assert_allclose(e[0], e_ref, rtol=0, atol=1e-15)


def test_zero_params_give_half(rng):
    cfg = SMALL
    params = {k: np.zeros_like(v) for k, v in model.init_params(cfg).items()}
    grid, props = random_scene(rng, cfg)
    scores, _, _ = model.forward(model.build_batch([grid], [props], 3), params, cfg)
    assert np.all(scores == 0.5)


def test_duplicate_boxes_get_equal_scores(rng):
    cfg = SMALL
    grid, props = random_scene(rng, cfg)
    props[1] = Proposal(props[0].box, label=props[1].label)
    scores, _, _ = model.forward(model.build_batch([grid], [props], 3), model.init_params(cfg, seed=2), cfg)
    assert scores[0, 0] == scores[0, 1]


def test_forward_deterministic(rng):
    cfg = SMALL
    grid, props = random_scene(rng, cfg)
    batch = model.build_batch([grid], [props], 3)
    params = model.init_params(cfg, seed=4)
    s1, e1, _ = model.forward(batch, params, cfg)
    s2, e2, _ = model.forward(batch, params, cfg)
    assert np.array_equal(s1, s2) and np.array_equal(e1, e2)


def test_shape_mismatch_is_attributed(rng):
    grid, props = random_scene(rng, SMALL)
    batch = model.build_batch([grid], [props], 3)
    with pytest.raises(ValueError, match="geometry"):
        model.forward(batch, model.init_params(SMALL.replace(height=5)), SMALL.replace(height=5))
    with pytest.raises(ValueError, match="parameter"):
        model.forward(batch, model.init_params(SMALL.replace(mlp_hidden=(4,))), SMALL)


def test_ablations_change_the_graph(rng):
    grid, props = random_scene(rng, SMALL)
    batch = model.build_batch([grid], [props], 3)
    _, e, _ = model.forward(batch, model.init_params(SMALL), SMALL)
    np.testing.assert_allclose(e.sum(-1), 2.0, atol=1e-9)
    cfg = SMALL.replace(no_self_attention=True)
    _, e, _ = model.forward(batch, model.init_params(cfg), cfg)
    np.testing.assert_allclose(e.sum(-1), 1.0, atol=1e-9)
    cfg = SMALL.replace(no_graph=True)
    _, e, tape = model.forward(batch, model.init_params(cfg), cfg)
    assert e is None and np.array_equal(tape.u, tape.v)


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_scene_permutation_equivariance(seed):
    r = np.random.default_rng(seed)
    cfg = SMALL
    params = model.init_params(cfg, seed=seed)
    grid, props = random_scene(r, cfg, n_real=int(r.integers(0, 9)))
    perm = r.permutation(cfg.n_proposals)
    s, e, _ = model.forward(model.build_batch([grid], [props], 3), params, cfg)
    sp, ep, _ = model.forward(model.build_batch([grid], [[props[i] for i in perm]], 3), params, cfg)
    np.testing.assert_allclose(sp[0], s[0][perm], rtol=0, atol=1e-9)
    assert np.array_equal(ep[0], e[0][np.ix_(perm, perm)])


def test_loss_scale_scales_gradients():
    batch, params = random_instance(GRADCHECK_CONFIG, 0)
    _, _, tape = model.forward(batch, params, GRADCHECK_CONFIG)
    _, g1, _ = model.backward(tape)
    _, g3, _ = model.backward(tape, loss_scale=3.0)
    for k in g1:
        np.testing.assert_allclose(g3[k], 3.0 * g1[k], rtol=1e-12, atol=1e-12)


def test_dead_relu_path_has_zero_gradient():
    cfg = GRADCHECK_CONFIG
    batch, params = random_instance(cfg, 0)
    # a hidden unit that can never fire: large negative bias
    params["mlp.b1"][0] = -1e6
    _, _, tape = model.forward(batch, params, cfg)
    _, grads, _ = model.backward(tape)
    assert np.all(grads["mlp.w1"][:, 0] == 0) and grads["mlp.b1"][0] == 0


def test_gradients_are_ordered_like_parameters():
    batch, params = random_instance(GRADCHECK_CONFIG, 1)
    _, _, tape = model.forward(batch, params, GRADCHECK_CONFIG)
    _, grads, _ = model.backward(tape)
    assert list(grads) == list(params)
    assert all(grads[k].shape == params[k].shape for k in params)
