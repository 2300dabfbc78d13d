import numpy as np
import pytest
from scipy import stats

from gemkit.control import (
    COCO_SKELETON,
    FeatureMap,
    FlowField,
    IdentityTable,
    SparseTokenMap,
    Token,
    assign_identities,
    mask_tokens,
    rasterize_skeleton,
    translate_tokens,
)
from gemkit.errors import ValidationError


def grid_map(d=4, h=3, w=5, stride=4, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureMap(rng.standard_normal((d, h, w)), patch_stride=stride)


def test_mask_tokens_zero_draw(shim_rng):
    fm = grid_map()
    rng = shim_rng(forced={"integers": 0})
    out = mask_tokens(fm, 8, rng)
    assert out.tokens == ()
    assert np.allclose(out.to_dense(), 0.0)


def test_mask_tokens_bounds_and_uniqueness():
    fm = grid_map()
    rng = np.random.default_rng(1)
    for _ in range(300):
        out = mask_tokens(fm, 6, rng)
        assert len(out.tokens) <= 6
        cells = [(t.y, t.x) for t in out.tokens]
        assert len(set(cells)) == len(cells)
        for t in out.tokens:
            assert np.allclose(t.vec, fm.grid[:, t.y, t.x])


def test_mask_tokens_count_uniform():
    fm = grid_map()
    rng = np.random.default_rng(123)
    counts = np.zeros(5, dtype=int)
    for _ in range(10_000):
        counts[len(mask_tokens(fm, 4, rng).tokens)] += 1
    _, p = stats.chisquare(counts)
    assert p > 0.01


def test_mask_tokens_rejects_oversized_budget():
    with pytest.raises(ValidationError):
        mask_tokens(grid_map(h=2, w=2), 5, np.random.default_rng(0))


def test_assign_identities_empty():
    fm = grid_map()
    empty = SparseTokenMap(0, (), fm.cells[0], fm.cells[1], fm.dim, fm.patch_stride)
    table = IdentityTable.random(8, fm.dim)
    out = assign_identities(empty, table, np.random.default_rng(0))
    assert out.tokens == ()


def test_assign_identities_distinct_and_additive():
    fm = grid_map()
    rng = np.random.default_rng(2)
    tm = mask_tokens(fm, 6, rng)
    while len(tm.tokens) < 3:
        tm = mask_tokens(fm, 6, rng)
    table = IdentityTable.random(8, fm.dim, seed=3)
    out = assign_identities(tm, table, rng)
    ids = [t.identity for t in out.tokens]
    assert len(set(ids)) == len(ids)
    for before, after in zip(tm.tokens, out.tokens):
        assert (before.y, before.x) == (after.y, after.x)
        assert np.allclose(after.vec - before.vec, table.embeddings[after.identity])


def test_assign_identities_table_too_small():
    fm = grid_map()
    tm = SparseTokenMap(
        0,
        tuple(Token(0, x, np.zeros(fm.dim)) for x in range(4)),
        fm.cells[0],
        fm.cells[1],
        fm.dim,
    )
    with pytest.raises(ValidationError):
        assign_identities(tm, IdentityTable.random(3, fm.dim), np.random.default_rng(0))


def _tokens_with_ids(fm, n, rng):
    tm = mask_tokens(fm, n, rng)
    while len(tm.tokens) != n:
        tm = mask_tokens(fm, n, rng)
    return assign_identities(tm, IdentityTable.random(16, fm.dim), rng)


def test_translate_zero_flow_identity():
    fm = grid_map(stride=4)
    rng = np.random.default_rng(5)
    tm = _tokens_with_ids(fm, 5, rng)
    flow = FlowField(np.zeros((2, 3 * 4, 5 * 4)))
    out = translate_tokens(tm, flow, target_frame=3)
    assert out.frame_index == 3
    assert [(t.y, t.x, t.identity) for t in out.tokens] == [
        (t.y, t.x, t.identity) for t in tm.tokens
    ]


def test_translate_constant_stride_shift():
    fm = grid_map(stride=4)
    rng = np.random.default_rng(6)
    tm = _tokens_with_ids(fm, 6, rng)
    flow = FlowField(np.stack([np.full((12, 20), 4.0), np.zeros((12, 20))]))
    out = translate_tokens(tm, flow, target_frame=1)
    survivors = {(t.y, t.x) for t in out.tokens}
    expected = {(t.y, t.x + 1) for t in tm.tokens if t.x + 1 < fm.cells[1]}
    assert survivors == expected
    # ids travel with the tokens
    src_by_cell = {(t.y, t.x): t.identity for t in tm.tokens}
    for t in out.tokens:
        assert t.identity == src_by_cell[(t.y, t.x - 1)]


def test_translate_collision_keeps_closest():
    # two tokens pushed into the same cell; the more precisely-landing one wins
    fm = FeatureMap(np.ones((2, 1, 4)), patch_stride=4)
    tm = SparseTokenMap(
        0,
        (Token(0, 0, np.array([1.0, 0.0])), Token(0, 2, np.array([2.0, 0.0]))),
        1, 4, 2, 4,
    )
    flow = np.zeros((2, 4, 16))
    flow[0, :, 0:4] = 4.6   # token 0 lands at x=1.65 cells -> offset 0.15
    flow[0, :, 8:12] = -4.0  # token 2 lands at x=1.5 cells -> offset 0.0
    out = translate_tokens(tm, FlowField(flow), target_frame=1)
    assert len(out.tokens) == 1
    assert np.allclose(out.tokens[0].vec, [2.0, 0.0])

    # exact tie: lower source index survives
    flow[0, :, 0:4] = 4.0
    out = translate_tokens(tm, FlowField(flow), target_frame=1)
    assert len(out.tokens) == 1
    assert np.allclose(out.tokens[0].vec, [1.0, 0.0])


def test_translate_never_grows():
    fm = grid_map(stride=4)
    rng = np.random.default_rng(8)
    for _ in range(50):
        tm = _tokens_with_ids(fm, int(rng.integers(0, 7)), rng)
        field = rng.normal(0, 6, (2, 12, 20))
        out = translate_tokens(tm, FlowField(field), target_frame=tm.frame_index + 1)
        assert len(out.tokens) <= len(tm.tokens)


def test_translate_resolution_mismatch():
    fm = grid_map(stride=4)
    tm = _tokens_with_ids(fm, 2, np.random.default_rng(9))
    with pytest.raises(ValidationError):
        translate_tokens(tm, FlowField(np.zeros((2, 10, 20))), target_frame=1)


def test_rasterize_empty():
    assert np.allclose(rasterize_skeleton([], (32, 32)), 0.0)


def test_rasterize_single_visible_keypoint_disk():
    person = np.zeros((17, 3))
    person[0] = (16.0, 16.0, 2.0)  # only the nose is visible
    canvas = rasterize_skeleton([person], (32, 32))
    assert canvas[:, 16, 16].max() > 0.9
    # nothing painted past the disk radius
    ys, xs = np.mgrid[0:32, 0:32]
    far = np.hypot(xs - 16, ys - 16) > 3.5
    assert np.allclose(canvas[:, far], 0.0)
    near = np.hypot(xs - 16, ys - 16) <= 2.0
    assert np.all(canvas[:, near].max(axis=0) > 0.5)


def test_rasterize_all_out_of_bounds():
    person = np.zeros((17, 3))
    person[:, 0] = -50.0
    person[:, 1] = -70.0
    person[:, 2] = 2.0
    assert np.allclose(rasterize_skeleton([person], (32, 32)), 0.0)


def test_rasterize_limb_drawn_between_visible_joints():
    person = np.zeros((17, 3))
    person[5] = (4.0, 8.0, 2.0)   # left shoulder
    person[7] = (28.0, 8.0, 2.0)  # left elbow
    canvas = rasterize_skeleton([person], (16, 32))
    assert canvas[:, 8, 16].max() > 0.5  # midpoint of the limb is painted
    assert (5, 7) in COCO_SKELETON


def test_rasterize_person_order_invariant():
    rng = np.random.default_rng(11)
    people = []
    for _ in range(3):
        p = np.zeros((17, 3))
        p[:, 0] = rng.uniform(0, 48, 17)
        p[:, 1] = rng.uniform(0, 48, 17)
        p[:, 2] = rng.choice([0, 1, 2], 17)
        people.append(p)
    a = rasterize_skeleton(people, (48, 48))
    b = rasterize_skeleton(people[::-1], (48, 48))
    assert np.allclose(a, b)
