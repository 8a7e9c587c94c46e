import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdsfk.paths import (TimeGrid, backward_B, backward_ito_sum, coarsen_bundle, dump_paths,
                         forward_ito_sum, gen_bundle, load_paths, refine_bundle)


def test_time_grid_nodes_and_index():
    g = TimeGrid(0.5, 1.5, 4)
    assert g.dt == 0.25
    assert g.nodes[-1] == 1.5
    assert g.index_of(1.0) == 2
    with pytest.raises(ValueError):
        g.index_of(0.6)


@pytest.mark.parametrize("args", [(0, 0, 4), (1, 0, 4), (0, 1, 0), (0, 1, 2.5), (0, np.inf, 3)])
def test_time_grid_rejects_bad_input(args):
    with pytest.raises(ValueError):
        TimeGrid(*args)


def test_sub_grid_keeps_nodes():
    g = TimeGrid(0.0, 1.0, 10)
    s = g.sub(4)
    assert s.N == 6 and s.dt == g.dt
    assert np.array_equal(s.nodes, g.nodes[4:])


def test_bundle_shapes_and_variance():
    g = TimeGrid(0.0, 1.0, 8)
    b = gen_bundle(1, g, 20000, 2, 1, b_seed=2)
    assert b.dW.shape == (20000, 8, 2) and b.dB.shape == (8, 1)
    assert abs(b.dW.var() / g.dt - 1.0) < 0.02
    assert b.B[0, 0] == 0.0 and np.isclose(b.B[-1, 0], b.dB.sum())


def test_smaller_m_is_a_prefix():
    g = TimeGrid(0.0, 1.0, 5)
    big = gen_bundle(3, g, 500, 1, 1)
    small = gen_bundle(3, g, 40, 1, 1)
    assert np.array_equal(big.dW[:40], small.dW)
    assert np.array_equal(big.dB, small.dB)
    assert np.array_equal(big.take(40).dW, small.dW)


def test_b_path_depends_only_on_b_seed():
    g = TimeGrid(0.0, 1.0, 5)
    a = gen_bundle(3, g, 10, 1, 1, b_seed=9)
    b = gen_bundle(4, g, 10, 1, 1, b_seed=9)
    c = gen_bundle(3, g, 10, 1, 1, b_seed=10)
    assert np.array_equal(a.dB, b.dB)
    assert not np.array_equal(a.dB, c.dB)
    assert np.array_equal(a.dW, c.dW)


def test_w_and_b_independent_under_same_seed():
    g = TimeGrid(0.0, 1.0, 4)
    b = gen_bundle(5, g, 1, 1, 1)
    assert not np.array_equal(b.dW[0, :, 0], b.dB[:, 0])


def test_gen_bundle_rejects_bad_dims():
    with pytest.raises(ValueError):
        gen_bundle(1, TimeGrid(0, 1, 4), 0, 1, 1)


@given(factor=st.sampled_from([2, 3, 4]), seed=st.integers(0, 2 ** 32))
@settings(max_examples=15, deadline=None)
def test_refine_then_coarsen_recovers_bundle(factor, seed):
    g = TimeGrid(0.0, 1.0, 6)
    b = gen_bundle(seed, g, 30, 1, 1)
    back = coarsen_bundle(refine_bundle(b, factor), factor)
    np.testing.assert_allclose(back.dW, b.dW, atol=1e-14)
    np.testing.assert_allclose(back.dB, b.dB, atol=1e-14)


def test_refined_increments_have_fine_variance():
    g = TimeGrid(0.0, 1.0, 4)
    f = refine_bundle(gen_bundle(2, g, 20000, 1, 1), 4)
    assert f.grid.N == 16
    assert abs(f.dW.var() / f.grid.dt - 1.0) < 0.02
    # bridge increments within one coarse step are uncorrelated
    c = np.corrcoef(f.dW[:, 0, 0], f.dW[:, 1, 0])[0, 1]
    assert abs(c) < 0.03


def test_refine_rejects_fractional_factor():
    with pytest.raises(ValueError):
        refine_bundle(gen_bundle(1, TimeGrid(0, 1, 2), 3, 1, 1), 1.5)


def test_dump_load_round_trip(tmp_path):
    g = TimeGrid(0.0, 2.0, 7)
    b = gen_bundle(123, g, 13, 2, 1, b_seed=77)
    p = tmp_path / "paths.bin"
    dump_paths(b, p)
    r = load_paths(p)
    assert r.dW.tobytes() == b.dW.tobytes() and r.dB.tobytes() == b.dB.tobytes()
    assert (r.seed, r.b_seed, r.grid.N, r.grid.T) == (123, 77, 7, 2.0)


def test_load_rejects_corrupt_files(tmp_path):
    b = gen_bundle(1, TimeGrid(0, 1, 3), 4, 1, 1)
    p = tmp_path / "p.bin"
    dump_paths(b, p)
    raw = p.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:10])
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    (tmp_path / "trunc.bin").write_bytes(raw[:-8])
    for name in ("short.bin", "magic.bin", "trunc.bin"):
        with pytest.raises(ValueError):
            load_paths(tmp_path / name)


def test_backward_functional_constant_phi():
    g = TimeGrid(0.0, 1.0, 10)
    b = gen_bundle(1, g, 1, 1, 1, b_seed=3)
    bb = backward_B(lambda t: 0.7, b)
    B = b.B[:, 0]
    np.testing.assert_allclose(bb.values[:, 0], 0.7 * (B[-1] - B), atol=1e-14)
    assert bb.values[-1, 0] == 0.0


def test_backward_functional_endpoint_convention():
    g = TimeGrid(0.0, 1.0, 4)
    b = gen_bundle(1, g, 1, 1, 1)
    right = backward_B(lambda t: t, b).values[0, 0]
    left = backward_B(lambda t: t, b, left=True).values[0, 0]
    assert np.isclose(right, np.sum(g.nodes[1:] * b.dB[:, 0]))
    assert np.isclose(left, np.sum(g.nodes[:-1] * b.dB[:, 0]))


def test_ito_sums_pick_endpoints():
    g = TimeGrid(0.0, 1.0, 5)
    b = gen_bundle(2, g, 1, 1, 1)
    vals = np.arange(6, dtype=float).reshape(6, 1, 1)
    dB = b.dB[:, 0]
    assert np.isclose(backward_ito_sum(vals, b, 1, 4)[0], np.sum(np.arange(2, 5) * dB[1:4]))
    assert np.isclose(forward_ito_sum(vals, b, 1, 4)[0], np.sum(np.arange(1, 4) * dB[1:4]))
    with pytest.raises(IndexError):
        backward_ito_sum(vals, b, 2, 9)
