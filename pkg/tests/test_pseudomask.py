import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesioncoseg.dataset import LesionRecord, PreprocessConfig, RecistAnnotation, write_png16
from lesioncoseg.exceptions import DataError
from lesioncoseg.metrics import confusion, dice
from lesioncoseg.phantom import disk_phantom, shape_phantom
from lesioncoseg.pseudomask import (
    DEF_BG, DEF_FG, PROB_BG, PROB_FG, FlowNetwork, GrabcutParams, build_trimap, cut_capacity,
    fit_gmm, generate_pseudo_mask, grabcut_iterate, grabcut_run, max_flow,
)

from oracles import best_two_partition_means, brute_min_cut

CROSS = RecistAnnotation(((10, 20), (30, 20)), ((20, 10), (20, 30)))


# -- max-flow -------------------------------------------------------------

def test_single_path_bottleneck():
    net = FlowNetwork(3, 0, 2)
    net.add_edge(0, 1, 3)
    net.add_edge(1, 2, 2)
    assert max_flow(net)[0] == 2


def test_diamond():
    s, a, b, t = range(4)
    edges = [(s, a, 2), (s, b, 2), (a, t, 1), (b, t, 3), (a, b, 1)]
    net = FlowNetwork(4, s, t)
    for u, v, c in edges:
        net.add_edge(u, v, c)
    flow, side = max_flow(net)
    assert flow == 4 == brute_min_cut(4, s, t, edges)
    assert cut_capacity(net, side) == 4


def test_zero_capacity_graph():
    net = FlowNetwork(4, 0, 3)
    net.add_edges([0, 1, 2], [1, 2, 3], [0, 0, 0])
    flow, side = max_flow(net)
    assert flow == 0
    assert side.tolist() == [True, False, False, False]


def test_network_validation():
    with pytest.raises(ValueError):
        FlowNetwork(3, 1, 1)
    net = FlowNetwork(3, 0, 2)
    with pytest.raises(ValueError):
        net.add_edge(0, 1, -1)
    with pytest.raises(ValueError):
        net.add_edge(0, 5, 1)


def _random_graph(rng):
    n = int(rng.integers(2, 9)) + 2
    edges = []
    for u in range(n):
        for v in range(n):
            if u != v and v != 0 and u != 1 and rng.random() < 0.4:
                edges.append((u, v, int(rng.integers(0, 11))))
    return n, edges


def test_random_graphs_match_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(30):
        n, edges = _random_graph(rng)
        net = FlowNetwork(n, 0, 1)
        for u, v, c in edges:
            net.add_edge(u, v, c)
        flow, side = max_flow(net)
        expected = brute_min_cut(n, 0, 1, edges)
        assert flow == expected
        assert cut_capacity(net, side) == expected


# -- GMM ------------------------------------------------------------------

def test_gmm_two_clusters():
    samples = [0, 0.1, -0.1, 5, 4.9, 5.1]
    model = fit_gmm(samples, k=2, rng_seed=0)
    np.testing.assert_allclose(np.sort(model.means), best_two_partition_means(samples), atol=0.05)


def test_gmm_identical_samples():
    model = fit_gmm([3.0] * 10, k=2)
    np.testing.assert_allclose(model.means, 3.0)
    np.testing.assert_allclose(model.variances, 1e-6)
    assert np.all(np.isfinite(model.weights))


def test_gmm_single_component_closed_form():
    x = np.random.default_rng(0).normal(2.0, 3.0, 500)
    model = fit_gmm(x, k=1)
    np.testing.assert_allclose(model.means, [x.mean()])
    np.testing.assert_allclose(model.variances, [x.var()])


def test_gmm_k_shrinks_to_sample_count():
    assert fit_gmm([1.0, 2.0], k=5).n_components == 2
    with pytest.raises(ValueError):
        fit_gmm([], k=2)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=60), st.integers(1, 5), st.integers(0, 100))
def test_gmm_em_monotone(samples, k, seed):
    model = fit_gmm(samples, k=k, rng_seed=seed)
    hist = np.array(model.loglik_history)
    assert np.all(np.isfinite(hist))
    assert np.all(np.diff(hist) >= -1e-8 * np.maximum(1.0, np.abs(hist[:-1])))
    assert abs(model.weights.sum() - 1) < 1e-9
    assert np.all(model.variances >= 1e-6)


# -- trimap ---------------------------------------------------------------

def test_trimap_cross():
    tri = build_trimap(CROSS, (64, 64), GrabcutParams(seed_radius=1))
    assert tri[20, 20] == DEF_FG
    assert tri[0, 0] == DEF_BG
    # bbox [10..30] grown by half its extent on each side -> [0..40]
    assert tri[35, 35] == PROB_BG
    assert tri[25, 25] == PROB_FG
    assert tri[45, 45] == DEF_BG


def test_trimap_degenerate_diameter():
    rec = RecistAnnotation(((20, 20), (20, 20)), ((20, 20), (20, 20)))
    tri = build_trimap(rec, (64, 64), GrabcutParams(seed_radius=0.0))
    assert (tri == DEF_FG).sum() == 1 and tri[20, 20] == DEF_FG
    assert (tri == DEF_BG).any()


def test_trimap_box_fills_image_keeps_border():
    rec = RecistAnnotation(((0, 16), (31, 16)), ((16, 0), (16, 31)))
    tri = build_trimap(rec, (32, 32))
    frame = np.ones(tri.shape, bool)
    frame[2:-2, 2:-2] = False
    # the frame is definite background except where a diameter seed crosses it
    assert set(np.unique(tri[frame])) == {DEF_BG, DEF_FG}
    assert (tri == DEF_BG).sum() > (tri[frame] == DEF_FG).sum()


def test_trimap_out_of_bounds():
    with pytest.raises(DataError):
        build_trimap(CROSS, (16, 16))


# -- GrabCut --------------------------------------------------------------

def test_grabcut_disk_phantom():
    image, mask, recist = disk_phantom()
    result = grabcut_run(image, build_trimap(recist, image.shape))
    assert dice(confusion(result.mask, mask)) >= 0.95
    assert np.all(np.diff(result.energies) <= 1e-9 * np.abs(result.energies[:-1]))


def test_grabcut_two_level_noiseless():
    image = np.zeros((48, 48))
    image[12:36, 12:36] = 100.0
    rec = RecistAnnotation(((14, 24), (33, 24)), ((24, 15), (24, 32)))
    mask = grabcut_iterate(image, build_trimap(rec, image.shape))
    assert dice(confusion(mask, image > 50)) == 1.0


def test_grabcut_no_unknown_pixels():
    tri = np.full((10, 10), DEF_BG, np.uint8)
    tri[3:6, 3:6] = DEF_FG
    np.testing.assert_array_equal(grabcut_iterate(np.zeros((10, 10)), tri), tri == DEF_FG)


def test_grabcut_random_phantoms_small():
    rng = np.random.default_rng(7)
    for _ in range(3):
        image, mask, recist = shape_phantom(rng)
        result = grabcut_run(image, build_trimap(recist, image.shape))
        assert dice(confusion(result.mask, mask)) >= 0.9


def test_generate_pseudo_mask_deterministic(tmp_path):
    image, mask, recist = disk_phantom(size=64, radius=12)
    write_png16(tmp_path / "d.png", image)
    rec = LesionRecord("d", "p", "d.png", recist, 0)
    cfg = PreprocessConfig(target_size=64, hu_window=(0, 250))
    a = generate_pseudo_mask(rec, cfg, base_dir=tmp_path)
    b = generate_pseudo_mask(rec, cfg, base_dir=tmp_path)
    assert a.dtype == np.uint8 and set(np.unique(a)) <= {0, 255}
    assert a.tobytes() == b.tobytes()
    assert dice(confusion(a > 0, mask)) >= 0.95
