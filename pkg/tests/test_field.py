import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sofmesh.field import (
    RayContribution,
    ViewSet,
    collect_contributions,
    exact_depth,
    exact_depth_from,
    exact_depth_gradient,
    gaussian_normal,
    median_depth,
    median_index,
    normal_from_depth,
    opacity_along_ray,
    opacity_at_point,
    render_maps,
    render_pixel,
    resort_window,
    transmittances,
)
from sofmesh.geometry import Camera, GaussianPrimitive, GaussianScene, Ray, abc, ray_to_gaussian_space
from sofmesh.gradcheck import central_difference, random_contributions, relative_error

# closed-form exact depths of the on-axis unit Gaussian (A=1, B=-10, C=25)
EXACT_DEPTH_UNIT = 5.0 - math.sqrt(2.0 * math.log(2.0))
EXACT_DEPTH_08 = 5.0 - math.sqrt(-2.0 * math.log(0.625))


def gauss(pos=(0, 0, 0), scale=(1, 1, 1), opacity=1.0, q=(1, 0, 0, 0)):
    return GaussianPrimitive(np.array(pos, float), np.array(scale, float), np.array(q, float), opacity)


def contrib(alpha, t=1.0, idx=0, abc=None, opacity=None):
    A, B, C = abc or (1.0, -2.0 * t, t * t)
    return RayContribution(idx, t, alpha, (A, B, C), alpha if opacity is None else opacity)


def axis_ray():
    return Ray(np.array([0.0, 0.0, -5.0]), np.array([0.0, 0.0, 1.0]))


def unit_contribs(opacity=1.0):
    return collect_contributions([gauss(opacity=opacity)], axis_ray())


# ---------------------------------------------------------------------------
# gathering


def test_collect_single_on_axis():
    c = collect_contributions([gauss(opacity=0.7)], axis_ray())
    assert len(c) == 1
    assert c[0].t_star == pytest.approx(5.0) and c[0].alpha == pytest.approx(0.7)


def test_collect_sorts_by_t_star():
    gs = [gauss(pos=(0, 0, 2)), gauss(pos=(0, 0, -2))]
    c = collect_contributions(gs, axis_ray())
    assert [x.t_star for x in c] == pytest.approx([3.0, 7.0])
    assert [x.gaussian_index for x in c] == [1, 0]


def test_collect_culls_dead_and_behind():
    assert collect_contributions([gauss(opacity=1 / 300)], axis_ray()) == []
    assert collect_contributions([gauss(pos=(0, 0, -10))], axis_ray()) == []


def test_resort_window_large_equals_exact():
    rng = np.random.default_rng(0)
    cs = [contrib(0.1, t=float(t), idx=i) for i, t in enumerate(rng.uniform(0, 10, 30))]
    exact = sorted(cs, key=lambda c: c.t_star)
    assert resort_window(list(rng.permutation(cs)), 30) == exact
    with pytest.raises(ValueError):
        resort_window(cs, 0)


# ---------------------------------------------------------------------------
# compositing


def test_render_pixel_examples():
    out = render_pixel([contrib(1.0)], colors=[[0.2, 0.4, 0.6]])
    assert np.allclose(out.color, [0.2, 0.4, 0.6]) and out.transmittance_final == 0.0
    out = render_pixel([contrib(0.5, idx=0), contrib(0.5, t=2.0, idx=1)], colors=[[1, 1, 1], [0, 0, 0]])
    assert np.allclose(out.color, 0.5) and out.transmittance_final == pytest.approx(0.25)
    out = render_pixel([])
    assert np.allclose(out.color, 0) and out.transmittance_final == 1.0 and out.depth is None


def test_transmittances_monotone():
    T = transmittances([0.3, 0.5, 0.9])
    assert np.allclose(T, [1.0, 0.7, 0.35, 0.035])


def test_opacity_along_ray_examples():
    c = unit_contribs()
    assert opacity_along_ray(c, 10.0) == pytest.approx(1.0)
    assert opacity_along_ray(c, 4.0) == pytest.approx(math.exp(-0.5), abs=1e-12)
    pair = [contrib(0.3, t=1.0, idx=0), contrib(0.5, t=2.0, idx=1)]
    assert opacity_along_ray(pair, 10.0) == pytest.approx(0.65)
    assert opacity_along_ray(pair[::-1], 10.0) == pytest.approx(0.65)


def random_ray_contribs(rng, n):
    out = []
    for i in range(n):
        t = float(rng.uniform(0.5, 10))
        A = float(rng.uniform(0.2, 3))
        C = A * t * t + float(rng.uniform(0, 4))
        op = float(rng.uniform(0.01, 1))
        a = op * math.exp(-0.5 * (C - A * t * t))
        out.append(RayContribution(i, t, a, (A, -2 * A * t, C), op))
    return out


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_opacity_order_independent_and_closed_form(seed):
    rng = np.random.default_rng(seed)
    cs = random_ray_contribs(rng, int(rng.integers(1, 20)))
    t = float(rng.uniform(0, 12))
    ref = opacity_along_ray(cs, t)
    closed = 1.0 - np.prod([1.0 - c.alpha_at(t) for c in cs])
    assert abs(ref - closed) <= 1e-12
    for _ in range(10):
        perm = [cs[i] for i in rng.permutation(len(cs))]
        assert abs(opacity_along_ray(perm, t) - ref) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_opacity_monotone_in_depth(seed):
    rng = np.random.default_rng(seed)
    cs = random_ray_contribs(rng, int(rng.integers(1, 10)))
    ts = np.sort(rng.uniform(0, 12, 20))
    vals = [opacity_along_ray(cs, t) for t in ts]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# depth


def test_median_depth_examples():
    assert median_depth(unit_contribs()) == pytest.approx(5.0)
    pair = [contrib(0.4, t=1.0), contrib(0.4, t=2.0, idx=1)]
    assert median_index([0.4, 0.4]) == 1 and median_depth(pair) == 2.0
    assert median_depth([contrib(0.2), contrib(0.2, t=2.0, idx=1)]) is None
    assert median_depth([]) is None


def test_exact_depth_closed_forms():
    assert exact_depth(unit_contribs()) == pytest.approx(EXACT_DEPTH_UNIT, abs=1e-12)
    assert EXACT_DEPTH_UNIT == pytest.approx(3.8225899775, abs=1e-9)
    c = unit_contribs(0.8)
    t = exact_depth(c)
    assert t == pytest.approx(EXACT_DEPTH_08, abs=1e-12)
    assert t == pytest.approx(4.0304602852, abs=1e-9)
    A, B, C = c[0].abc
    assert math.exp(-0.5 * (A * t * t + B * t + C)) == pytest.approx(0.625, abs=1e-12)


def test_exact_depth_fallback_counter():
    counters = Counter()
    # a weak Gaussian behind T_i = 0.9 cannot pull transmittance down to 0.5
    t = exact_depth_from(1.0, -10.0, 25.0, 0.9, 0.1, counters)
    assert t == 5.0 and counters["exact_depth_fallback"] == 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exact_depth_residual_and_order(seed):
    # non-overlapping Gaussians along the ray: the earlier ones are fully behind their peaks at t_exact
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    ts = np.cumsum(rng.uniform(20.0, 30.0, n))
    gs = [gauss(pos=(0, 0, t - 5.0), scale=rng.uniform(0.3, 1.0, 3), opacity=float(rng.uniform(0.2, 1.0)))
          for t in ts]
    cs = collect_contributions(gs, axis_ray())
    te = exact_depth(cs)
    tm = median_depth(cs)
    if te is None:
        assert tm is None
        return
    assert te <= tm
    i = median_index([c.alpha for c in cs])
    T_i = transmittances([c.alpha for c in cs[:i]])[-1]
    assert abs(T_i * (1.0 - cs[i].alpha_at(te)) - 0.5) <= 1e-9
    assert abs(opacity_along_ray(cs, te) - 0.5) <= 1e-9


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_exact_depth_gradient_vs_fd(seed):
    rng = np.random.default_rng(seed)
    while True:
        cs = random_contributions(rng, 1)
        got = exact_depth_gradient(cs)
        if got is not None:
            break
    i, grad = got
    c = cs[i]

    def depth_of(v):
        A, B, C = v
        return exact_depth_from(A, B, C, 1.0, c.opacity) - (-B / (2 * A))

    num = central_difference(depth_of, np.array(c.abc), step=1e-7)
    assert relative_error(np.array(grad), num) <= 1e-5


# ---------------------------------------------------------------------------
# opacity field


def test_opacity_at_point_single_view():
    cam = Camera.look_at((0, 0, -5.0), (0, 0, 0), up=(0, 1, 0))
    vs = ViewSet.build([gauss()], [cam])
    assert opacity_at_point(vs, [0, 0, -1.0]) == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_opacity_at_point_min_over_views():
    g = gauss(opacity=0.9)
    cam_a = Camera.look_at((0, 0, -5.0), (0, 0, 0), up=(0, 1, 0), name="a")
    cam_b = Camera.look_at((5.0, 0, 0), (0, 0, 0), name="b")
    x = np.array([0.3, 0.0, -1.0])
    va = opacity_at_point(ViewSet.build([g], [cam_a]), x)
    vb = opacity_at_point(ViewSet.build([g], [cam_b]), x)
    assert va != vb
    assert opacity_at_point(ViewSet.build([g], [cam_a, cam_b]), x) == pytest.approx(min(va, vb))


def test_opacity_at_point_unobserved_is_one():
    cam = Camera.look_at((0, 0, -5.0), (0, 0, 0), up=(0, 1, 0))
    vs = ViewSet.build([gauss(opacity=0.1)], [cam])
    assert opacity_at_point(vs, [0, 0, -10.0]) == 1.0
    with pytest.raises(ValueError):
        ViewSet.build([gauss()], [])


# ---------------------------------------------------------------------------
# maps and normals


def small_cam(**kw):
    return Camera.look_at((0, 0, -5.0), (0, 0, 0), up=(0, 1, 0), width=21, height=21, **kw)


def test_render_maps_center_pixel():
    scene = GaussianScene.from_primitives([gauss()])
    cam = small_cam()
    exact = render_maps(scene, cam, "exact")
    median = render_maps(scene, cam, "median")
    assert exact["depth"][10, 10] == pytest.approx(EXACT_DEPTH_UNIT, abs=1e-9)
    assert median["depth"][10, 10] == pytest.approx(5.0, abs=1e-9)
    assert np.array_equal(np.isfinite(exact["depth"]), np.isfinite(median["depth"]))
    assert exact["opacity"][10, 10] == pytest.approx(0.5, abs=1e-9)


def test_render_maps_empty_scene():
    scene = GaussianScene.from_primitives([])
    maps = render_maps(scene, small_cam())
    assert np.isnan(maps["depth"]).all() and (maps["opacity"] == 0).all()


def test_normal_from_fronto_parallel_plane():
    cam = Camera(np.eye(3), np.zeros(3), 20, 20, 10, 10, 21, 21)
    dirs = cam.pixel_directions()
    depth = 3.0 / dirs[..., 2]  # plane z = 3
    N = normal_from_depth(depth, cam)
    assert np.allclose(N[1:-1, 1:-1], [0, 0, -1], atol=1e-12)
    assert np.isnan(N[0]).all()


def test_normal_from_slanted_plane():
    cam = Camera(np.eye(3), np.zeros(3), 20, 20, 10, 10, 21, 21)
    n = np.array([0.3, -0.2, -1.0])
    n /= np.linalg.norm(n)
    # plane n.x = -3 with n facing the camera at the origin
    dirs = cam.pixel_directions()
    depth = -3.0 / (dirs @ n)
    N = normal_from_depth(depth, cam)
    assert np.allclose(N[1:-1, 1:-1], n, atol=1e-3)


def test_normal_single_valid_pixel_invalid():
    cam = Camera(np.eye(3), np.zeros(3), 20, 20, 1, 1, 3, 3)
    depth = np.full((3, 3), np.nan)
    depth[1, 1] = 2.0
    assert np.isnan(normal_from_depth(depth, cam)).all()


def test_gaussian_normal_examples():
    g = gauss()
    ray = Ray(np.array([0, 0, -5.0]), np.array([0, 0, 1.0]))
    assert np.allclose(gaussian_normal(g, ray, 4.0), [0, 0, -1])
    g2 = gauss(scale=(1.0, 0.2, 0.5))
    n = gaussian_normal(g2, Ray(np.array([0, -5.0, 0]), np.array([0, 1.0, 0])), 5.0)
    assert np.allclose(np.abs(n), [0, 1, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gaussian_normal_faces_ray(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    g = gauss(rng.uniform(-1, 1, 3), rng.uniform(0.1, 1, 3), 0.5, q / np.linalg.norm(q))
    d = rng.normal(size=3)
    ray = Ray(rng.uniform(-5, 5, 3), d / np.linalg.norm(d))
    n = gaussian_normal(g, ray, float(rng.uniform(0, 10)))
    assert n @ ray.direction <= 1e-12
    assert np.linalg.norm(n) == pytest.approx(1.0)
