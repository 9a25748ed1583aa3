import numpy as np
import pytest

from carve.core_io.primitives import icosphere, sphere_sdf
from carve.errors import ShapeMismatchError, ValidationError
from carve.pipeline.optim import Adam, AdamState, adam_step, annealed_lr
from carve.sdf_fit.fit_core import (
    MeshDistance,
    SampleSet,
    closest_points_on_triangles,
    evaluate_rmse,
    fill_unconstrained,
    fit_sdf,
    sample_near_surface,
    signed_distance,
    signed_distances,
    winding_numbers,
)
from carve.tetra.tet_core import build_grid, interpolate_sdf, locate_points

from .conftest import finite_difference

TRI = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


# ============================================================================
# DISTANCES
# ============================================================================

@pytest.mark.parametrize("p, expected", [
    ((0.25, 0.25, 1.0), (0.25, 0.25, 0.0)),   # face interior
    ((-1.0, -1.0, 0.0), (0.0, 0.0, 0.0)),     # vertex a
    ((2.0, -0.5, 0.3), (1.0, 0.0, 0.0)),      # vertex b
    ((0.5, -1.0, 0.0), (0.5, 0.0, 0.0)),      # edge ab
    ((1.0, 1.0, 0.0), (0.5, 0.5, 0.0)),       # edge bc
])
def test_closest_point_regions(p, expected):
    a, b, c = (np.repeat(v[None], 1, axis=0) for v in TRI)
    q = closest_points_on_triangles(np.array([p], dtype=float), a, b, c)
    np.testing.assert_allclose(q[0], expected, atol=1e-12)


def test_cube_signed_distances(cube):
    assert signed_distance(cube, (0.5, 0.5, 0.5)) == pytest.approx(-0.5)
    assert signed_distance(cube, (2.0, 0.5, 0.5)) == pytest.approx(1.0)
    assert signed_distance(cube, (2.0, 2.0, 2.0)) == pytest.approx(np.sqrt(3.0))
    assert signed_distance(cube, (1.0, 0.5, 0.5)) == pytest.approx(0.0, abs=1e-12)


def test_winding_number_inside_and_outside(cube):
    w = winding_numbers(cube.vertices, cube.faces, np.array([[0.5, 0.5, 0.5], [3.0, 0.0, 0.0]]))
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)


def test_open_mesh_has_no_sign(tube):
    with pytest.raises(ValidationError, match="not watertight"):
        MeshDistance(tube)


def test_candidate_search_matches_brute_force():
    mesh = icosphere(2, 0.4)
    rng = np.random.default_rng(5)
    points = rng.uniform(-0.8, 0.8, size=(300, 3))
    fast = MeshDistance(mesh, k=2).unsigned(points)
    tri = mesh.vertices[mesh.faces]
    brute = np.full(len(points), np.inf)
    for t in tri:
        rep = np.repeat(t[None], len(points), axis=0)
        q = closest_points_on_triangles(points, rep[:, 0], rep[:, 1], rep[:, 2])
        brute = np.minimum(brute, np.linalg.norm(points - q, axis=1))
    np.testing.assert_allclose(fast, brute, atol=1e-12)


def test_sphere_distances_follow_the_analytic_field():
    mesh = icosphere(3, 0.35)
    rng = np.random.default_rng(6)
    points = rng.uniform(-0.6, 0.6, size=(500, 3))
    got = signed_distances(mesh, points)
    # tessellation error of a level-3 icosphere at radius 0.35
    np.testing.assert_allclose(got, sphere_sdf(points, 0.35), atol=4e-3)


# ============================================================================
# SAMPLES
# ============================================================================

def test_samples_are_seeded_and_inside_bounds(sphere):
    bounds = ((-0.6,) * 3, (0.6,) * 3)
    a = sample_near_surface(sphere, 500, sigma=0.01, seed=3, bounds=bounds)
    b = sample_near_surface(sphere, 500, sigma=0.01, seed=3, bounds=bounds)
    c = sample_near_surface(sphere, 500, sigma=0.01, seed=4, bounds=bounds)
    assert len(a) == 500
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    assert np.all(np.abs(a.points) <= 0.6)


def test_default_sigma_is_two_cells_of_the_grid(sphere):
    grid = build_grid(32)
    derived = sample_near_surface(sphere, 400, seed=5, grid=grid)
    explicit = sample_near_surface(sphere, 400, sigma=2 * 1.2 / 32, seed=5, bounds=grid.bounds)
    coarse = sample_near_surface(sphere, 400, sigma=2 * 1.2 / 64, seed=5, bounds=grid.bounds)
    np.testing.assert_allclose(derived.points, explicit.points, atol=1e-15)
    assert not np.allclose(derived.points, coarse.points)


def test_zero_sigma_puts_most_samples_on_the_surface(sphere):
    samples = sample_near_surface(sphere, 1000, sigma=0.0, seed=0)
    on_surface = np.abs(samples.sdf_gt) < 1e-9
    assert on_surface.sum() == 800


def test_sample_set_validation():
    with pytest.raises(ValidationError):
        SampleSet(np.zeros((3, 3)), np.zeros(2))
    with pytest.raises(ValidationError):
        SampleSet(np.zeros((1, 3)), [np.nan])
    s = SampleSet(np.ones((2, 3)), [0.1, -0.2])
    assert s[1].sdf_gt == pytest.approx(-0.2)
    with pytest.raises(ValidationError):
        sample_near_surface(icosphere(1), 0)


# ============================================================================
# FITTING
# ============================================================================

def test_fit_reduces_sphere_error_by_ninety_percent():
    grid = build_grid(16)
    mesh = icosphere(3, 0.35)
    samples = sample_near_surface(mesh, 6000, sigma=0.03, seed=1, bounds=grid.bounds)
    held_out = sample_near_surface(mesh, 2000, sigma=0.03, seed=2, bounds=grid.bounds)
    before = evaluate_rmse(grid, held_out)
    report = fit_sdf(grid, samples, iters=300, lr=0.01)
    after = evaluate_rmse(grid, held_out)
    assert after < 0.1 * before
    assert report.final_loss < report.initial_loss
    assert len(report.losses) == 301
    assert np.all(grid.offsets == 0.0)


@pytest.mark.slow
def test_sphere_benchmark_at_resolution_64():
    grid = build_grid(64)
    mesh = icosphere(4, 0.35)
    samples = sample_near_surface(mesh, 20000, sigma=0.05, seed=1, grid=grid)
    held_out = sample_near_surface(mesh, 5000, sigma=0.05, seed=2, grid=grid)
    report = fit_sdf(grid, samples, iters=400, lr=0.01)
    assert evaluate_rmse(grid, held_out) < 1e-3
    losses = np.asarray(report.losses)
    assert np.all(losses[50:] <= losses[:-50])


def test_zero_iterations_leave_the_grid_alone(sphere):
    grid = build_grid(6)
    samples = sample_near_surface(sphere, 200, seed=0, bounds=grid.bounds)
    report = fit_sdf(grid, samples, iters=0)
    assert np.all(grid.sdf == 1.0)
    assert report.losses == [report.initial_loss]
    assert report.filled_vertices == 0


def test_exact_initialization_stays_put():
    grid = build_grid(12)
    grid.sdf[:] = sphere_sdf(grid.verts, 0.35)
    samples = sample_near_surface(icosphere(3, 0.35), 3000, sigma=0.02, seed=0, bounds=grid.bounds)
    before = evaluate_rmse(grid, samples)
    report = fit_sdf(grid, samples, iters=20, lr=1e-4)
    assert report.rmse <= 1.1 * before


def test_fit_rejects_samples_outside_the_grid():
    grid = build_grid(4)
    samples = SampleSet([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], [0.1, 0.2])
    with pytest.raises(ValidationError, match="outside the grid bounds"):
        fit_sdf(grid, samples, iters=1)


def test_first_fit_step_descends_along_the_loss_gradient():
    grid = build_grid(3)
    rng = np.random.default_rng(7)
    grid.sdf[:] = rng.normal(size=grid.n_verts)
    samples = SampleSet(rng.uniform(-0.55, 0.55, size=(60, 3)), rng.normal(size=60))
    tet_idx, bary = locate_points(grid, samples.points)
    start = grid.sdf.copy()

    def loss(sdf):
        grid.sdf[:] = sdf
        r = interpolate_sdf(grid, tet_idx, bary) - samples.sdf_gt
        return float(r @ r)

    fd = finite_difference(loss, start)
    grid.sdf[:] = start
    fit_sdf(grid, samples, iters=1, lr=1e-3, fill=False)
    step = grid.sdf - start
    strong = np.abs(fd) > 1e-4
    assert strong.any()
    np.testing.assert_array_equal(np.sign(step[strong]), -np.sign(fd[strong]))
    np.testing.assert_allclose(np.abs(step[strong]), 1e-3, rtol=1e-3)


def test_fill_gives_free_vertices_neighbor_values():
    grid = build_grid(4)
    grid.sdf[:] = 7.0
    constrained = np.zeros(grid.n_verts, dtype=bool)
    constrained[0] = True
    grid.sdf[0] = -0.5
    filled = fill_unconstrained(grid, constrained)
    assert filled == grid.n_verts - 1
    np.testing.assert_allclose(grid.sdf, -0.5)


# ============================================================================
# ADAM
# ============================================================================

def test_adam_first_step_has_magnitude_lr():
    params, state = adam_step([np.array([1.0, -2.0])], [np.array([3.0, -0.5])], None, 0.1)
    np.testing.assert_allclose(params[0], [0.9, -1.9], atol=1e-7)
    assert state.step == 1


def test_adam_second_step_matches_hand_formula():
    g1, g2 = 2.0, -1.0
    params, state = adam_step([np.array([0.0])], [np.array([g1])], None, 0.01)
    params, state = adam_step(params, [np.array([g2])], state, 0.01)
    m = 0.9 * (0.1 * g1) + 0.1 * g2
    v = 0.999 * (0.001 * g1 ** 2) + 0.001 * g2 ** 2
    m_hat, v_hat = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
    first = -0.01 * 1.0
    expected = first - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert params[0][0] == pytest.approx(expected, rel=1e-6)


def test_adam_rejects_mismatched_shapes():
    with pytest.raises(ShapeMismatchError):
        adam_step([np.zeros(3)], [np.zeros(2)], None, 0.1)
    with pytest.raises(ShapeMismatchError):
        adam_step([np.zeros(3)], [], None, 0.1)
    with pytest.raises(ShapeMismatchError):
        adam_step([np.zeros(3)], [np.zeros(3)], AdamState(1, [np.zeros(3)] * 2, [np.zeros(3)] * 2), 0.1)


def test_adam_minimizes_a_quadratic_in_place():
    x = np.array([3.0, -4.0])
    opt = Adam(0.1)
    for _ in range(500):
        opt.step([x], [2.0 * x])
    np.testing.assert_allclose(x, 0.0, atol=5e-2)


def test_annealed_rate_holds_then_decays_to_the_floor():
    rates = [annealed_lr(0.01, it, 400) for it in range(400)]
    assert rates[:200] == [0.01] * 200
    assert rates[-1] == pytest.approx(1e-4)
    assert all(a > b for a, b in zip(rates[200:], rates[201:]))
    assert annealed_lr(0.01, 0, 1) == 0.01


def test_adam_takes_one_rate_per_parameter():
    params, _ = adam_step([np.zeros(2), np.zeros(1)], [np.ones(2), np.ones(1)], None, [0.1, 0.5])
    np.testing.assert_allclose(params[0], [-0.1, -0.1], atol=1e-7)
    np.testing.assert_allclose(params[1], [-0.5], atol=1e-7)
    with pytest.raises(ShapeMismatchError):
        adam_step([np.zeros(2)], [np.ones(2)], None, [0.1, 0.5])
