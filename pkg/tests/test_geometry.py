import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levyavoid import exponents as ex
from levyavoid import geometry as geo
from levyavoid import green as gr
from levyavoid.errors import AssignmentError, ConfigError, DomainError

BROWNIAN = gr.GreenModel.exact(ex.brownian())


@pytest.mark.parametrize("d", [1, 2, 3])
def test_generation_count(d):
    assert len(geo.whitney_decompose(d, 4, 4)) == 3 ** d - 1


def test_three_generations_in_the_plane():
    cubes = geo.whitney_decompose(2, 0, 2)
    assert len(cubes) == 24
    assert len(set(cubes)) == 24


def _exhaustive_partition(d, j_min, j_max):
    """Every cell of a fine grid over the annulus lies in exactly one cube."""
    cubes = geo.whitney_decompose(d, j_min, j_max)
    fine = 3.0 ** (j_min - 1) / 2  # half the smallest side, aligned with all faces
    half_outer = 3.0 ** j_max / 2
    half_inner = 3.0 ** (j_min - 1) / 2
    n = int(round(2 * half_outer / fine))
    mids = -half_outer + fine * (np.arange(n) + 0.5)
    pts = np.stack(np.meshgrid(*([mids] * d), indexing="ij"), axis=-1).reshape(-1, d)
    in_annulus = ~np.all(np.abs(pts) < half_inner, axis=1)
    pts = pts[in_annulus]
    counts = np.zeros(len(pts), int)
    for c in cubes:
        counts += c.contains(pts)
    return counts


@pytest.mark.parametrize("d", [1, 2])
def test_exact_partition_exhaustive(d):
    counts = _exhaustive_partition(d, 0, 3)
    assert np.all(counts == 1)


def test_cube_volumes_fill_the_annulus():
    for d in (1, 2, 3):
        cubes = geo.whitney_decompose(d, 1, 3)
        total = sum(c.side ** d for c in cubes)
        assert total == pytest.approx((3.0 ** 3) ** d - 1.0)


def test_sampled_partition_3d():
    rng = np.random.default_rng(11)
    pts = rng.uniform(-3 ** 4 / 2, 3 ** 4 / 2, size=(100_000, 3))
    pts = pts[~np.all(np.abs(pts) < 0.5, axis=1)]
    cubes = geo.whitney_decompose(3, 1, 4)
    counts = np.zeros(len(pts), int)
    for c in cubes:
        counts += c.contains(pts)
    assert np.all(counts == 1)
    located = geo.locate(pts[:2000])
    for p, c in zip(pts[:2000], located):
        assert c.contains(p)[0]


@given(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=3).filter(lambda v: any(abs(x) > 1e-6 for x in v)))
def test_distance_to_origin_comparable_to_diameter(p):
    cube = geo.locate(np.array([p]))[0]
    assert cube.contains(p)[0]
    assert cube.side / 2 - 1e-9 <= cube.dist_to_origin() + 1e-9
    assert cube.dist_to_origin() <= 2 * cube.diameter


def test_origin_is_not_covered():
    with pytest.raises(DomainError):
        geo.cube_generation([[0.0, 0.0]])


def test_single_ball_single_cube():
    cubes = geo.whitney_decompose(3, 0, 3)
    out = geo.assign_balls_to_cubes(np.array([[1.0, 0, 0]]), cubes)
    owners = [c for c, idx in out.items() if idx]
    assert len(owners) == 1 and out[owners[0]] == [0]


def test_face_tie_break_is_deterministic():
    # x = 1.5 is the shared face of generation 1 and 2 cubes on the first axis
    cubes = geo.whitney_decompose(3, 0, 3)
    point = np.array([[1.5, 0.0, 0.0]])
    first = geo.assign_balls_to_cubes(point, cubes)
    second = geo.assign_balls_to_cubes(point, cubes)
    owner = [c for c, idx in first.items() if idx][0]
    assert first == second
    assert np.all(point[0] >= owner.lower_corner)


def test_assignment_conserves_count():
    fam = geo.LatticeFamily(3, geo.power_law(1.0, 0.1), min_norm=1.0)
    c, r = fam.balls_within(13.4)
    assert len(r) >= 10_000
    c = c[:10_000]
    j_max = int(geo.cube_generation(c).max())
    out = geo.assign_balls_to_cubes(c, geo.whitney_decompose(3, 0, j_max))
    assert sum(len(v) for v in out.values()) == 10_000


def test_assignment_reports_strays():
    with pytest.raises(AssignmentError) as info:
        geo.assign_balls_to_cubes(np.array([[1.0, 0, 0], [500.0, 0, 0]]), geo.whitney_decompose(3, 0, 2))
    assert info.value.strays == [1]


def _lattice_regular(phi=geo.power_law(3.0), R=np.sqrt(3)):
    # phi(1) = 1 would make neighbouring unit-lattice balls touch, so start at |x| = 2
    fam = geo.LatticeFamily(3, phi, min_norm=2.0)
    return fam, geo.RegularSpec(0.4, R, phi)


def test_regular_lattice_passes():
    fam, spec = _lattice_regular()
    assert geo.check_regular_located(fam, spec, geo.Annulus(2.0, 8.0)).passed


def test_regular_missing_point_fails_density():
    # with R = sqrt(3) the neighbours of a single hole still cover it; 0.9 sits just above
    # the covering radius sqrt(3)/2 of the full lattice
    fam, spec = _lattice_regular(R=0.9)
    assert geo.check_regular_located(fam, spec, geo.Annulus(2.0, 8.0)).passed
    c, r = fam.balls_within(8.0)
    keep = ~np.all(c == [4.0, 0.0, 0.0], axis=1)
    holey = geo.ExplicitFamily(c[keep], r[keep])
    rep = geo.check_regular_located(holey, spec, geo.Annulus(2.0, 8.0))
    assert not rep.density_ok and rep.separation_ok and rep.radius_ok
    assert rep.density_witness is not None


def test_regular_perturbed_radius_fails():
    fam, spec = _lattice_regular()
    c, r = fam.balls_within(8.0)
    rep = geo.check_regular_located(geo.ExplicitFamily(c, r * (1 + 1e-6)), spec, geo.Annulus(2.0, 8.0))
    assert not rep.radius_ok and rep.radius_witness is not None


def test_lattice_annulus_count_matches_enumeration():
    fam = geo.LatticeFamily(3, geo.power_law(1.0, 0.1), min_norm=1.0)
    got = geo.count_balls_in_annulus(fam, np.zeros(3), 10.0)
    k = np.arange(-20, 21)
    pts = np.stack(np.meshgrid(k, k, k, indexing="ij"), -1).reshape(-1, 3)
    n = np.linalg.norm(pts, axis=1)
    assert got == np.count_nonzero((n >= 10) & (n <= 20))
    lo, hi = geo.fit_density_band(fam, [5.0, 10.0, 20.0])
    assert lo * 1000 <= got / 1.0 <= hi * 1000 + 1e-9


def test_small_annulus_can_be_empty():
    fam = geo.LatticeFamily(3, geo.power_law(1.0, 0.1), min_norm=1.0)
    assert geo.count_balls_in_annulus(fam, [0.5, 0.5, 0.5], 0.1) == 0


def test_two_ball_count_bound():
    fam = geo.ExplicitFamily([[3, 0, 0], [0, 5, 0]], [0.5, 0.5])
    for r in (0.5, 1, 2, 4, 8):
        assert geo.count_balls_in_annulus(fam, [0, 0, 0], r) in (0, 1, 2)


def test_overlapping_balls_rejected():
    with pytest.raises(ConfigError):
        geo.ExplicitFamily([[3, 0, 0], [3.5, 0, 0]], [0.4, 0.4])
    with pytest.raises(ConfigError):
        geo.ExplicitFamily([[0.3, 0, 0]], [0.5])


def test_separation_two_far_balls():
    fam = geo.ExplicitFamily([[10, 0, 0], [-40, 0, 0]], [1.0, 1.0])
    rep = geo.check_separation(fam, ex.brownian(), BROWNIAN, c0=1.0)
    assert rep.passed and rep.infimum > 1


def test_separation_constant_radius_lattice_decays():
    fam = geo.LatticeFamily(3, lambda r: 0.1 + 0 * np.asarray(r, float), min_norm=1.0)
    rep = geo.check_separation(fam, ex.brownian(), BROWNIAN, truncation=16.0)
    assert not rep.passed and rep.trend_slope < 0


def test_separation_empty_family():
    with pytest.raises(DomainError):
        geo.check_separation(geo.ExplicitFamily(np.zeros((0, 3)), []), ex.brownian(), BROWNIAN, truncation=5.0)


def test_family_csv_round_trip(tmp_path):
    fam = geo.ExplicitFamily([[3, 0, 0], [0, 5, 1]], [0.5, 0.25])
    geo.write_family_csv(tmp_path / "f.csv", fam.centers, fam.radii)
    back = geo.read_family_csv(tmp_path / "f.csv")
    assert np.array_equal(back.centers, fam.centers) and np.array_equal(back.radii, fam.radii)


def test_lattice_shells_match_enumeration():
    norms, mult = geo.lattice_shells(3, 6.0, 1.0, 1.0)
    fam = geo.LatticeFamily(3, geo.power_law(1.0, 0.1), min_norm=1.0)
    c, _ = fam.balls_within(6.0)
    assert mult.sum() == len(c)


def test_geometric_family_positions():
    fam = geo.GeometricFamily()
    c, r = fam.balls_within(64.0)
    assert c[:, 0].tolist() == [4.0, 8.0, 16.0, 32.0, 64.0]
    assert np.all(r == 1.0)


def test_whitney_csv(tmp_path):
    geo.write_whitney_csv(tmp_path / "w.csv", geo.whitney_decompose(2, 1, 1))
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "j,index,center,side" and len(lines) == 9


def test_cube_containment_is_half_open():
    cube = geo.WhitneyCube(2, (1, 0))
    assert cube.contains(cube.lower_corner)[0]
    assert not cube.contains(cube.upper_corner)[0]


@given(st.integers(-3, 6), st.sampled_from(list(itertools.product((-1, 0, 1), repeat=2))))
def test_cube_center_locates_to_itself(j, idx):
    if not any(idx):
        return
    cube = geo.WhitneyCube(j, idx)
    assert geo.locate(cube.center[None, :])[0] == cube
