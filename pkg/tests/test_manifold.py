"""Tests for the synthetic curve dataset and greedy ball covers."""

import numpy as np
import pytest

from besovnet.manifold import (
    CurveSpec,
    ManifoldDataset,
    build_cover,
    cover_assignment_distances,
    curve_coords,
    generate_curve_dataset,
    random_rotation,
)


def spec(D=5, n=200, seed=3, noise_sd=1.0):
    return CurveSpec(D=D, rotation=random_rotation(D, seed + 100), noise_sd=noise_sd, n=n, seed=seed)


class TestRandomRotation:
    def test_orthogonal(self):
        U = random_rotation(7, 0)
        assert np.max(np.abs(U.T @ U - np.eye(7))) <= 1e-12

    def test_deterministic(self):
        assert np.array_equal(random_rotation(5, 42), random_rotation(5, 42))

    def test_unit_columns(self):
        U = random_rotation(6, 9)
        assert np.max(np.abs(np.linalg.norm(U, axis=0) - 1.0)) <= 1e-12

    def test_proper_rotation(self):
        for seed in range(5):
            assert np.linalg.det(random_rotation(4, seed)) == pytest.approx(1.0, abs=1e-10)


class TestCurveCoords:
    def test_origin_at_zero(self):
        assert np.array_equal(curve_coords(0.0), np.zeros(3))

    def test_halfway_point(self):
        c = curve_coords(0.5)
        assert c[0] == pytest.approx(0.0, abs=1e-15)
        assert c[1] == pytest.approx(0.5, rel=1e-12)
        assert c[2] == pytest.approx(0.25, rel=1e-12)


class TestGenerateCurveDataset:
    def test_reproducible(self):
        a = generate_curve_dataset(spec())
        b = generate_curve_dataset(spec())
        assert np.array_equal(a.xs, b.xs)
        assert np.array_equal(a.ys, b.ys)

    def test_rotation_recovers_curve_coordinates(self):
        ds = generate_curve_dataset(spec())
        tilde = ds.xs @ ds.spec.rotation.T  # U x with row convention
        ref = curve_coords(ds.ts)
        assert np.max(np.abs(tilde[:, :3] - ref)) <= 1e-12

    def test_noiseless_labels_follow_link(self):
        sp = CurveSpec(D=3, rotation=np.eye(3), noise_sd=0.0, n=50, seed=1)
        ds = generate_curve_dataset(sp)
        assert np.array_equal(ds.ys, sp.link(ds.ts))

    def test_pairwise_distances_rotation_invariant(self):
        sp = spec(D=6, n=80)
        ds = generate_curve_dataset(sp)
        rng = np.random.default_rng(sp.seed)
        ts = np.linspace(0, 1, sp.n)
        tilde = np.zeros((sp.n, sp.D))
        tilde[:, :3] = curve_coords(ts)
        tilde[:, 3:] = rng.uniform(0.0, 1.0, size=(sp.n, sp.D - 3))
        d_t = np.linalg.norm(tilde[:, None] - tilde[None, :], axis=2)
        d_x = np.linalg.norm(ds.xs[:, None] - ds.xs[None, :], axis=2)
        assert np.max(np.abs(d_t - d_x)) <= 1e-10

    def test_rejects_low_dimension(self):
        with pytest.raises(ValueError):
            CurveSpec(D=2, rotation=np.eye(2), n=10, seed=0)

    def test_csv_roundtrip(self):
        ds = generate_curve_dataset(spec(n=30))
        back = ManifoldDataset.from_csv(ds.to_csv())
        assert np.array_equal(back.xs, ds.xs)
        assert np.array_equal(back.ys, ds.ys)
        assert np.array_equal(back.ts, ds.ts)

    def test_spec_json_roundtrip(self):
        sp = spec()
        back = CurveSpec.from_json(sp.to_json())
        assert np.array_equal(back.rotation, sp.rotation)
        assert back.values == sp.values


class TestBuildCover:
    def test_identical_points_single_center(self):
        pts = np.tile(np.array([[0.3, 0.7]]), (20, 1))
        cover = build_cover(pts, r=0.5)
        assert cover.n_charts == 1

    def test_line_with_generous_radius(self):
        pts = np.linspace(0.0, 1.0, 50)[:, None]
        cover = build_cover(pts, r=0.6)
        assert cover.n_charts <= 2

    def test_every_point_within_radius(self):
        rng = np.random.default_rng(12)
        pts = rng.uniform(-1, 1, size=(300, 3))
        cover = build_cover(pts, r=0.8)
        assert np.max(cover_assignment_distances(cover, pts)) <= 0.8

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_cover(np.zeros((0, 2)), r=0.5)
