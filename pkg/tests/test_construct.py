"""Tests for the gadget constructions and the residual-network assembly."""

import math

import numpy as np
import pytest
from scipy import stats

from besovnet.bspline import BesovParams, BSplineAtom, SparseSeries, eval_atom, sparse_approximate
from besovnet.construct import (
    ChartCover,
    assemble_resnext,
    build_bspline_net,
    build_distance_sq,
    build_indicator,
    build_multiply_gate,
    build_square,
    fnn_to_cnn,
    remove_bias,
    spline_min_depth,
)
from besovnet.network import (
    DenseNet,
    DenseResNeXt,
    conv_path_forward,
    dense_forward,
    norm_report,
)


PARAMS_1D = BesovParams(alpha=1.2, p=2.0, q=2.0, d=1, m=2)


def flat_cover(delta=1.05, r=0.6, r_outer=3.0):
    """Single chart covering [0, 1] on a flat 1-d ambient line (infinite
    reach), with slack generous enough for chord-level distance nets."""
    return ChartCover(
        centers=[np.array([0.5])],
        r=r,
        r_outer=r_outer,
        tau=math.inf,
        delta=delta,
        frames=[np.eye(1)],
        origins=[np.zeros(1)],
    )


class TestSquareGadget:
    def test_exact_at_zero(self):
        rep = build_square(5, 2.0)
        assert dense_forward(rep.net, np.array([0.0]))[0] == 0.0

    def test_exact_at_right_endpoint(self):
        rep = build_square(6, 1.5)
        out = dense_forward(rep.net, np.array([3.0]))[0]
        assert out == pytest.approx(9.0, rel=1e-13)

    def test_error_halves_with_four_extra_layers(self):
        grid = np.linspace(0.0, 2.0, 2001)[:, None]
        errs = {}
        for L in (3, 7, 11):
            rep = build_square(L, 1.0)
            errs[L] = np.max(np.abs(dense_forward(rep.net, grid).ravel() - grid.ravel() ** 2))
        assert errs[7] <= errs[3] / 2
        assert errs[11] <= errs[7] / 2

    def test_measured_error_within_certificate(self):
        for L in (2, 4, 8):
            rep = build_square(L, 0.7)
            assert rep.measured_error <= rep.cert_bound * (1 + 1e-12)

    def test_depth_too_small(self):
        with pytest.raises(ValueError):
            build_square(1, 1.0)


class TestMultiplyGate:
    def test_hand_evaluated_examples(self):
        g1 = build_multiply_gate(1.0)
        assert dense_forward(g1, np.array([0.7, 1.0]))[0] == pytest.approx(0.7, abs=1e-15)
        assert dense_forward(g1, np.array([0.3, 0.0]))[0] == 0.0
        g5 = build_multiply_gate(5.0)
        assert dense_forward(g5, np.array([5.0, 1.0]))[0] == pytest.approx(5.0, abs=1e-14)

    def test_exactness_on_random_samples(self):
        # net output must equal the closed-form ReLU expression bit for bit,
        # and the expression itself reproduces x*y for binary y
        rng = np.random.default_rng(5)
        C = 2.0
        gate = build_multiply_gate(C)
        x = rng.uniform(0, C, size=10_000)
        y = rng.integers(0, 2, size=10_000).astype(float)
        outs = dense_forward(gate, np.stack([x, y], axis=1)).ravel()
        closed = -C * np.maximum(-x / C + y, 0.0) + C * np.maximum(y, 0.0)
        assert np.array_equal(outs, closed)
        assert np.all(outs[y == 0.0] == 0.0)
        assert np.max(np.abs(outs - x * y)) <= C * 1e-15

    def test_zero_x_gives_zero(self):
        gate = build_multiply_gate(3.0)
        for y in (0.0, 1.0):
            assert dense_forward(gate, np.array([0.0, y]))[0] == 0.0

    def test_rejects_nonpositive_cap(self):
        with pytest.raises(ValueError):
            build_multiply_gate(0.0)


class TestDistanceGadget:
    def test_near_zero_at_center(self):
        c = np.array([0.1, -0.4, 0.3])
        rep = build_distance_sq(c, L=8, B=1.0, tau=1.5)
        assert abs(dense_forward(rep.net, c)[0]) <= rep.cert_bound

    def test_exact_clip_beyond_reach(self):
        c = np.array([0.0, 0.0])
        tau = 0.5
        rep = build_distance_sq(c, L=6, B=2.0, tau=tau)
        x = np.array([0.8, 0.6])  # distance 1.0 = 2 * tau
        assert dense_forward(rep.net, x)[0] == tau**2

    def test_error_decays_exponentially_in_depth(self):
        rng = np.random.default_rng(11)
        c = np.array([0.2, -0.1])
        tau = 3.0
        errs = []
        depths = [4, 6, 8, 10]
        pts = rng.uniform(-0.9, 0.9, size=(500, 2))
        for L in depths:
            rep = build_distance_sq(c, L=L, B=1.0, tau=tau)
            vals = dense_forward(rep.net, pts).ravel()
            d2 = np.sum((pts - c) ** 2, axis=1)
            errs.append(np.max(np.abs(vals - d2)))
        slope = stats.linregress(depths, np.log(errs)).slope
        assert slope < -0.1

    def test_depth_insufficient(self):
        with pytest.raises(ValueError):
            build_distance_sq(np.zeros(2), L=3, B=1.0, tau=1.0)


class TestIndicatorGadget:
    def cover(self):
        return ChartCover(
            centers=[np.array([0.0, 0.0])],
            r=0.5,
            r_outer=1.5,
            tau=4.0,
            delta=0.2,
        )

    def test_one_at_center(self):
        net = build_indicator(self.cover(), 0, L=7, B=2.0)
        assert dense_forward(net, np.array([0.0, 0.0]))[0] == 1.0

    def test_one_on_inner_ball_boundary(self):
        net = build_indicator(self.cover(), 0, L=7, B=2.0)
        x = np.array([0.5, 0.0])
        assert dense_forward(net, x)[0] == 1.0

    def test_zero_beyond_outer_radius(self):
        net = build_indicator(self.cover(), 0, L=7, B=2.0)
        x = np.array([1.6, 0.0])  # r_outer + 0.1
        assert dense_forward(net, x)[0] == 0.0

    def test_between_radii_in_unit_interval(self):
        net = build_indicator(self.cover(), 0, L=7, B=2.0)
        x = np.array([1.0, 0.0])  # (r + r_outer) / 2
        val = dense_forward(net, x)[0]
        assert 0.0 <= val <= 1.0

    def test_slack_below_distance_error_rejected(self):
        tight = ChartCover(
            centers=[np.array([0.0, 0.0])], r=0.5, r_outer=1.5, tau=4.0, delta=1e-6
        )
        with pytest.raises(ValueError):
            build_indicator(tight, 0, L=5, B=2.0)

    def test_cover_invariants_enforced(self):
        with pytest.raises(ValueError):
            ChartCover(centers=[np.zeros(2)], r=1.4, r_outer=1.5, tau=4.0, delta=0.2)
        with pytest.raises(ValueError):
            ChartCover(centers=[np.zeros(2)], r=0.5, r_outer=3.0, tau=4.0, delta=0.2)


class TestBSplineNet:
    def test_exact_zero_outside_support(self):
        atom = BSplineAtom(m=2, k=1, s=(0.25,), a=1.0)
        rep = build_bspline_net(atom, L=8)
        lo, hi = atom.support_box()
        pts = np.concatenate(
            [
                np.linspace(lo[0] - 1.0, lo[0], 200),
                np.linspace(hi[0], hi[0] + 1.0, 200),
            ]
        )[:, None]
        assert np.all(dense_forward(rep.net, pts).ravel() == 0.0)

    def test_support_center_accuracy(self):
        atom = BSplineAtom(m=2, k=0, s=(0.0,), a=1.0)
        rep = build_bspline_net(atom, L=12)
        x = np.array([1.5])
        assert dense_forward(rep.net, x)[0] == pytest.approx(
            eval_atom(atom, x), abs=1e-3
        )

    def test_inside_error_within_certificate(self):
        for atom, L in [
            (BSplineAtom(m=2, k=0, s=(0.0,), a=1.0), 8),
            (BSplineAtom(m=3, k=1, s=(0.5,), a=1.0), 12),
            (BSplineAtom(m=2, k=0, s=(0.0, 0.0), a=1.0), 10),
            (BSplineAtom(m=1, k=2, s=(0.25,), a=1.0), 4),
        ]:
            rep = build_bspline_net(atom, L)
            assert rep.measured_error <= rep.cert_bound * (1 + 1e-12)
            assert rep.meta["outside_exact_on_grid"]

    def test_order_one_is_exact(self):
        atom = BSplineAtom(m=1, k=1, s=(0.5,), a=1.0)
        rep = build_bspline_net(atom, L=3)
        grid = np.linspace(-0.5, 2.0, 801)[:, None]
        ref = eval_atom(atom, grid)
        assert np.max(np.abs(dense_forward(rep.net, grid).ravel() - ref)) <= 1e-14

    def test_doubling_depth_halves_error(self):
        atom = BSplineAtom(m=2, k=0, s=(0.0,), a=1.0)
        grid = np.linspace(0.0, 3.0, 901)[:, None]
        ref = eval_atom(atom, grid)
        errs = {}
        for L in (5, 10, 20):
            rep = build_bspline_net(atom, L)
            errs[L] = np.max(np.abs(dense_forward(rep.net, grid).ravel() - ref))
        assert errs[10] <= errs[5] / 2
        assert errs[20] <= errs[10] / 2

    def test_log_error_slope_in_depth(self):
        atom = BSplineAtom(m=2, k=0, s=(0.0,), a=1.0)
        grid = np.linspace(0.0, 3.0, 901)[:, None]
        ref = eval_atom(atom, grid)
        depths = [5, 7, 9, 11, 13]
        errs = [
            np.max(np.abs(dense_forward(build_bspline_net(atom, L).net, grid).ravel() - ref))
            for L in depths
        ]
        slope = stats.linregress(depths, np.log(errs)).slope
        assert slope < -0.1

    def test_depth_insufficient(self):
        with pytest.raises(ValueError):
            build_bspline_net(BSplineAtom(m=2, k=0, s=(0.0,), a=1.0), L=3)
        assert spline_min_depth(1, 2, gated=False) == 4

    def test_norm_scaling_recorded(self):
        rep = build_bspline_net(BSplineAtom(m=2, k=3, s=(0.0,), a=1.0), L=8)
        assert rep.meta["balanced_sq_norm"] > 0
        assert rep.meta["norm_constant"] > 0


class TestRemoveBias:
    def test_exact_equivalence(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            dims = [int(rng.integers(1, 7)) for _ in range(4)]
            layers = [
                (rng.standard_normal((dims[i + 1], dims[i])), rng.standard_normal(dims[i + 1]))
                for i in range(3)
            ]
            net = DenseNet(layers)
            nb = remove_bias(net)
            assert nb.is_bias_free()
            for (W, _), (W0, _) in zip(nb.layers[:-1], net.layers[:-1]):
                assert W.shape[0] == W0.shape[0] + 1  # hidden width grows by one
            for _ in range(5):
                x = rng.standard_normal(dims[0])
                dev = np.max(
                    np.abs(dense_forward(net, x) - dense_forward(nb, np.append(x, 1.0)))
                )
                worst = max(worst, dev)
        assert worst == 0.0

    def test_zero_net(self):
        net = DenseNet([(np.zeros((2, 2)), np.zeros(2)), (np.zeros((1, 2)), np.zeros(1))])
        nb = remove_bias(net)
        assert dense_forward(nb, np.array([3.0, -1.0, 1.0]))[0] == 0.0

    def test_single_layer_concatenates_bias(self):
        W = np.array([[1.0, 2.0]])
        b = np.array([3.0])
        nb = remove_bias(DenseNet([(W, b)]))
        assert np.array_equal(nb.layers[0][0], np.array([[1.0, 2.0, 3.0]]))

    def test_norm_identity(self):
        rng = np.random.default_rng(13)
        layers = [
            (rng.standard_normal((3, 2)), rng.standard_normal(3)),
            (rng.standard_normal((1, 3)), rng.standard_normal(1)),
        ]
        net = DenseNet(layers)
        nb = remove_bias(net)
        assert nb.total_sq_norm() == pytest.approx(
            net.total_sq_norm() + net.depth - 1, rel=1e-14
        )


def _series(atoms):
    return SparseSeries(atoms=atoms, params=PARAMS_1D)


class TestAssembleResNeXt:
    def test_single_atom_matches_oracle_in_ball(self):
        atom = BSplineAtom(m=2, k=1, s=(0.2,), a=1.0)
        res = assemble_resnext([_series([atom])], flat_cover(), L=10, budget_mode=True)
        rng = np.random.default_rng(3)
        xs = rng.uniform(0.0, 1.0, size=(1000, 1))
        vals = res.net.forward(xs)
        ref = eval_atom(atom, xs)
        assert np.max(np.abs(vals - ref)) <= res.cert_bound

    def test_scaling_invariance(self):
        atoms = [
            BSplineAtom(m=2, k=0, s=(0.0,), a=0.8),
            BSplineAtom(m=2, k=1, s=(0.25,), a=-0.5),
        ]
        res = assemble_resnext([_series(atoms)], flat_cover(), L=8)
        xs = np.linspace(0, 1, 100)[:, None]
        base = res.net.forward(xs)
        exact = res.net.scale_residual(2.0).forward(xs)
        assert np.array_equal(base, exact)
        close = res.net.scale_residual(1.37).forward(xs)
        denom = np.maximum(np.abs(base), 1e-12)
        assert np.max(np.abs(close - base) / denom) <= 1e-9

    def test_zero_coefficient_contributes_exactly_zero(self):
        atom = BSplineAtom(m=2, k=0, s=(0.0,), a=0.0)
        res = assemble_resnext([_series([atom])], flat_cover(), L=6, budget_mode=False)
        xs = np.linspace(0, 1, 50)[:, None]
        assert np.all(res.net.forward(xs) == 0.0)

    def test_block_placement_invariance(self):
        atoms = [
            BSplineAtom(m=2, k=0, s=(0.0,), a=0.8),
            BSplineAtom(m=2, k=1, s=(0.25,), a=-0.5),
            BSplineAtom(m=2, k=1, s=(-0.5,), a=0.3),
            BSplineAtom(m=2, k=1, s=(0.5,), a=0.9),
        ]
        res = assemble_resnext(
            [_series(atoms)], flat_cover(), L=6, n_blocks=2, paths_per_block=2
        )
        xs = np.linspace(0, 1, 60)[:, None]
        base = res.net.forward(xs)
        rng = np.random.default_rng(9)
        flat = [net for row in res.net.blocks for net in row]
        for _ in range(5):
            perm = rng.permutation(len(flat))
            shuffled = DenseResNeXt(
                blocks=[[flat[perm[0]], flat[perm[1]]], [flat[perm[2]], flat[perm[3]]]],
                input_dim=res.net.input_dim,
                pad_width=res.net.pad_width,
                w_out=res.net.w_out,
                readout_indices=res.net.readout_indices,
            )
            assert np.max(np.abs(shuffled.forward(xs) - base)) <= 1e-12 * (
                1 + np.max(np.abs(base))
            )

    def test_chart_gate_error_free_outside_annulus(self):
        # inside the inner ball the gated block equals the ungated value net
        # exactly; beyond the outer radius the output is exactly zero
        from besovnet.construct import _build_spline_value

        atom = BSplineAtom(m=2, k=1, s=(0.2,), a=1.0)
        cover = flat_cover()
        gated = _build_spline_value(atom, 8, None, cover=cover, chart_index=0, coord_bound=4.0)
        plain = _build_spline_value(atom, 8, gated.delta, cover=None)
        xs_in = np.linspace(0.0, 1.0, 500)[:, None]  # all within r of the center
        g = dense_forward(gated.net, xs_in).ravel()
        p = dense_forward(plain.net, xs_in).ravel()
        assert np.array_equal(g, p)
        xs_out = np.array([[3.6], [-2.6], [4.0]])  # beyond r_outer, inside [-B, B]
        assert np.all(dense_forward(gated.net, xs_out).ravel() == 0.0)

    def test_error_nonincreasing_in_sparsity(self):
        def f(x):
            return math.sin(3.0 * float(np.atleast_1d(x)[0]))

        cover = flat_cover()
        xs = np.linspace(0, 1, 400)[:, None]
        target = np.array([f(x) for x in xs])
        errs = []
        for P in (4, 8, 16):
            series = sparse_approximate(f, PARAMS_1D, P=P, k_max=3)
            res = assemble_resnext([series], cover, L=12)
            errs.append(np.max(np.abs(res.net.forward(xs) - target)))
        assert errs[1] <= errs[0] + 1e-9
        assert errs[2] <= errs[1] + 1e-9

    def test_log_error_decreases_affinely_in_depth(self):
        atom = BSplineAtom(m=2, k=1, s=(0.25,), a=1.0)
        cover = flat_cover()
        xs = np.linspace(0, 1, 300)[:, None]
        ref = eval_atom(atom, xs)
        depths = [4, 6, 8, 10]
        errs = []
        for L in depths:
            res = assemble_resnext([_series([atom])], cover, L=L)
            errs.append(np.max(np.abs(res.net.forward(xs) - ref)))
        fit = stats.linregress(depths, np.log(errs))
        assert fit.slope < -0.1

    def test_norm_constant_stable_across_sparsity(self):
        def f(x):
            return math.sin(3.0 * float(np.atleast_1d(x)[0]))

        cover = flat_cover()
        consts = []
        for P in (4, 8, 16):
            series = sparse_approximate(f, PARAMS_1D, P=P, k_max=3)
            res = assemble_resnext([series], cover, L=8, budget_mode=True)
            consts.append(res.norm_constant)
        mid = np.median(consts)
        assert all(abs(c - mid) <= 0.2 * mid for c in consts)

    def test_budget_infeasible_grid(self):
        atoms = [BSplineAtom(m=2, k=0, s=(0.0,), a=1.0)] * 3
        with pytest.raises(ValueError):
            assemble_resnext(
                [_series(atoms)], flat_cover(), L=6, n_blocks=1, paths_per_block=2
            )

    def test_norm_report_attached(self):
        atom = BSplineAtom(m=2, k=0, s=(0.0,), a=1.0)
        res = assemble_resnext([_series([atom])], flat_cover(), L=6)
        rep = norm_report(res.net)
        assert rep.b_res_actual == pytest.approx(res.report.b_res_actual)


class TestFnnToCnn:
    def test_l0_formula(self):
        net = DenseNet([(np.ones((3, 5)), None)])
        assert fnn_to_cnn(net, 3).l0 == 2  # ceil((5-1)/(3-1))

    def test_equivalence_on_random_nets(self):
        rng = np.random.default_rng(21)
        worst = 0.0
        for _ in range(100):
            h = int(rng.integers(2, 10))
            K = int(rng.integers(2, 6))
            depth = int(rng.integers(1, 5))
            width = int(rng.integers(1, 7))
            h_out = int(rng.integers(1, 4))
            dims = [h] + [width] * (depth - 1) + [h_out]
            net = DenseNet(
                [(rng.standard_normal((dims[i + 1], dims[i])), None) for i in range(depth)]
            )
            rep = fnn_to_cnn(net, K)
            assert len(rep.kernels) == depth + rep.l0 - 1
            for _ in range(5):
                x = rng.standard_normal(h)
                ref = dense_forward(net, x)
                out = conv_path_forward(rep.kernels, x[:, None])
                worst = max(worst, float(np.max(np.abs(out[0, :] - ref))))
        assert worst <= 1e-9

    def test_norm_inequality_every_instance(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            h = int(rng.integers(2, 10))
            K = int(rng.integers(2, 6))
            depth = int(rng.integers(1, 5))
            width = int(rng.integers(1, 7))
            dims = [h] + [width] * (depth - 1) + [1]
            net = DenseNet(
                [(rng.standard_normal((dims[i + 1], dims[i])), None) for i in range(depth)]
            )
            rep = fnn_to_cnn(net, K)
            bound = 4 * net.total_sq_norm() + 4 * net.width * rep.l0
            assert rep.total_sq_norm <= bound * (1 + 1e-12)

    def test_rejects_unit_kernel(self):
        net = DenseNet([(np.ones((2, 3)), None)])
        with pytest.raises(ValueError):
            fnn_to_cnn(net, 1)

    def test_rejects_biased_network(self):
        net = DenseNet([(np.ones((2, 3)), np.ones(2))])
        with pytest.raises(ValueError):
            fnn_to_cnn(net, 3)
