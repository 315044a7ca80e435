"""Command-line entry point: approximate, construct, verify, bounds,
gen-data, train, bench.

Every run writes a JSON manifest (command, flags, seed, package version)
beside its outputs so results can be reproduced from the manifest alone.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bspline import BesovParams, SparseSeries, sparse_approximate
from .complexity import (
    CapacityQuery,
    critical_radius,
    generalization_bound,
    log_covering_bound,
    validate_block_removal,
    validate_lipschitz_conv,
    validate_lipschitz_dense,
    validate_lipschitz_resnext,
)
from .construct import (
    ChartCover,
    assemble_resnext,
    build_bspline_net,
    build_distance_sq,
    build_indicator,
    build_multiply_gate,
    build_square,
)
from .manifold import CurveSpec, generate_curve_dataset, random_rotation
from .train import NetArch, TrainConfig, fit, forward_batch, init_net, rows_to_csv, run_benchmark


def _write_manifest(out_path: Path, command: str, options: dict):
    clean = {k: v for k, v in options.items() if not callable(v)}
    manifest = {
        "command": command,
        "options": clean,
        "version": __version__,
    }
    out_path.with_suffix(out_path.suffix + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _cover_from_json(path: str) -> ChartCover:
    doc = json.loads(Path(path).read_text())
    return ChartCover(
        centers=[np.asarray(c) for c in doc["centers"]],
        r=doc["r"],
        r_outer=doc["r_outer"],
        tau=doc.get("tau", math.inf) if doc.get("tau") != "inf" else math.inf,
        delta=doc["delta"],
        frames=[np.asarray(f) for f in doc["frames"]] if doc.get("frames") else None,
        origins=[np.asarray(o) for o in doc["origins"]] if doc.get("origins") else None,
    )


def _cmd_approximate(args) -> int:
    params = BesovParams(
        alpha=args.alpha, p=args.p, q=args.q, d=1, m=args.m
    )
    freq = args.frequency

    def target(x):
        return math.sin(freq * float(np.atleast_1d(x)[0]))

    series = sparse_approximate(target, params, P=args.sparsity, k_max=args.k_max)
    out = Path(args.out)
    out.write_text(series.to_json() + "\n")
    _write_manifest(out, "approximate", vars(args) | {"target": f"sin({freq} x)"})
    print(f"wrote {out} (residual {series.grid_residual:.3e})")
    return 0


def _cmd_construct(args) -> int:
    series = SparseSeries.from_json(Path(args.series).read_text())
    cover = _cover_from_json(args.cover)
    result = assemble_resnext(
        [series] * cover.n_charts if args.replicate_series else [series],
        cover,
        L=args.depth,
        budget_mode=not args.no_budget,
    )
    out = Path(args.out)
    out.write_text(result.net.to_json() + "\n")
    report_path = out.with_suffix(".report.csv")
    lines = ["gadget,L,width,sq_norm,measured_error"]
    rep = result.report
    for (n, m), sq in sorted(rep.per_block.items()):
        cert = result.block_certs[n * result.net.paths_per_block + m] if (
            n * result.net.paths_per_block + m < len(result.block_certs)
        ) else 0.0
        lines.append(
            f"block_{n}_{m},{args.depth},{result.net.blocks[n][m].width},{sq!r},{cert!r}"
        )
    report_path.write_text("\n".join(lines) + "\n")
    _write_manifest(out, "construct", vars(args))
    print(
        f"wrote {out} and {report_path} "
        f"(b_res {rep.b_res_actual:.4g}, b_out {rep.b_out_actual:.4g}, "
        f"certified sup error {result.cert_bound:.3e})"
    )
    return 0


def _cmd_verify(args) -> int:
    checks: list[tuple[str, bool, str]] = []
    if args.suite in ("gadgets", "all"):
        sq = build_square(8, 1.0)
        checks.append(
            ("square gadget error within certificate", sq.measured_error <= sq.cert_bound, f"{sq.measured_error:.2e} <= {sq.cert_bound:.2e}")
        )
        gate = build_multiply_gate(1.0)
        from .network import dense_forward

        rng = np.random.default_rng(args.seed)
        xs = rng.uniform(0, 1, 1000)
        outs = dense_forward(gate, np.stack([xs, np.ones_like(xs)], axis=1)).ravel()
        checks.append(
            ("multiply gate reproduces x at y=1", bool(np.max(np.abs(outs - xs)) < 1e-14), f"max dev {np.max(np.abs(outs - xs)):.1e}")
        )
        dist = build_distance_sq(np.zeros(2), L=6, B=1.0, tau=0.5)
        far = dense_forward(dist.net, np.array([0.9, 0.9]))[0]
        checks.append(("distance net clips exactly at tau^2", far == 0.25, f"value {far!r}"))
        from .bspline import BSplineAtom

        rep = build_bspline_net(BSplineAtom(m=2, k=0, s=(0.0,), a=1.0), 8)
        checks.append(
            ("spline net exact outside / certified inside", rep.meta["outside_exact_on_grid"] and rep.measured_error <= rep.cert_bound, f"err {rep.measured_error:.2e}")
        )
    if args.suite in ("capacity", "all"):
        checks.append(
            ("dense Lipschitz quotients under bound", validate_lipschitz_dense(args.seed) <= 1.0, "")
        )
        checks.append(
            ("conv Lipschitz quotients under bound", validate_lipschitz_conv(args.seed) <= 1.0, "")
        )
        checks.append(
            ("residual-stack Lipschitz under bound", validate_lipschitz_resnext(args.seed) <= 1.0, "")
        )
        checks.append(
            ("block-removal perturbations under bound", validate_block_removal(args.seed) <= 1.0, "")
        )
    ok = True
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
        ok = ok and passed
    return 0 if ok else 1


def _cmd_bounds(args) -> int:
    q = CapacityQuery(
        w=args.w, L=args.L, K=args.K, b_res=args.bres, b_out=args.bout,
        n=args.n, delta=args.delta,
    )
    cover = log_covering_bound(q)
    radius = critical_radius(q)
    gen = generalization_bound(q, args.alpha, args.d, args.p, 1.0, 1.0, 1.0)
    out = Path(args.out) if args.out else None
    header = "w,L,K,b_res,b_out,n,delta,log_covering,critical_radius,residual,excess_risk"
    row = (
        f"{args.w},{args.L},{args.K},{args.bres!r},{args.bout!r},{args.n},{args.delta!r},"
        f"{cover!r},{radius.delta_n!r},{radius.quadrature_residual!r},{gen!r}"
    )
    if out:
        out.write_text(header + "\n" + row + "\n")
        _write_manifest(out, "bounds", vars(args))
        print(f"wrote {out}")
    else:
        print(header)
        print(row)
    return 0


def _cmd_gen_data(args) -> int:
    spec = CurveSpec(
        D=args.D,
        rotation=random_rotation(args.D, args.seed),
        noise_sd=args.noise_sd,
        n=args.n,
        seed=args.seed,
    )
    ds = generate_curve_dataset(spec)
    out = Path(args.out)
    out.write_text(ds.to_csv())
    out.with_suffix(".spec.json").write_text(spec.to_json() + "\n")
    _write_manifest(out, "gen-data", vars(args))
    print(f"wrote {out} ({ds.n} samples, D={args.D})")
    return 0


def _cmd_train(args) -> int:
    from .manifold import ManifoldDataset

    ds = ManifoldDataset.from_csv(Path(args.data).read_text())
    net = init_net(
        ds.xs.shape[1], w=args.w, L=args.L, K=args.K, M=args.M, N=args.N, seed=args.seed
    )
    config = TrainConfig(
        lambda1=args.lambda1, lambda2=args.lambda2, lr=args.lr,
        epochs=args.epochs, batch_size=args.batch_size, loss=args.loss,
        seed=args.seed,
    )
    result = fit(net, ds.xs, ds.ys, config)
    out = Path(args.out)
    out.write_text(result.net.to_json() + "\n")
    trace_path = out.with_suffix(".trace.csv")
    trace_path.write_text(
        "epoch,objective\n"
        + "\n".join(f"{i},{v!r}" for i, v in enumerate(result.trace))
        + "\n"
    )
    _write_manifest(out, "train", vars(args))
    mse = float(np.mean((forward_batch(result.net, ds.xs) - ds.ys) ** 2))
    print(f"wrote {out} (final objective {result.trace[-1]:.4f}, train MSE {mse:.4f})")
    return 0


def _cmd_bench(args) -> int:
    values = [float(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    arch = NetArch(w=args.w, L=args.L, K=args.K, M=args.M, N=args.N)
    config = TrainConfig(
        lambda1=args.lambda1, lambda2=args.lambda2, lr=args.lr,
        epochs=args.epochs, batch_size=args.batch_size,
    )
    rows = run_benchmark(
        sweep=args.sweep, values=values, seeds=seeds, n=args.n, D=args.D,
        noise_sd=args.noise_sd, arch=arch, train_config=config,
    )
    out = Path(args.out)
    out.write_text(rows_to_csv(rows))
    _write_manifest(out, "bench", vars(args))
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="besovnet",
        description="Construct, verify, bound, and train residual networks "
        "that approximate spline series on low-dimensional manifolds.",
    )
    parser.add_argument("--threads", type=int, default=1, help="internal parallelism cap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approximate", help="fit a sparse spline series to a 1-d target")
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--frequency", type=float, default=3.0)
    p.add_argument("--sparsity", type=int, default=8)
    p.add_argument("--k-max", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_approximate)

    p = sub.add_parser("construct", help="assemble a residual network from a series and cover")
    p.add_argument("--series", required=True)
    p.add_argument("--cover", required=True)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--no-budget", action="store_true")
    p.add_argument("--replicate-series", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_construct)

    p = sub.add_parser("verify", help="run gadget/capacity contract checks")
    p.add_argument("--suite", choices=["gadgets", "capacity", "all"], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bounds", help="evaluate capacity bounds for one query")
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--bres", type=float, required=True)
    p.add_argument("--bout", type=float, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=1.2)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("gen-data", help="generate the synthetic curve dataset")
    p.add_argument("--D", type=int, default=8)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a network on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--w", type=int, default=8)
    p.add_argument("--L", type=int, default=6)
    p.add_argument("--K", type=int, default=6)
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--loss", choices=["squared", "logistic"], default="squared")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("bench", help="run the estimator benchmark sweep")
    p.add_argument("--sweep", choices=["D", "n", "dof"], required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--D", type=int, default=8)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--w", type=int, default=8)
    p.add_argument("--L", type=int, default=6)
    p.add_argument("--K", type=int, default=6)
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
