"""Command-line interface: factorization jobs, evaluation sweeps,
baselines, budget allocation, and kernel benchmarks.

Every command is deterministic given ``--seed``.  JSON reports always
carry the resolved configuration, input shapes, wall time, and tool
version; tabular outputs are CSV with fixed headers.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .baselines import onebit_quantize, relative_error, rtn_quantize
from .bitcore import load_tensor, reconstruct, save_dbf, save_tensor
from .budget import middle_dim, reallocate_pipeline, storage_bits
from .factorize import FactorizeConfig, ImportanceProfile, factorize, factorize_weighted
from .kernel import BENCH_CSV_HEADER, bench_forward

SWEEP_CSV_HEADER = "method,bits,rel_error"
IMPORTANCE_CSV_HEADER = "kind,importance,sq_error"


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--outer-iters", type=int, default=40)
    p.add_argument("--inner-iters", type=int, default=3)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--power-iters", type=int, default=30)
    p.add_argument("--power-tol", type=float, default=1e-6)


def _config_from(args) -> FactorizeConfig:
    return FactorizeConfig(
        outer_iters=args.outer_iters,
        inner_iters=args.inner_iters,
        rho=args.rho,
        power_iters=args.power_iters,
        power_tol=args.power_tol,
        seed=args.seed,
    )


def _load_matrix(path: str) -> np.ndarray:
    arr = load_tensor(path)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a 2-D tensor, got ndim={arr.ndim}")
    return arr


def _report(args, command: str, wall: float, **extra) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {
        "tool": "dbf",
        "version": __version__,
        "command": command,
        "config": cfg,
        "wall_time_s": wall,
        **extra,
    }


def _write_json(path: str | None, payload: dict):
    text = json.dumps(payload, indent=2, default=str)
    if path is None or path == "-":
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _write_csv(path: str, header: str, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def cmd_factorize(args) -> int:
    if (args.bits is None) == (args.k is None):
        raise ValueError("exactly one of --bits or --k is required")
    W = _load_matrix(args.input)
    n, m = W.shape
    k = args.k if args.k is not None else middle_dim(n, m, args.bits, args.granularity)
    config = _config_from(args)
    t0 = time.perf_counter()
    if args.importance:
        imp = ImportanceProfile(
            out_imp=load_tensor(args.importance[0]),
            in_imp=load_tensor(args.importance[1]),
        )
        layer, rep = factorize_weighted(W, k, imp, config)
    else:
        layer, rep = factorize(W, k, config)
    wall = time.perf_counter() - t0
    save_dbf(layer, args.out)
    storage = storage_bits(n, k, m, args.scale_width)
    _write_json(
        args.report,
        _report(
            args,
            "factorize",
            wall,
            input_shape=[n, m],
            k=k,
            final_error=rep.final_error,
            best_iter=rep.best_iter,
            bpw=storage.bits_per_weight,
        ),
    )
    return 0


def _parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _sweep_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_eval_sweep(args) -> int:
    t0 = time.perf_counter()
    if args.input:
        W = _load_matrix(args.input)
    else:
        W = np.random.default_rng(args.seed).standard_normal((args.shape[0], args.shape[1]))
    n, m = W.shape
    bits_list = _parse_floats(args.bits)
    if not bits_list:
        raise ValueError("--bits list is empty")
    baselines = [b for b in args.baselines.split(",") if b]
    for b in baselines:
        if b not in ("rtn", "onebit"):
            raise ValueError(f"unknown baseline {b!r}")

    rows = []
    for idx, bits in enumerate(bits_list):
        config = FactorizeConfig(
            outer_iters=args.outer_iters,
            inner_iters=args.inner_iters,
            rho=args.rho,
            power_iters=args.power_iters,
            power_tol=args.power_tol,
            seed=_sweep_seed(args.seed, idx),
        )
        k = middle_dim(n, m, bits, args.granularity)
        _, rep = factorize(W, k, config)
        rows.append(f"dbf,{bits:g},{rep.final_error:.8g}")
    if "rtn" in baselines:
        for bits in sorted({int(b) for b in bits_list if float(b).is_integer() and 1 <= b <= 8}):
            err = relative_error(W, rtn_quantize(W, bits))
            rows.append(f"rtn,{bits:g},{err:.8g}")
    if "onebit" in baselines:
        err = relative_error(W, onebit_quantize(W, args.power_iters, args.power_tol))
        rows.append(f"onebit,1,{err:.8g}")
    _write_csv(args.out, SWEEP_CSV_HEADER, rows)
    if args.report:
        _write_json(
            args.report,
            _report(args, "eval-sweep", time.perf_counter() - t0, input_shape=[n, m]),
        )
    return 0


def cmd_importance_plot_data(args) -> int:
    t0 = time.perf_counter()
    W = _load_matrix(args.input)
    n, m = W.shape
    out_imp = load_tensor(args.importance[0])
    in_imp = load_tensor(args.importance[1])
    imp = ImportanceProfile(out_imp=out_imp, in_imp=in_imp)
    k = args.k if args.k is not None else middle_dim(n, m, args.bits, args.granularity)
    layer, _ = factorize_weighted(W, k, imp, _config_from(args))
    sq_err = (W - reconstruct(layer)) ** 2
    weight_imp = np.outer(imp.out_imp, imp.in_imp)

    flat_imp = weight_imp.ravel()
    flat_err = sq_err.ravel()
    rows = [f"point,{i:.8g},{e:.8g}" for i, e in zip(flat_imp, flat_err)]

    # smoothed series: equal-count bins over elements sorted by importance
    order = np.argsort(flat_imp, kind="stable")
    bins = np.array_split(order, args.bins)
    for idx_bin in bins:
        rows.append(
            f"bin,{flat_imp[idx_bin].mean():.8g},{flat_err[idx_bin].mean():.8g}"
        )
    _write_csv(args.out, IMPORTANCE_CSV_HEADER, rows)
    if args.report:
        _write_json(
            args.report,
            _report(
                args,
                "importance-plot-data",
                time.perf_counter() - t0,
                input_shape=[n, m],
                points=int(n * m),
                bins=len(bins),
            ),
        )
    return 0


def cmd_rtn(args) -> int:
    t0 = time.perf_counter()
    W = _load_matrix(args.input)
    Q = rtn_quantize(W, args.bits)
    save_tensor(Q, args.out)
    _write_json(
        args.report,
        _report(
            args,
            "rtn",
            time.perf_counter() - t0,
            input_shape=list(W.shape),
            rel_error=relative_error(W, Q),
        ),
    )
    return 0


def _parse_named_inputs(items) -> dict[str, np.ndarray]:
    weights = {}
    for item in items:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = item.rsplit("/", 1)[-1].removesuffix(".tns"), item
        if name in weights:
            raise ValueError(f"duplicate layer name {name!r}")
        weights[name] = _load_matrix(path)
    return weights


def cmd_allocate(args) -> int:
    t0 = time.perf_counter()
    weights = _parse_named_inputs(args.input)
    groups = {}
    for item in args.group or []:
        name, key = item.split("=", 1)
        groups[name] = (key,)
    rng = np.random.default_rng(args.seed)
    calib = {
        name: [
            rng.standard_normal((args.batch_size, W.shape[1]))
            for _ in range(args.calib_batches)
        ]
        for name, W in weights.items()
    }
    result = reallocate_pipeline(
        weights,
        calib,
        start_bpw=args.start_bpw,
        target_bpw=args.target_bpw,
        floor_bpw=args.floor_bpw,
        config=_config_from(args),
        granularity=args.granularity,
        groups=groups,
    )
    with open(args.out, "w") as fh:
        fh.write(result.budget.to_json() + "\n")
    if args.save_dir:
        import os

        os.makedirs(args.save_dir, exist_ok=True)
        for name, layer in result.layers.items():
            save_dbf(layer, os.path.join(args.save_dir, f"{name}.dbf"))
    if args.report:
        _write_json(
            args.report,
            _report(
                args,
                "allocate",
                time.perf_counter() - t0,
                input_shape={n: list(w.shape) for n, w in weights.items()},
                total_bpw=result.budget.total_bits_per_weight,
                errors=result.errors,
            ),
        )
    return 0


def _parse_shapes(text: str) -> list[tuple[int, int]]:
    shapes = []
    for part in text.split(","):
        if not part:
            continue
        n, m = part.lower().split("x")
        shapes.append((int(n), int(m)))
    return shapes


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    shapes = _parse_shapes(args.shapes)
    bits = _parse_floats(args.bits)
    rows = bench_forward(shapes, bits, repeats=args.repeats, seed=args.seed)
    _write_csv(args.out, BENCH_CSV_HEADER, [r.csv() for r in rows])
    if args.report:
        _write_json(
            args.report,
            _report(
                args,
                "bench",
                time.perf_counter() - t0,
                input_shape=[list(s) for s in shapes],
            ),
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dbf",
        description="Compress dense matrices into double binary factorizations.",
    )
    parser.add_argument("--version", action="version", version=f"dbf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", help="factorize one TNS1 matrix into a DBF1 file")
    p.add_argument("--input", required=True, help="TNS1 tensor with the matrix")
    p.add_argument("--bits", type=float, help="target sign bits per weight")
    p.add_argument("--k", type=int, help="explicit middle dimension")
    p.add_argument("--granularity", type=int, default=32)
    p.add_argument("--importance", nargs=2, metavar=("OUT_TNS", "IN_TNS"),
                   help="row / column importance tensors")
    p.add_argument("--out", required=True, help="DBF1 output path")
    p.add_argument("--report", default="-", help="JSON report path ('-' for stdout)")
    p.add_argument("--scale-width", type=int, default=16,
                   help="scale-vector width in bits for storage accounting")
    _add_config_flags(p)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("eval-sweep", help="error vs bits for the factorization and baselines")
    p.add_argument("--input", help="TNS1 matrix; omit to use a Gaussian --shape")
    p.add_argument("--shape", type=int, nargs=2, default=[256, 256], metavar=("N", "M"))
    p.add_argument("--bits", default="1,1.5,2,3,4", help="comma-separated budgets")
    p.add_argument("--baselines", default="rtn,onebit")
    p.add_argument("--granularity", type=int, default=32)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--report", help="optional JSON report path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval_sweep)

    p = sub.add_parser("importance-plot-data",
                       help="per-element importance vs squared error, plus binned series")
    p.add_argument("--input", required=True)
    p.add_argument("--importance", nargs=2, required=True, metavar=("OUT_TNS", "IN_TNS"))
    p.add_argument("--bits", type=float, default=2.0)
    p.add_argument("--k", type=int)
    p.add_argument("--granularity", type=int, default=32)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--report", help="optional JSON report path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_importance_plot_data)

    p = sub.add_parser("rtn", help="per-row symmetric round-to-nearest baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--out", required=True, help="TNS1 output path")
    p.add_argument("--report", default="-")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rtn)

    p = sub.add_parser("allocate", help="nonuniform budget allocation across layers")
    p.add_argument("--input", action="append", required=True,
                   metavar="NAME=PATH", help="named TNS1 matrix (repeatable)")
    p.add_argument("--group", action="append", metavar="NAME=GROUP",
                   help="override the shape-based score pool of a layer")
    p.add_argument("--start-bpw", type=float, default=2.1)
    p.add_argument("--target-bpw", type=float, default=2.0)
    p.add_argument("--floor-bpw", type=float, default=1.5)
    p.add_argument("--granularity", type=int, default=32)
    p.add_argument("--calib-batches", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True, help="budget JSON path")
    p.add_argument("--save-dir", help="directory for the re-factorized DBF1 files")
    p.add_argument("--report", help="optional JSON report path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("bench", help="forward-pass timing vs dense matvec")
    p.add_argument("--shapes", default="4096x4096,4096x14336,8192x8192,8192x28672")
    p.add_argument("--bits", default="1,1.5,2,2.3")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--report", help="optional JSON report path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # argparse handles its own usage errors
        print(f"dbf: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
