"""
Main entry point for DeepNTK

This module wires datasets, kernels, regression and the finite-width checks
into the subcommands kernel, sweep, predict, verify and criteria.

Exit codes: 0 success, 1 configuration/input/output error, 2 singular kernel,
3 failed verification.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.analysis import depth_sweep, rde_bound_check
from app.core.errors import ConfigError, DeepNTKError, SingularKernel
from app.core.geometry import (
    SphereDataset, cross_gram, gram, load_csv, project, project_points,
    synthetic_dataset, uniform_sphere,
)
from app.core.kernels import KernelKind, get_sequence, kernel_criteria_check, theta_infty
from app.core.regression import fit, predict_infinity_batch, predict_tau_batch, train_loss
from app.core.verification import run_verification
from app.utils.config import ExperimentConfig, load_config, write_manifest
from app.utils.report_utils import (
    criteria_report_render, plot_trace, render_checks_text, render_trace_text,
    write_checks_csv, write_matrix_csv, write_rows, write_trace_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SINGULAR = 2
EXIT_VERIFY = 3

# Flags that map onto ExperimentConfig fields
CONFIG_FLAGS = (
    "seed", "n0", "n", "L_max", "kernel", "projection", "widths", "depth", "lr",
    "steps", "converge_steps", "tau", "taus", "seeds", "probes", "low", "high", "output_dir",
)


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors become ConfigError (exit code 1)"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """
    Parses command line arguments

    Args:
        argv: Arguments without the program name (sys.argv[1:] by default)

    Returns:
        Parsed arguments
    """
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with an [experiment] group")
    common.add_argument("--output-dir", dest="output_dir", help="Directory for CSV/SVG outputs")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--n", type=int, help="Number of synthetic points")
    common.add_argument("--n0", type=int, help="Input dimension of synthetic data")
    common.add_argument("--L-max", dest="L_max", type=int, help="Largest depth")
    common.add_argument("--projection", choices=["canonical", "stereographic", "identity"])
    common.add_argument("--low", type=float, help="Lower bound of the synthetic data box")
    common.add_argument("--high", type=float, help="Upper bound of the synthetic data box")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = ArgumentParser(description="DeepNTK - depth behaviour of the ReLU neural tangent kernel")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    kernel = commands.add_parser("kernel", parents=[common], help="Write kernel matrices as CSV")
    source = kernel.add_mutually_exclusive_group()
    source.add_argument("--data", help="CSV dataset, last column is the label")
    source.add_argument("--synthetic", action="store_true", help="Use synthetic data")
    kernel.add_argument("--kind", default=KernelKind.THETA_BAR.value,
                        choices=[k.value for k in KernelKind if k is not KernelKind.CUSTOM])
    kernel.add_argument("--L", dest="depths", type=int, nargs="+",
                        help="Depths to write (1..L_max by default)")
    kernel.add_argument("--check-invertible", action="store_true",
                        help="Fail with exit code 2 on a singular matrix")

    sweep = commands.add_parser("sweep", parents=[common], help="Depth sweep with CSV and SVG output")
    sweep.add_argument("--kernel", choices=["theta_bar", "rho", "eta"], help="All three by default")
    sweep.add_argument("--probes", type=int, help="Probe points of the coefficient bound check")

    predict = commands.add_parser("predict", parents=[common], help="Kernel regression predictions")
    predict.add_argument("--train", required=True, help="Training CSV")
    predict.add_argument("--test", required=True, help="Test CSV")
    predict.add_argument("--tau", dest="taus", type=float, action="append",
                         help="Stopping time (repeatable)")
    predict.add_argument("--depth", type=int, help="Network depth of Theta_infty")

    verify = commands.add_parser("verify", parents=[common], help="Finite-width verification suite")
    verify.add_argument("--widths", type=int, nargs="+")
    verify.add_argument("--depth", type=int)
    verify.add_argument("--seeds", type=int, help="Initializations per width")
    verify.add_argument("--lr", type=float)
    verify.add_argument("--steps", type=int, help="Gradient steps (round(tau / lr) by default)")
    verify.add_argument("--tau", type=float, help="Training time of the f_tau comparison")
    verify.add_argument("--converge-steps", dest="converge_steps", type=int)
    verify.add_argument("--probes", type=int, help="Test points")

    criteria = commands.add_parser("criteria", parents=[common], help="Depth-limit criteria check")
    criteria.add_argument("--kernel", choices=["theta_bar", "rho", "eta"], help="All three by default")
    criteria.add_argument("--data", help="CSV dataset (synthetic data by default)")

    return parser.parse_args(argv)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {name: getattr(args, name, None) for name in CONFIG_FLAGS}
    return load_config(args.config, overrides)


def _load_dataset(path: str, config: ExperimentConfig) -> SphereDataset:
    return project(load_csv(path), config.projection)


def _synthetic(config: ExperimentConfig, count: int) -> SphereDataset:
    raw = synthetic_dataset(count, config.n0, config.seed, config.low, config.high)
    return project(raw, config.projection)


def _sweep_data(config: ExperimentConfig) -> Tuple[SphereDataset, np.ndarray]:
    """n dataset points and the probe x, drawn together so they are distinct"""
    ds = _synthetic(config, config.n + 1)
    return ds.subset(range(config.n)), ds.points[config.n]


def cmd_kernel(args: argparse.Namespace, config: ExperimentConfig) -> int:
    """Writes the kernel matrix at each requested depth"""
    if args.data:
        ds = _load_dataset(args.data, config)
    elif args.synthetic:
        ds = _synthetic(config, config.n)
    else:
        raise ConfigError("kernel needs --data PATH or --synthetic")
    depths = args.depths or list(range(1, config.L_max + 1))
    if any(L < 1 for L in depths):
        raise ConfigError("depths must be positive")

    seq = get_sequence(args.kind, n0=ds.dim)
    z = gram(ds)
    matrices = []
    for L in depths:
        matrix = seq.matrix(z, L)
        if args.check_invertible and not matrix.is_positive_definite():
            raise SingularKernel(matrix.smallest_eigenvalue(), depth=L)
        matrices.append((L, matrix))

    for L, matrix in matrices:
        path = write_matrix_csv(os.path.join(config.output_dir, f"kernel_{args.kind}_L{L}.csv"),
                                matrix.entries)
        print(f"Wrote {path}")
    write_manifest(config, "kernel", extra={"kind": args.kind, "depths": depths})
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: ExperimentConfig) -> int:
    """Depth sweeps of the configured kernel families, with the coefficient bound for theta_bar"""
    ds, x = _sweep_data(config)
    for name in config.families:
        trace = depth_sweep(get_sequence(name), ds, x, config.L_max)
        write_trace_csv(os.path.join(config.output_dir, f"{name}_trace.csv"), trace)
        plot_trace(trace, config.output_dir)
        print(render_trace_text(trace))

        if name == KernelKind.THETA_BAR.value:
            probes = uniform_sphere(config.probes, ds.dim, config.seed + 1)
            bound = rde_bound_check(ds, probes, config.L_max)
            write_rows(os.path.join(config.output_dir, "bound.csv"),
                       ["probe", "max_component", "norm"],
                       ([k, float(c), float(v)] for k, (c, v)
                        in enumerate(zip(bound.max_components, bound.norms))))
            write_rows(os.path.join(config.output_dir, "bound_scaling.csv"),
                       ["n", "max_norm_over_n"], bound.scaling)
            print(f"Coefficient bound at L={bound.depth}: C = {bound.empirical_c:.6g}")

    write_manifest(config, "sweep")
    print(f"Results in {config.output_dir}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, config: ExperimentConfig) -> int:
    """f_infty and f_tau of Theta_infty^(depth) regression on the test points"""
    ds = _load_dataset(args.train, config)
    test = load_csv(args.test)
    test_points = project_points(test.points, config.projection)
    if test_points.shape[1] != ds.dim:
        raise ConfigError(f"test data has dimension {test_points.shape[1]}, training data {ds.dim}")

    sol = fit(theta_infty(gram(ds), config.depth, ds.dim), ds.labels)
    print(f"Fitted Theta_infty^({config.depth}) on n={ds.n}, condition number {sol.condition_number:.3e}")
    kx = theta_infty(cross_gram(ds, test_points), config.depth, ds.dim).entries

    columns = [predict_infinity_batch(sol, kx)]
    header = ["index", "label", "f_infty"]
    for tau in config.taus:
        columns.append(predict_tau_batch(sol, kx, tau))
        header.append(f"f_tau_{tau:g}")
    rows = ([k, float(test.labels[k])] + [float(c[k]) for c in columns] for k in range(test.n))
    path = write_rows(os.path.join(config.output_dir, "predictions.csv"), header, rows)
    print(f"Wrote {path}")

    if config.taus:
        write_rows(os.path.join(config.output_dir, "train_loss.csv"), ["tau", "loss"],
                   ([float(tau), train_loss(sol, tau)] for tau in config.taus))
    write_manifest(config, "predict", extra={"train": args.train, "test": args.test})
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, config: ExperimentConfig) -> int:
    """Runs the finite-width checks; exit code 3 if any fails"""
    results = run_verification(config)
    write_checks_csv(os.path.join(config.output_dir, "verification.csv"), results)
    write_manifest(config, "verify")
    print(render_checks_text(results))

    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"Verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    print("All checks passed")
    return EXIT_OK


def cmd_criteria(args: argparse.Namespace, config: ExperimentConfig) -> int:
    """Criteria check and sweep of each kernel family on one dataset"""
    ds = _load_dataset(args.data, config) if args.data else _synthetic(config, config.n)
    x = uniform_sphere(1, ds.dim, config.seed + 1)[0]
    for name in config.families:
        seq = get_sequence(name)
        report = kernel_criteria_check(seq, ds, config.L_max)
        trace = depth_sweep(seq, ds, x, config.L_max)
        print(criteria_report_render(report, trace, config.output_dir))
    write_manifest(config, "criteria")
    return EXIT_OK


COMMANDS = {
    "kernel": cmd_kernel,
    "sweep": cmd_sweep,
    "predict": cmd_predict,
    "verify": cmd_verify,
    "criteria": cmd_criteria,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point

    Args:
        argv: Command line arguments (sys.argv[1:] by default)

    Returns:
        Process exit code
    """
    try:
        args = parse_arguments(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        config = build_config(args)
        return COMMANDS[args.command](args, config)
    except SingularKernel as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_SINGULAR
    except (DeepNTKError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
