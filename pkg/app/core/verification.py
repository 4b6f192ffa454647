"""
Finite-width checks of the closed-form kernels

This module is responsible for:
1. The depth-1 identity: the empirical NTK of a linear network is XX^T / n0
2. Autograd parameter gradients against central finite differences
3. Convergence of the seed-averaged empirical NTK to Theta_infty with width
4. Trained networks against the kernel predictors f_tau and f_infty
5. Stability of the empirical NTK during training (lazy regime)

Each check returns a CheckResult; nothing here raises on a failed tolerance.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.core.geometry import (
    SphereDataset, cross_gram, gram, project, synthetic_dataset, uniform_sphere,
)
from app.core.kernels import theta_infty
from app.core.network import (
    MLPNetwork, averaged_empirical_ntk, empirical_ntk, flat_parameters, forward, mlp,
    parameter_gradients, relative_frobenius, train_gd, with_parameters,
)
from app.core.regression import (
    fit, predict_infinity_batch, predict_tau_batch, train_predictions,
)
from app.utils.random_utils import make_rng

logger = logging.getLogger(__name__)

LINEAR_TOLERANCE = 1e-10
GRADIENT_TOLERANCE = 1e-5
GRADIENT_STEP = 1e-6
GRADIENT_PROBES = 20
WIDTH_TOLERANCE = 0.10
TRAIN_TOLERANCE = 0.05
TEST_TOLERANCE = 0.10
LAZY_TOLERANCE = 0.05


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one verification check"""

    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(values))))


def check_linear_ntk(ds: SphereDataset, seed: int) -> CheckResult:
    """A depth-1 network f(x) = w x / sqrt(n0) has NTK exactly XX^T / n0"""
    net = mlp(ds.dim, 1, 1, seed)
    entries = empirical_ntk(net, ds).entries
    error = float(np.max(np.abs(entries - gram(ds) / ds.dim)))
    return CheckResult("linear_ntk", error <= LINEAR_TOLERANCE, error, LINEAR_TOLERANCE,
                       "depth 1, max abs deviation from XX^T/n0")


def check_gradients(n0: int, seed: int, probes: int = GRADIENT_PROBES) -> CheckResult:
    """
    Directional derivatives of a small network against central differences

    Args:
        n0: Input dimension
        seed: Seed of the network, the input and the directions
        probes: Number of random directions

    Returns:
        CheckResult with the worst error relative to ||grad f||
    """
    net = mlp(n0, 8, 3, seed)
    x = uniform_sphere(1, n0, seed + 1)[0]
    grad = parameter_gradients(net, x)
    theta = flat_parameters(net)
    rng = make_rng(seed + 2)

    worst = 0.0
    for _ in range(probes):
        direction = rng.standard_normal(theta.shape[0])
        direction /= np.linalg.norm(direction)
        plus = forward(with_parameters(net, theta + GRADIENT_STEP * direction), x)
        minus = forward(with_parameters(net, theta - GRADIENT_STEP * direction), x)
        numeric = (plus - minus) / (2.0 * GRADIENT_STEP)
        worst = max(worst, abs(numeric - grad @ direction) / np.linalg.norm(grad))
    return CheckResult("gradients", worst <= GRADIENT_TOLERANCE, float(worst), GRADIENT_TOLERANCE,
                       f"{probes} central differences, step {GRADIENT_STEP:g}")


def check_width_convergence(ds: SphereDataset, widths: Tuple[int, ...], depth: int,
                            seeds: int, seed: int) -> CheckResult:
    """
    Seed-averaged empirical NTK against Theta_infty for growing widths

    Passes when the relative Frobenius error does not increase with width
    and is at most 10% at the largest width.
    """
    reference = theta_infty(gram(ds), depth, ds.dim).entries
    errors = []
    for width in sorted(widths):
        layers = (ds.dim,) + (width,) * (depth - 1) + (1,)
        estimate = averaged_empirical_ntk(layers, ds, seeds=seeds, seed=seed).entries
        errors.append(relative_frobenius(estimate, reference))
        logger.info("Width %d: relative NTK error %.4f", width, errors[-1])

    monotone = all(b <= a for a, b in zip(errors, errors[1:]))
    detail = ", ".join(f"{w}:{e:.4f}" for w, e in zip(sorted(widths), errors))
    if not monotone:
        detail += " (not monotone)"
    return CheckResult("width_convergence", monotone and errors[-1] <= WIDTH_TOLERANCE,
                       errors[-1], WIDTH_TOLERANCE, detail)


def check_lazy_regime(initial: MLPNetwork, trained: MLPNetwork, ds: SphereDataset) -> CheckResult:
    """
    Relative Frobenius change of the empirical NTK over training

    Args:
        initial: Network at initialization
        trained: The same network after gradient descent
        ds: Training data

    Returns:
        CheckResult passing below 5%
    """
    before = empirical_ntk(initial, ds).entries
    after = empirical_ntk(trained, ds).entries
    change = relative_frobenius(after, before)
    return CheckResult("ntk_stability", change <= LAZY_TOLERANCE, change, LAZY_TOLERANCE,
                       f"width {initial.min_width}, NTK change from initialization to convergence")


def check_training(ds: SphereDataset, test_points: np.ndarray, width: int, depth: int,
                   lr: float, steps: int, converge_steps: int, seed: int) -> List[CheckResult]:
    """
    Compares gradient descent on a wide network with the kernel predictors

    The network is trained for steps * lr units of time and compared with
    f_tau, then trained to convergence (lr = 1 / lambda_max of Theta_infty)
    and compared with f_infty. Deviations are measured as RMSE relative to
    the RMS of the labels. The last result is the lazy-regime check on the
    converged network.
    """
    net = mlp(ds.dim, width, depth, seed)
    y0 = forward(net, ds.points)
    f0_test = forward(net, test_points)
    kernel = theta_infty(gram(ds), depth, ds.dim)
    sol = fit(kernel, ds.labels, y0)
    kx = theta_infty(cross_gram(ds, test_points), depth, ds.dim).entries
    scale = _rms(ds.labels)
    results = []

    t = steps * lr
    trained = train_gd(net, ds, steps, lr)
    train_error = _rms(forward(trained, ds.points) - train_predictions(sol, t)) / scale
    test_error = _rms(forward(trained, test_points) - predict_tau_batch(sol, kx, t, f0_test)) / scale
    results.append(CheckResult("f_tau_train", train_error <= TRAIN_TOLERANCE, train_error,
                               TRAIN_TOLERANCE, f"width {width}, t = {t:g}"))
    results.append(CheckResult("f_tau_test", test_error <= TEST_TOLERANCE, test_error,
                               TEST_TOLERANCE, f"width {width}, t = {t:g}"))

    lr_converge = 1.0 / sol.eigenvalues[0]
    converged = train_gd(net, ds, converge_steps, lr_converge)
    train_error = _rms(forward(converged, ds.points) - ds.labels) / scale
    test_error = _rms(forward(converged, test_points) - predict_infinity_batch(sol, kx, f0_test)) / scale
    detail = f"width {width}, {converge_steps} steps at lr {lr_converge:.4g}"
    results.append(CheckResult("f_infty_train", train_error <= TRAIN_TOLERANCE, train_error,
                               TRAIN_TOLERANCE, detail))
    results.append(CheckResult("f_infty_test", test_error <= TEST_TOLERANCE, test_error,
                               TEST_TOLERANCE, detail))
    results.append(check_lazy_regime(net, converged, ds))
    return results


def run_verification(config) -> List[CheckResult]:
    """
    Runs every check on the synthetic dataset described by the config

    Args:
        config: ExperimentConfig (n, n0, seed, projection, widths, depth, seeds,
            lr, tau or steps, converge_steps, probes, low, high)

    Returns:
        Check results in a fixed order
    """
    raw = synthetic_dataset(config.n, config.n0, config.seed, config.low, config.high)
    ds = project(raw, config.projection)
    test_points = uniform_sphere(config.probes, ds.dim, config.seed + 1)
    if config.steps is None and not np.isclose(config.training_time, config.tau, rtol=1e-12, atol=0.0):
        logger.warning("tau = %g is not a multiple of lr = %g, training to t = %g instead",
                       config.tau, config.lr, config.training_time)

    results = [
        check_linear_ntk(ds, config.seed),
        check_gradients(ds.dim, config.seed),
        check_width_convergence(ds, tuple(config.widths), config.depth, config.seeds, config.seed),
    ]
    results.extend(check_training(
        ds, test_points, max(config.widths), config.depth, config.lr,
        config.training_steps, config.converge_steps, config.seed,
    ))
    for result in results:
        logger.info("%s: %s (%.3e, tolerance %.1e)", result.name,
                    "ok" if result.passed else "FAILED", result.value, result.tolerance)
    return results
