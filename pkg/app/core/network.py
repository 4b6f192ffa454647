"""
Finite-width ReLU networks used as ground truth for the closed forms

This module is responsible for:
1. Bias-free fully-connected ReLU networks in NTK parameterization
2. Their empirical neural tangent kernel (parameter-gradient inner products)
3. Full-batch gradient descent on the half squared error

Networks are immutable; training returns a new network. "Depth L" means L
weight matrices, i.e. L - 1 hidden ReLU layers, so the empirical NTK of a
depth-L network is compared with Theta_infty^(L).
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from app.core.errors import DimensionMismatch, DomainError, NonFiniteLoss
from app.core.geometry import SphereDataset
from app.utils.random_utils import make_rng

logger = logging.getLogger(__name__)

# Above this many parameters the empirical NTK is assembled per layer
STRUCTURED_THRESHOLD = 200_000


@dataclass(frozen=True, eq=False)
class MLPNetwork:
    """
    Bias-free ReLU network f(x) = W_L phi(... phi(W_1 x / sqrt(n0)) ...) / sqrt(n_{L-1})

    Attributes:
        widths: (n0, n1, ..., n_{L-1}, 1)
        weights: One (n_l, n_{l-1}) float64 tensor per layer
        seed: Seed the weights were drawn from
        loss_history: Training losses recorded by train_gd
    """

    widths: Tuple[int, ...]
    weights: Tuple[torch.Tensor, ...]
    seed: int
    loss_history: Tuple[float, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def min_width(self) -> int:
        """Smallest hidden width (the input dimension for depth 1)"""
        hidden = self.widths[1:-1]
        return min(hidden) if hidden else self.widths[0]

    @property
    def parameter_count(self) -> int:
        return sum(int(w.numel()) for w in self.weights)


@dataclass(frozen=True, eq=False)
class EmpiricalNTK:
    """Empirical NTK on a dataset, possibly averaged over initializations"""

    entries: np.ndarray
    width: int
    seed_count: int = 1


def init_network(widths: Sequence[int], seed: int) -> MLPNetwork:
    """
    Draws i.i.d. standard normal weights

    Args:
        widths: (n0, n1, ..., n_{L-1}, 1)
        seed: Seed of the Philox stream

    Returns:
        Fresh network
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise DomainError(f"invalid widths {widths}")
    if widths[-1] != 1:
        raise DomainError("only scalar outputs are supported (last width must be 1)")

    rng = make_rng(seed)
    weights = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(torch.from_numpy(rng.standard_normal((fan_out, fan_in))))
    return MLPNetwork(widths=widths, weights=tuple(weights), seed=seed)


def mlp(n0: int, width: int, depth: int, seed: int) -> MLPNetwork:
    """Network with equal hidden widths: depth weight matrices in total"""
    if depth < 1:
        raise DomainError(f"depth must be positive, got {depth}")
    return init_network((n0,) + (width,) * (depth - 1) + (1,), seed)


def _inputs(net: MLPNetwork, x: Union[np.ndarray, SphereDataset]) -> torch.Tensor:
    points = x.points if isinstance(x, SphereDataset) else np.asarray(x, dtype=np.float64)
    points = np.atleast_2d(points)
    if points.shape[1] != net.input_dim:
        raise DimensionMismatch(net.input_dim, points.shape[1])
    return torch.as_tensor(points, dtype=torch.float64)


def _forward(weights: Sequence[torch.Tensor], inputs: torch.Tensor,
             record: Optional[List] = None) -> torch.Tensor:
    """
    Forward pass on a batch

    Args:
        weights: Layer weights
        inputs: Tensor of shape (m, n0)
        record: If given, receives (layer input, pre-activation) per layer

    Returns:
        Outputs of shape (m,)
    """
    activation = inputs
    last = len(weights) - 1
    for index, weight in enumerate(weights):
        pre = activation @ weight.T / math.sqrt(weight.shape[1])
        if record is not None:
            record.append((activation, pre))
        # relu has zero derivative at 0
        activation = torch.relu(pre) if index < last else pre
    return activation[:, 0]


def forward(net: MLPNetwork, x: np.ndarray) -> Union[float, np.ndarray]:
    """
    Evaluates the network

    Args:
        net: Network
        x: One input of length n0, or a batch of shape (m, n0)

    Returns:
        float for a single input, array of m outputs for a batch
    """
    single = np.ndim(x) == 1
    with torch.no_grad():
        outputs = _forward(net.weights, _inputs(net, x)).numpy().copy()
    return float(outputs[0]) if single else outputs


def parameter_gradients(net: MLPNetwork, x: np.ndarray) -> np.ndarray:
    """
    Full gradient of f(x) with respect to all weights

    Args:
        net: Network
        x: One input of length n0

    Returns:
        Flattened gradient, layers in order, each layer row-major
    """
    params = [w.detach().clone().requires_grad_(True) for w in net.weights]
    output = _forward(params, _inputs(net, x))[0]
    grads = torch.autograd.grad(output, params)
    return torch.cat([g.reshape(-1) for g in grads]).numpy().copy()


def flat_parameters(net: MLPNetwork) -> np.ndarray:
    """All weights as one vector, in the order of parameter_gradients"""
    return torch.cat([w.detach().reshape(-1) for w in net.weights]).numpy().copy()


def with_parameters(net: MLPNetwork, flat: np.ndarray) -> MLPNetwork:
    """Network of the same shape with weights taken from a flat vector"""
    flat = np.asarray(flat, dtype=np.float64).reshape(-1)
    if flat.shape[0] != net.parameter_count:
        raise DimensionMismatch(net.parameter_count, flat.shape[0])
    weights = []
    offset = 0
    for weight in net.weights:
        size = int(weight.numel())
        weights.append(torch.from_numpy(flat[offset:offset + size].reshape(tuple(weight.shape)).copy()))
        offset += size
    return MLPNetwork(widths=net.widths, weights=tuple(weights), seed=net.seed)


def _mirror_upper(matrix: np.ndarray) -> np.ndarray:
    return np.triu(matrix) + np.triu(matrix, k=1).T


def _ntk_jacobian(net: MLPNetwork, points: np.ndarray) -> np.ndarray:
    jacobian = np.stack([parameter_gradients(net, x) for x in points])
    return _mirror_upper(jacobian @ jacobian.T)


def _ntk_structured(net: MLPNetwork, points: np.ndarray) -> np.ndarray:
    """
    Empirical NTK from per-layer factors

    One backward pass per sample yields, for every layer, the gradient with
    respect to its pre-activation (delta) next to the layer input (a). The
    weight gradient of the layer is delta a^T / sqrt(fan_in), so its
    contribution to <grad f(x_i), grad f(x_j)> is
    (delta_i . delta_j)(a_i . a_j) / fan_in.
    """
    deltas: List[List[torch.Tensor]] = [[] for _ in net.weights]
    inputs: List[List[torch.Tensor]] = [[] for _ in net.weights]
    for x in points:
        record: List = []
        output = _forward(net.weights, _inputs(net, x), record)[0]
        grads = torch.autograd.grad(output, [pre for _, pre in record])
        for layer, ((activation, _), grad) in enumerate(zip(record, grads)):
            deltas[layer].append(grad[0].detach())
            inputs[layer].append(activation[0].detach())

    kernel = torch.zeros((len(points), len(points)), dtype=torch.float64)
    for layer, weight in enumerate(net.weights):
        delta = torch.stack(deltas[layer])
        activation = torch.stack(inputs[layer])
        kernel += (delta @ delta.T) * (activation @ activation.T) / weight.shape[1]
    return _mirror_upper(kernel.numpy().copy())


def empirical_ntk(net: MLPNetwork, X: Union[SphereDataset, np.ndarray],
                  method: str = "auto") -> EmpiricalNTK:
    """
    Empirical NTK Theta(x_i, x_j) = <grad_theta f(x_i), grad_theta f(x_j)>

    Args:
        net: Network at its current parameters
        X: Dataset or array of shape (n, n0)
        method: "jacobian" (full flattened gradients), "structured" (per-layer
            factors) or "auto" (structured for large networks)

    Returns:
        EmpiricalNTK, exactly symmetric
    """
    points = _inputs(net, X).numpy()
    if method == "auto":
        method = "structured" if net.parameter_count > STRUCTURED_THRESHOLD else "jacobian"
    if method == "jacobian":
        entries = _ntk_jacobian(net, points)
    elif method == "structured":
        # Weights must track gradients for the pre-activations to do so
        tracked = replace(net, weights=tuple(w.detach().clone().requires_grad_(True) for w in net.weights))
        entries = _ntk_structured(tracked, points)
    else:
        raise DomainError(f"unknown NTK method {method!r}")
    return EmpiricalNTK(entries=entries, width=net.min_width, seed_count=1)


def averaged_empirical_ntk(widths: Sequence[int], X: Union[SphereDataset, np.ndarray],
                           seeds: int = 32, seed: int = 0) -> EmpiricalNTK:
    """
    Empirical NTK averaged over independent initializations

    Args:
        widths: Network widths (n0, ..., 1)
        X: Dataset
        seeds: Number of initializations
        seed: Base seed; initialization k uses seed + k

    Returns:
        EmpiricalNTK whose entries are the mean over initializations
    """
    if seeds < 1:
        raise DomainError("need at least one seed")
    total = None
    # Sequential accumulation keeps the reduction order fixed
    for k in range(seeds):
        net = init_network(widths, seed + k)
        entries = empirical_ntk(net, X).entries
        total = entries if total is None else total + entries
        logger.debug("NTK seed %d/%d done", k + 1, seeds)
    hidden = tuple(widths[1:-1])
    width = min(hidden) if hidden else int(widths[0])
    return EmpiricalNTK(entries=total / seeds, width=width, seed_count=seeds)


def half_squared_error(outputs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    residual = outputs - targets
    return 0.5 * torch.dot(residual, residual)


def train_gd(net: MLPNetwork, X: SphereDataset, steps: int, lr: float,
             check_stability: bool = True) -> MLPNetwork:
    """
    Full-batch gradient descent on sum_i (f(x_i) - y*_i)^2 / 2

    With NTK parameterization, steps * lr corresponds to gradient flow time.

    Args:
        net: Network to train (left unchanged)
        X: Training data with labels
        steps: Number of gradient steps
        lr: Learning rate
        check_stability: Warn if lr * lambda_max(empirical NTK) >= 2

    Returns:
        Trained network; loss_history holds the loss before every step and
        after the last one

    Raises:
        NonFiniteLoss: If the loss diverges
    """
    if steps < 0:
        raise DomainError(f"steps must be non-negative, got {steps}")
    if not lr > 0.0:
        raise DomainError(f"learning rate must be positive, got {lr!r}")
    if steps == 0:
        return net

    if check_stability:
        lambda_max = float(np.linalg.eigvalsh(empirical_ntk(net, X).entries)[-1])
        if lr * lambda_max >= 2.0:
            logger.warning("lr * lambda_max = %.3f >= 2, gradient descent may diverge",
                           lr * lambda_max)

    inputs = _inputs(net, X)
    targets = torch.as_tensor(X.labels, dtype=torch.float64)
    params = [w.detach().clone().requires_grad_(True) for w in net.weights]

    history = []
    for step in range(steps + 1):
        loss = half_squared_error(_forward(params, inputs), targets)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(step, value)
        history.append(value)
        if step == steps:
            break
        grads = torch.autograd.grad(loss, params)
        with torch.no_grad():
            for param, grad in zip(params, grads):
                param -= lr * grad
        if step % 100 == 0:
            logger.debug("step %d loss %.6e", step, value)

    logger.info("Trained %d steps at lr=%g, loss %.3e -> %.3e", steps, lr, history[0], history[-1])
    return MLPNetwork(
        widths=net.widths,
        weights=tuple(p.detach() for p in params),
        seed=net.seed,
        loss_history=net.loss_history + tuple(history),
    )


def relative_frobenius(estimate: np.ndarray, reference: np.ndarray) -> float:
    """||estimate - reference||_F / ||reference||_F"""
    return float(np.linalg.norm(estimate - reference) / np.linalg.norm(reference))
