"""
Kernel regression predictors for DeepNTK

This module computes the output of an infinitely wide network trained by
gradient flow on the squared loss:
1. f_infty, the limit of infinite training time (ridge-less kernel regression)
2. f_tau, the output after training time tau (spectral early stopping)

Both share one symmetric eigendecomposition of the kernel matrix.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg

from app.core.errors import DimensionMismatch, DomainError, SingularKernel
from app.core.kernels import KernelMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RegressionSolution:
    """
    Spectral solution of kernel regression

    Attributes:
        alpha: kappa^-1 (y* - y0)
        eigenvalues: Eigenvalues of kappa, sorted descending
        eigenvectors: Orthogonal matrix V with matching columns
        residual0: y0 - y*
        f0_train: Initial outputs y0 on the training set
        condition_number: lambda_max / lambda_min
    """

    alpha: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual0: np.ndarray
    f0_train: np.ndarray
    condition_number: float

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def y_star(self) -> np.ndarray:
        return self.f0_train - self.residual0

    @property
    def kernel(self) -> np.ndarray:
        """Reconstructs kappa from its spectrum"""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def spectral_filter(self, tau: float) -> np.ndarray:
        """
        The matrix V diag(g_tau(lambda) / lambda) V^T

        g_tau(lambda) = exp(-lambda tau) - 1, evaluated with expm1 so small
        lambda * tau keeps full precision.
        """
        weights = np.expm1(-self.eigenvalues * tau) / self.eigenvalues
        return (self.eigenvectors * weights) @ self.eigenvectors.T


def _as_vector(values, n: int, name: str) -> np.ndarray:
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if vector.shape[0] != n:
        raise DimensionMismatch(n, vector.shape[0])
    if not np.all(np.isfinite(vector)):
        raise DomainError(f"{name} contains non-finite values")
    return vector


def fit(kernel: Union[KernelMatrix, np.ndarray], y_star: np.ndarray,
        y0: Optional[np.ndarray] = None) -> RegressionSolution:
    """
    Solves kappa alpha = y* - y0 through an eigendecomposition

    Args:
        kernel: Symmetric kernel matrix kappa on the training set
        y_star: Targets
        y0: Outputs of the network at initialization (zeros by default)

    Returns:
        RegressionSolution

    Raises:
        SingularKernel: If an eigenvalue is <= n * eps * lambda_max
    """
    entries = kernel.entries if isinstance(kernel, KernelMatrix) else np.asarray(kernel, dtype=np.float64)
    n = entries.shape[0]
    if entries.shape != (n, n):
        raise DimensionMismatch(n, entries.shape[1])
    y_star = _as_vector(y_star, n, "y_star")
    y0 = np.zeros(n) if y0 is None else _as_vector(y0, n, "y0")

    eigenvalues, eigenvectors = scipy.linalg.eigh(entries)
    # eigh returns ascending order
    eigenvalues = eigenvalues[::-1].copy()
    eigenvectors = eigenvectors[:, ::-1].copy()

    lambda_max = eigenvalues[0]
    threshold = n * np.finfo(np.float64).eps * max(lambda_max, 0.0)
    if eigenvalues[-1] <= threshold:
        raise SingularKernel(float(eigenvalues[-1]))

    residual0 = y0 - y_star
    alpha = eigenvectors @ ((eigenvectors.T @ (y_star - y0)) / eigenvalues)
    condition = float(lambda_max / eigenvalues[-1])
    logger.info("Kernel fit on n=%d, condition number %.3e", n, condition)

    for array in (alpha, eigenvalues, eigenvectors, residual0, y0):
        array.setflags(write=False)
    return RegressionSolution(
        alpha=alpha,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        residual0=residual0,
        f0_train=y0,
        condition_number=condition,
    )


def predict_infinity(sol: RegressionSolution, kx: np.ndarray, f0_x: float = 0.0) -> float:
    """
    Output after infinite training time: f0(x) + kappa_x^T alpha

    Args:
        sol: Fitted solution
        kx: Kernel values between x and the training set
        f0_x: Network output at x at initialization

    Returns:
        f_infty(x)
    """
    kx = _as_vector(kx, sol.n, "kx")
    return float(f0_x + kx @ sol.alpha)


def predict_tau(sol: RegressionSolution, kx: np.ndarray, f0_x: float = 0.0,
                tau: float = 0.0) -> float:
    """
    Output after training time tau

    f_tau(x) = f0(x) + kappa_x^T V diag(g_tau(lambda) / lambda) V^T (y0 - y*)

    Args:
        sol: Fitted solution
        kx: Kernel values between x and the training set
        f0_x: Network output at x at initialization
        tau: Gradient flow time (unit learning rate)

    Returns:
        f_tau(x); exactly f0_x at tau = 0
    """
    if not tau >= 0.0:
        raise DomainError(f"tau must be non-negative, got {tau!r}")
    kx = _as_vector(kx, sol.n, "kx")
    if tau == 0.0:
        return float(f0_x)
    return float(f0_x + kx @ (sol.spectral_filter(tau) @ sol.residual0))


def predict_infinity_batch(sol: RegressionSolution, kx: np.ndarray,
                           f0_x: Optional[np.ndarray] = None) -> np.ndarray:
    """
    f_infty for many test points

    Args:
        sol: Fitted solution
        kx: Array of shape (m, n) of kernel values
        f0_x: Initial outputs at the m points (zeros by default)

    Returns:
        Array of m predictions
    """
    kx = np.atleast_2d(np.asarray(kx, dtype=np.float64))
    if kx.shape[1] != sol.n:
        raise DimensionMismatch(sol.n, kx.shape[1])
    f0_x = np.zeros(kx.shape[0]) if f0_x is None else np.asarray(f0_x, dtype=np.float64)
    return f0_x + kx @ sol.alpha


def predict_tau_batch(sol: RegressionSolution, kx: np.ndarray, tau: float,
                      f0_x: Optional[np.ndarray] = None) -> np.ndarray:
    """
    f_tau for many test points

    Args:
        sol: Fitted solution
        kx: Array of shape (m, n) of kernel values
        tau: Gradient flow time
        f0_x: Initial outputs at the m points (zeros by default)

    Returns:
        Array of m predictions
    """
    if not tau >= 0.0:
        raise DomainError(f"tau must be non-negative, got {tau!r}")
    kx = np.atleast_2d(np.asarray(kx, dtype=np.float64))
    if kx.shape[1] != sol.n:
        raise DimensionMismatch(sol.n, kx.shape[1])
    f0_x = np.zeros(kx.shape[0]) if f0_x is None else np.asarray(f0_x, dtype=np.float64)
    if tau == 0.0:
        return f0_x.copy()
    return f0_x + kx @ (sol.spectral_filter(tau) @ sol.residual0)


def train_predictions(sol: RegressionSolution, tau: Optional[float] = None) -> np.ndarray:
    """
    Outputs on the training set at time tau (infinite time if tau is None)

    On the training set kappa_x is a row of kappa, so the outputs reduce to
    y0 + V diag(exp(-lambda tau) - 1) V^T (y0 - y*).
    """
    if tau is None:
        return sol.y_star.copy()
    decay = np.expm1(-sol.eigenvalues * tau)
    return sol.f0_train + sol.eigenvectors @ (decay * (sol.eigenvectors.T @ sol.residual0))


def train_loss(sol: RegressionSolution, tau: Optional[float] = None) -> float:
    """Half squared training residual at time tau"""
    residual = train_predictions(sol, tau) - sol.y_star
    return float(0.5 * residual @ residual)
