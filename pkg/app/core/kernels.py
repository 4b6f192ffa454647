"""
Closed-form kernels of infinitely wide ReLU networks

This module provides:
1. The scalar maps h (arc-cosine recursion), h', the Sigma-dot closed form
   and the sigmoid-squared map s used by the eta kernels
2. Depth recursions for the correlation rho, the limiting NTK Theta_infty,
   its normalized version Theta_bar and the eta kernels
3. KernelSequence, a depth-indexed family of dot-product kernels evaluated
   through a single recursion on inner products
4. Spectral helpers and the criteria check for arbitrary kernel sequences

Depth 1 is always the raw inner-product kernel; depth L applies L-1 steps.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.optimize import brentq
from scipy.special import expit

from app.core.errors import DomainError
from app.core.geometry import SphereDataset, gram as gram_matrix

logger = logging.getLogger(__name__)

# Inputs further than this outside [-1, 1] are logic errors, not rounding
CLAMP_TOLERANCE = 1e-9

ArrayLike = Union[float, np.ndarray]
State = Tuple[np.ndarray, ...]


# Scalar maps
def clamp_unit(z: ArrayLike) -> ArrayLike:
    """
    Clamps inner products to [-1, 1]

    Args:
        z: Scalar or array

    Returns:
        Clamped value(s); python float for scalar input

    Raises:
        DomainError: If any value is further than 1e-9 outside [-1, 1]
    """
    if np.ndim(z) == 0:
        z = float(z)
        if not abs(z) <= 1.0 + CLAMP_TOLERANCE:
            raise DomainError(f"value {z!r} outside [-1, 1]")
        return min(1.0, max(-1.0, z))

    z = np.asarray(z, dtype=np.float64)
    inside = np.abs(z) <= 1.0 + CLAMP_TOLERANCE
    if not np.all(inside):
        worst = z.flat[int(np.argmin(inside))]
        raise DomainError(f"value {worst!r} outside [-1, 1]")
    return np.clip(z, -1.0, 1.0)


def h_arc(z: ArrayLike) -> ArrayLike:
    """
    Correlation map of one ReLU layer

    h(z) = z arcsin(z) / pi + sqrt(1 - z^2) / pi + z / 2

    Args:
        z: Correlation(s) in [-1, 1]

    Returns:
        h(z) in [0, 1]
    """
    z = clamp_unit(z)
    if isinstance(z, float):
        return z * math.asin(z) / math.pi + math.sqrt(1.0 - z * z) / math.pi + z / 2.0
    return z * np.arcsin(z) / np.pi + np.sqrt(1.0 - z * z) / np.pi + z / 2.0


def h_arc_prime(z: ArrayLike) -> ArrayLike:
    """
    Derivative of h: arcsin(z) / pi + 1/2

    Args:
        z: Correlation(s) in [-1, 1]

    Returns:
        h'(z) in [0, 1]
    """
    z = clamp_unit(z)
    if isinstance(z, float):
        return math.asin(z) / math.pi + 0.5
    return np.arcsin(z) / np.pi + 0.5


def sigma_dot(rho_prev: ArrayLike) -> ArrayLike:
    """
    Closed form of Sigma-dot at the next layer: arcsin(rho) / (2 pi) + 1/4

    Args:
        rho_prev: Correlation(s) of the previous layer

    Returns:
        h'(rho_prev) / 2
    """
    return h_arc_prime(rho_prev) / 2.0


def sigmoid_squared(z: ArrayLike) -> ArrayLike:
    """
    The map s(z) = (1 + exp(-z))^-2 advancing the eta kernels

    Args:
        z: Kernel value(s)

    Returns:
        s(z) in (0, 1)
    """
    return expit(z) ** 2


def eta_fixed_point() -> float:
    """
    Unique positive fixed point beta of s(z) = z

    Returns:
        beta, the depth limit of every eta kernel value
    """
    return brentq(lambda z: sigmoid_squared(z) - z, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def sigma_diagonal(L: int, n0: int) -> float:
    """Sigma^(L)(x, x) for unit x: 1 / (n0 2^(L-1))"""
    _check_depth(L)
    return 1.0 / (n0 * 2.0 ** (L - 1))


def theta_infty_diagonal(L: int, n0: int) -> float:
    """Theta_infty^(L)(x, x) for unit x: L / (n0 2^(L-1))"""
    _check_depth(L)
    return L / (n0 * 2.0 ** (L - 1))


def _check_depth(L: int) -> None:
    if int(L) != L or L < 1:
        raise DomainError(f"depth must be a positive integer, got {L!r}")


def rho_at_depth(z0: ArrayLike, L: int) -> ArrayLike:
    """
    Correlation rho^(L) reached from the inner product z0

    Args:
        z0: rho^(1), the inner product of two sphere points
        L: Depth (>= 1)

    Returns:
        (L-1)-fold composition of h applied to z0
    """
    _check_depth(L)
    rho = clamp_unit(z0)
    for _ in range(L - 1):
        rho = h_arc(rho)
    return rho


# Scalar state of the normalized NTK
@dataclass(frozen=True)
class ScalarKernelState:
    """Correlation and normalized NTK of one input pair at one depth"""

    rho: float
    theta_bar: float
    depth: int = 1

    def __post_init__(self):
        _check_depth(self.depth)
        if not -1.0 - CLAMP_TOLERANCE <= self.rho <= 1.0 + CLAMP_TOLERANCE:
            raise DomainError(f"rho {self.rho!r} outside [-1, 1]")

    @classmethod
    def from_inner_product(cls, z: float) -> "ScalarKernelState":
        """Depth-1 state of a pair with inner product z"""
        z = clamp_unit(float(z))
        return cls(rho=z, theta_bar=z, depth=1)


def theta_bar_step(state: ScalarKernelState) -> ScalarKernelState:
    """
    Advances the normalized NTK of one pair by one layer

    Theta_bar^(L+1) = L/(L+1) h'(rho^(L)) Theta_bar^(L) + 1/(L+1) h(rho^(L))

    Args:
        state: State at depth L

    Returns:
        State at depth L + 1
    """
    L = state.depth
    h_value = h_arc(state.rho)
    # Written over a common denominator so the fixed point (1, 1) stays exact
    theta = (L * h_arc_prime(state.rho) * state.theta_bar + h_value) / (L + 1)
    return ScalarKernelState(rho=h_value, theta_bar=theta, depth=L + 1)


# Kernel sequences
class KernelKind(str, Enum):
    """Kernel families with a closed form"""

    THETA_INFTY = "theta_infty"
    THETA_BAR = "theta_bar"
    RHO = "rho"
    ETA = "eta"
    CUSTOM = "custom"


def _first(state: State) -> np.ndarray:
    return state[0]


def _last(state: State) -> np.ndarray:
    return state[-1]


@dataclass(frozen=True)
class KernelSequence:
    """
    Depth-indexed family of dot-product kernels

    Every member is a function of the inner product only, so the whole
    family is evaluated elementwise on Gram matrices. The state may carry
    several arrays (e.g. rho next to Theta_bar); readout picks the kernel.

    Attributes:
        name: Identifier (a KernelKind value for the built-in families)
        init: Maps inner products to the depth-1 state
        step: Maps (state at depth L, L) to the state at depth L + 1
        readout: Extracts kernel values from a state
        normalizer: Optional per-depth factor giving the normalized kernel
    """

    name: str
    init: Callable[[np.ndarray], State]
    step: Callable[[State, int], State]
    readout: Callable[[State], np.ndarray] = _first
    normalizer: Optional[Callable[[int], float]] = None

    @property
    def kind(self) -> KernelKind:
        try:
            return KernelKind(self.name)
        except ValueError:
            return KernelKind.CUSTOM

    def trajectory(self, z: np.ndarray, L_max: int) -> Iterator[Tuple[int, np.ndarray]]:
        """
        Yields (L, kernel values) for L = 1 .. L_max

        Args:
            z: Inner products (any shape)
            L_max: Last depth
        """
        _check_depth(L_max)
        state = self.init(clamp_unit(np.asarray(z, dtype=np.float64)))
        for L in range(1, L_max + 1):
            if L > 1:
                state = self.step(state, L - 1)
            yield L, self.readout(state)

    def evaluate(self, z: np.ndarray, L: int) -> np.ndarray:
        """Kernel values at depth L for inner products z"""
        values = None
        for _, values in self.trajectory(z, L):
            pass
        return values

    def normalize(self, values: np.ndarray, L: int) -> np.ndarray:
        """Applies the per-depth normalizer, if any"""
        if self.normalizer is None:
            return values
        return values * self.normalizer(L)

    def matrix(self, gram: np.ndarray, L: int) -> "KernelMatrix":
        """Kernel matrix at depth L from a Gram matrix"""
        return KernelMatrix(self.evaluate(gram, L), L, self.kind)


def _theta_bar_init(z: np.ndarray) -> State:
    return z, z


def _theta_bar_step(state: State, L: int) -> State:
    rho, theta = state
    h_value = h_arc(rho)
    return h_value, (L * h_arc_prime(rho) * theta + h_value) / (L + 1)


def _rho_step(state: State, L: int) -> State:
    return (h_arc(state[0]),)


def _eta_step(state: State, L: int) -> State:
    return (sigmoid_squared(state[0]),)


THETA_BAR = KernelSequence(
    name=KernelKind.THETA_BAR.value,
    init=_theta_bar_init,
    step=_theta_bar_step,
    readout=_last,
)

RHO = KernelSequence(
    name=KernelKind.RHO.value,
    init=lambda z: (z,),
    step=_rho_step,
)

ETA = KernelSequence(
    name=KernelKind.ETA.value,
    init=lambda z: (z,),
    step=_eta_step,
)


def theta_infty_sequence(n0: int) -> KernelSequence:
    """
    The limiting NTK of a bias-free ReLU network with input dimension n0

    Theta^(1) = z / n0,
    Theta^(L+1) = Sigma-dot^(L+1) Theta^(L) + h(rho^(L)) / (n0 2^L)

    Args:
        n0: Input dimension

    Returns:
        KernelSequence whose normalizer maps Theta_infty to Theta_bar
    """
    if n0 < 1:
        raise DomainError(f"input dimension must be positive, got {n0}")

    def init(z: np.ndarray) -> State:
        return z, z / n0

    def step(state: State, L: int) -> State:
        rho, theta = state
        h_value = h_arc(rho)
        return h_value, sigma_dot(rho) * theta + h_value / (n0 * 2.0 ** L)

    return KernelSequence(
        name=KernelKind.THETA_INFTY.value,
        init=init,
        step=step,
        readout=_last,
        normalizer=lambda L: n0 * 2.0 ** (L - 1) / L,
    )


def constant_sequence(value: float = 1.0, name: str = "constant") -> KernelSequence:
    """Kernel equal to a constant everywhere (rank one on any dataset)"""
    return KernelSequence(
        name=name,
        init=lambda z: (np.full_like(z, value),),
        step=lambda state, L: state,
    )


def get_sequence(name: str, n0: Optional[int] = None) -> KernelSequence:
    """
    Looks up a built-in kernel family

    Args:
        name: theta_bar, rho, eta or theta_infty
        n0: Input dimension, required for theta_infty

    Returns:
        The kernel sequence
    """
    kind = KernelKind(name)
    if kind is KernelKind.THETA_BAR:
        return THETA_BAR
    if kind is KernelKind.RHO:
        return RHO
    if kind is KernelKind.ETA:
        return ETA
    if kind is KernelKind.THETA_INFTY:
        if n0 is None:
            raise DomainError("theta_infty needs the input dimension n0")
        return theta_infty_sequence(n0)
    raise DomainError(f"no built-in kernel named {name!r}")


# Kernel matrices
@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric kernel evaluation on a dataset with spectral accessors"""

    entries: np.ndarray
    depth: int
    kind: KernelKind = KernelKind.CUSTOM

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in ascending order"""
        return scipy.linalg.eigvalsh(self.entries)

    def smallest_eigenvalue(self) -> float:
        return float(self.eigenvalues()[0])

    def logdet(self) -> Tuple[float, float]:
        return logdet(self.entries)

    def is_positive_definite(self) -> bool:
        return is_positive_definite(self.entries)


def logdet(matrix: np.ndarray) -> Tuple[float, float]:
    """
    Sign and log of the absolute determinant (LU factorization)

    Args:
        matrix: Square matrix

    Returns:
        (sign, log|det|); (0.0, -inf) for an exactly singular matrix
    """
    sign, value = np.linalg.slogdet(matrix)
    return float(sign), float(value)


def is_positive_definite(matrix: np.ndarray) -> bool:
    """True if a Cholesky factorization succeeds (no jitter is added)"""
    try:
        scipy.linalg.cholesky(matrix, lower=True)
    except np.linalg.LinAlgError:
        return False
    return True


def theta_infty(gram: np.ndarray, L: int, n0: int,
                norms: Optional[np.ndarray] = None) -> KernelMatrix:
    """
    Limiting NTK matrix of a depth-L bias-free ReLU network

    Args:
        gram: Inner products of sphere data, or raw inner products when
            norms are given
        L: Depth
        n0: Input dimension of the network
        norms: Optional Euclidean norms of general (non-sphere) data; the
            kernel is then evaluated through positive homogeneity

    Returns:
        KernelMatrix of kind theta_infty
    """
    gram = np.asarray(gram, dtype=np.float64)
    if norms is None:
        return KernelMatrix(theta_infty_sequence(n0).evaluate(gram, L), L, KernelKind.THETA_INFTY)

    norms = np.asarray(norms, dtype=np.float64)
    scale = np.outer(norms, norms)
    cosines = clamp_unit(gram / scale)
    values = scale * theta_infty_sequence(n0).evaluate(cosines, L)
    return KernelMatrix(values, L, KernelKind.THETA_INFTY)


def theta_bar(gram: np.ndarray, L: int, n0: Optional[int] = None) -> KernelMatrix:
    """
    Normalized limiting NTK n0 2^(L-1) Theta_infty^(L) / L on sphere data

    The normalization cancels n0, so only the Gram matrix is needed; n0 is
    accepted for symmetry with theta_infty and only validated.

    Args:
        gram: Inner products of sphere data
        L: Depth
        n0: Input dimension (optional, must be positive when given)

    Returns:
        KernelMatrix of kind theta_bar (unit diagonal)
    """
    if n0 is not None and (int(n0) != n0 or n0 < 1):
        raise DomainError(f"n0 must be a positive integer, got {n0!r}")
    return THETA_BAR.matrix(gram, L)


def rho_matrix(gram: np.ndarray, L: int) -> KernelMatrix:
    """Correlation kernel rho^(L) on sphere data"""
    return RHO.matrix(gram, L)


def eta_sequence(gram: np.ndarray, L: int) -> KernelMatrix:
    """
    The eta kernel: (L-1)-fold application of s to the Gram matrix

    Args:
        gram: Inner products of sphere data
        L: Depth

    Returns:
        KernelMatrix of kind eta
    """
    return ETA.matrix(gram, L)


def sigma_matrix(gram: np.ndarray, L: int, n0: int) -> np.ndarray:
    """Covariance Sigma^(L) = rho^(L) / (n0 2^(L-1)) on sphere data"""
    return rho_at_depth(np.asarray(gram, dtype=np.float64), L) * sigma_diagonal(L, n0)


def sigma_dot_matrix(gram: np.ndarray, L: int) -> np.ndarray:
    """Sigma-dot^(L) for L >= 2 on sphere data"""
    if L < 2:
        raise DomainError("Sigma-dot is defined from depth 2 on")
    return sigma_dot(rho_at_depth(np.asarray(gram, dtype=np.float64), L - 1))


# Criteria check
@dataclass(frozen=True)
class DepthCriteria:
    """Criteria values of one kernel sequence at one depth"""

    depth: int
    dominance_violation: float
    smallest_eigenvalue: float
    positive_definite: bool
    logdet_sign: float
    logdet: float


@dataclass(frozen=True)
class CriteriaReport:
    """Per-depth criteria of a kernel sequence on a dataset"""

    name: str
    n: int
    rows: Tuple[DepthCriteria, ...]
    l_hat: Optional[int]

    @property
    def depths(self) -> List[int]:
        return [row.depth for row in self.rows]


def _dominance_violation(values: np.ndarray) -> float:
    # max off-diagonal minus min diagonal; <= 0 when the diagonal dominates
    n = values.shape[0]
    diagonal_min = float(np.min(np.diag(values)))
    if n < 2:
        return 0.0
    off = values[~np.eye(n, dtype=bool)]
    return float(np.max(off)) - diagonal_min


def kernel_criteria_check(seq: KernelSequence, ds: SphereDataset, L_max: int) -> CriteriaReport:
    """
    Checks the three depth-limit criteria for a kernel sequence

    1. Diagonal dominance kappa(x, x) >= kappa(x1, x2)
    2. Positive definiteness from some depth L_hat on
    3. Decay of the determinant of the normalized kernel matrix

    Args:
        seq: Kernel sequence
        ds: Sphere dataset
        L_max: Last depth (>= 2)

    Returns:
        CriteriaReport; never raises on singular matrices
    """
    if L_max < 2:
        raise DomainError("the criteria check needs L_max >= 2")

    rows: List[DepthCriteria] = []
    for L, values in seq.trajectory(gram_matrix(ds), L_max):
        normalized = seq.normalize(values, L)
        positive = is_positive_definite(normalized)
        smallest = float(scipy.linalg.eigvalsh(normalized)[0])
        sign, value = logdet(normalized)
        rows.append(DepthCriteria(
            depth=L,
            dominance_violation=_dominance_violation(values),
            smallest_eigenvalue=smallest,
            positive_definite=positive,
            logdet_sign=sign,
            logdet=value,
        ))
        logger.debug("%s L=%d: min eig %.3e, logdet %.6g", seq.name, L, smallest, value)

    # Smallest L such that every depth from L to L_max is positive definite
    l_hat = None
    for row in reversed(rows):
        if not row.positive_definite:
            break
        l_hat = row.depth

    logger.info("Criteria for %s on n=%d: L_hat=%s", seq.name, ds.n, l_hat)
    return CriteriaReport(name=seq.name, n=ds.n, rows=tuple(rows), l_hat=l_hat)
