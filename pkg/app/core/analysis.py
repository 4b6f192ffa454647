"""
Depth experiments for DeepNTK

This module provides:
1. The smooth switch psi_d used in the depth-limit argument
2. Depth sweeps of a kernel sequence on a dataset and a probe point
   (pairwise kernel values, log-determinants, coefficient vectors)
3. The boundedness check of the limiting coefficient vector
   v = Theta_bar(X, X)^-1 Theta_bar(X, x)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.special import expit

from app.core.errors import DomainError, SingularKernel
from app.core.geometry import SphereDataset, cross_gram, gram
from app.core.kernels import THETA_BAR, KernelSequence, clamp_unit, logdet

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


def psi(d: float, z):
    """
    Smooth switch psi_d(z) = 1 / (1 + exp(-2z / (d (1 - z^2))))

    psi_d(-1) = 0 and psi_d(1) = 1 are set by branch, not by limit.

    Args:
        d: Positive sharpness parameter
        z: Value(s) in [-1, 1]

    Returns:
        psi_d(z) in [0, 1]
    """
    if not d > 0.0:
        raise DomainError(f"psi_d needs d > 0, got {d!r}")
    z = clamp_unit(z)
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))

    result = np.empty_like(z)
    result[z >= 1.0] = 1.0
    result[z <= -1.0] = 0.0
    inner = (z > -1.0) & (z < 1.0)
    zi = z[inner]
    result[inner] = expit(2.0 * zi / (d * (1.0 - zi * zi)))
    return float(result[0]) if scalar else result


def _is_singular(matrix: np.ndarray) -> Tuple[bool, float]:
    eigenvalues = scipy.linalg.eigvalsh(matrix)
    threshold = matrix.shape[0] * np.finfo(np.float64).eps * max(eigenvalues[-1], 0.0)
    return bool(eigenvalues[0] <= threshold), float(eigenvalues[0])


def _check_unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if abs(np.linalg.norm(x) - 1.0) > 1e-12:
        raise DomainError("probe point must have unit norm")
    return x


@dataclass
class DepthTrace:
    """
    Per-depth record of a kernel sequence on X and a probe x

    Pairs (i, j) with j < n index X; pair (i, n) is between x_i and x.
    Lists are aligned with depths; None marks a numerically singular depth.
    """

    name: str
    n: int
    depths: List[int] = field(default_factory=list)
    pair_values: Dict[Pair, List[float]] = field(default_factory=dict)
    logdet: List[Tuple[float, float]] = field(default_factory=list)
    coeff_vectors: List[Optional[np.ndarray]] = field(default_factory=list)
    coeff_norms: List[Optional[float]] = field(default_factory=list)
    coeff_diffs: List[Optional[float]] = field(default_factory=list)

    @property
    def singular_depths(self) -> List[int]:
        return [L for L, v in zip(self.depths, self.coeff_vectors) if v is None]

    def values_at(self, L: int) -> Dict[Pair, float]:
        """Kernel values of every pair at depth L"""
        index = self.depths.index(L)
        return {pair: values[index] for pair, values in self.pair_values.items()}

    def coeff_diff(self, L: int) -> Optional[float]:
        """||v^(L+1) - v^(L)||_2"""
        return self.coeff_diffs[self.depths.index(L + 1)]


def depth_sweep(seq: KernelSequence, ds: SphereDataset, x: np.ndarray, L_max: int) -> DepthTrace:
    """
    Follows a kernel sequence through depths 1 .. L_max

    Args:
        seq: Kernel sequence
        ds: Sphere dataset X
        x: Unit probe point
        L_max: Last depth (>= 2)

    Returns:
        DepthTrace; singular depths are recorded, the sweep continues
    """
    if L_max < 2:
        raise DomainError("a depth sweep needs L_max >= 2")
    x = _check_unit(x)
    n = ds.n

    # Inner products of X and x in one matrix; x may coincide with a row of X
    z = np.empty((n + 1, n + 1))
    z[:n, :n] = gram(ds)
    z[:n, n] = z[n, :n] = cross_gram(ds, x)[0]
    z[n, n] = 1.0

    trace = DepthTrace(name=seq.name, n=n)
    pairs = [(i, j) for j in range(n + 1) for i in range(j)]
    for pair in pairs:
        trace.pair_values[pair] = []

    previous = None
    for L, values in seq.trajectory(z, L_max):
        trace.depths.append(L)
        for i, j in pairs:
            trace.pair_values[(i, j)].append(float(values[i, j]))

        kernel = seq.normalize(values[:n, :n], L)
        kx = seq.normalize(values[:n, n], L)
        trace.logdet.append(logdet(kernel))

        # Fresh solve per depth, nothing is carried over between depths
        singular, smallest = _is_singular(kernel)
        coefficients = None
        if singular:
            logger.warning("%s kernel singular at depth %d (smallest eigenvalue %.3e)",
                           seq.name, L, smallest)
        else:
            try:
                coefficients = scipy.linalg.solve(kernel, kx, assume_a="pos")
            except np.linalg.LinAlgError:
                logger.warning("%s kernel not positive definite at depth %d", seq.name, L)

        trace.coeff_vectors.append(coefficients)
        trace.coeff_norms.append(None if coefficients is None else float(np.linalg.norm(coefficients)))
        if coefficients is None or previous is None:
            trace.coeff_diffs.append(None)
        else:
            trace.coeff_diffs.append(float(np.linalg.norm(coefficients - previous)))
        previous = coefficients

    logger.info("Sweep of %s over L=1..%d on n=%d done (%d singular depths)",
                seq.name, L_max, n, len(trace.singular_depths))
    return trace


@dataclass(frozen=True, eq=False)
class BoundReport:
    """
    Empirical bound on the limiting coefficient vectors

    Attributes:
        depth: Depth L of Theta_bar
        coefficients: (m, n) array, row k is v^(L) for probe k
        max_components: Largest component of every v^(L)
        norms: ||v^(L)||_2 per probe
        empirical_c: Max component over all probes
        scaling: (size, max over probes of ||v^(L)||_2 / size) for nested subsets
    """

    depth: int
    coefficients: np.ndarray
    max_components: np.ndarray
    norms: np.ndarray
    empirical_c: float
    scaling: Tuple[Tuple[int, float], ...]


def _coefficients(ds: SphereDataset, probes: np.ndarray, L: int) -> np.ndarray:
    kernel = THETA_BAR.evaluate(gram(ds), L)
    singular, smallest = _is_singular(kernel)
    if singular:
        raise SingularKernel(smallest, depth=L)
    kx = THETA_BAR.evaluate(cross_gram(ds, probes), L)
    return scipy.linalg.solve(kernel, kx.T, assume_a="pos").T


def default_subset_sizes(n: int) -> List[int]:
    """Powers of two from 4 below n, followed by n"""
    sizes = []
    size = 4
    while size < n:
        sizes.append(size)
        size *= 2
    sizes.append(n)
    return sizes


def rde_bound_check(ds: SphereDataset, xs: np.ndarray, L: int,
                    sizes: Optional[Sequence[int]] = None) -> BoundReport:
    """
    Measures how large the coefficient vectors v^(L) get

    Args:
        ds: Sphere dataset X
        xs: Probe points of shape (m, dim), unit rows
        L: Depth (>= 2)
        sizes: Nested prefix sizes of X for the O(n) scaling check

    Returns:
        BoundReport with the empirical constant C

    Raises:
        SingularKernel: If Theta_bar is singular on X (or a prefix of it)
        DomainError: For L < 2, non-unit probes or a subset size outside 1..n
    """
    if L < 2:
        raise DomainError("the bound check needs L >= 2")
    sizes = default_subset_sizes(ds.n) if sizes is None else list(sizes)
    bad = [size for size in sizes if int(size) != size or not 1 <= size <= ds.n]
    if bad:
        raise DomainError(f"subset sizes must lie in 1..{ds.n}, got {bad[0]!r}")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    for x in xs:
        _check_unit(x)

    coefficients = _coefficients(ds, xs, L)
    max_components = coefficients.max(axis=1)
    norms = np.linalg.norm(coefficients, axis=1)

    scaling = []
    for size in sizes:
        if size == ds.n:
            subset = coefficients
        else:
            subset = _coefficients(ds.subset(range(int(size))), xs, L)
        scaling.append((int(size), float(np.max(np.linalg.norm(subset, axis=1)) / size)))

    report = BoundReport(
        depth=L,
        coefficients=coefficients,
        max_components=max_components,
        norms=norms,
        empirical_c=float(np.max(max_components)),
        scaling=tuple(scaling),
    )
    logger.info("Bound check at L=%d over %d probes: C=%.6g", L, xs.shape[0], report.empirical_c)
    return report
