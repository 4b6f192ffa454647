"""
Dataset ingestion and spherical projection for DeepNTK

This module is responsible for:
1. Holding raw datasets (points and target values)
2. Projecting data onto the unit sphere (canonical or stereographic)
3. Computing Gram matrices of sphere data
4. Reading datasets from CSV files and generating synthetic ones
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist

from app.core.errors import (
    DatasetError, DatasetParseError, DuplicateAfterProjection, ZeroRow
)
from app.utils.random_utils import make_rng

logger = logging.getLogger(__name__)

# Rows closer than this (Euclidean distance) are considered identical
DUPLICATE_TOLERANCE = 1e-12
# Unit-norm tolerance for sphere data
NORM_TOLERANCE = 1e-12
# Norm below which a row is treated as the zero vector
ZERO_NORM = 1e-300
# Inner products this close to +-1 are rounding noise around coinciding points
SNAP_TOLERANCE = 1e-13


class Projection(str, Enum):
    """How a dataset was placed on the sphere"""

    CANONICAL = "canonical"
    STEREOGRAPHIC = "stereographic"
    IDENTITY = "identity"


@dataclass(frozen=True, eq=False)
class RawDataset:
    """Points of arbitrary scale with their target values y*"""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, ndmin=2)
        labels = np.array(self.labels, dtype=np.float64).reshape(-1)
        if points.ndim != 2:
            raise DatasetError("points must be a 2-dimensional array")
        n, n0 = points.shape
        if n < 1:
            raise DatasetError("a dataset needs at least one point")
        if n0 < 2:
            raise DatasetError(f"points need at least 2 coordinates, got {n0}")
        if labels.shape[0] != n:
            raise DatasetError(f"{n} points but {labels.shape[0]} labels")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(labels))):
            raise DatasetError("dataset contains non-finite values")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def n0(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class SphereDataset:
    """Points with unit rows, their labels and the projection used"""

    points: np.ndarray
    labels: np.ndarray
    projection: Projection = Projection.IDENTITY
    source: Optional[RawDataset] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, ndmin=2)
        labels = np.array(self.labels, dtype=np.float64).reshape(-1)
        if points.shape[0] != labels.shape[0]:
            raise DatasetError(f"{points.shape[0]} points but {labels.shape[0]} labels")
        if points.shape[1] < 2:
            raise DatasetError("sphere points need at least 2 coordinates")

        norms = np.linalg.norm(points, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
        if bad.size:
            raise DatasetError(
                f"row {int(bad[0])} is not on the unit sphere (norm {norms[bad[0]]!r})"
            )

        projection = Projection(self.projection)
        # Repeated raw rows and far-away rows still collide after a stereographic lift
        _check_distinct(points, antipodal=projection is Projection.CANONICAL)

        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "projection", projection)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, indices: Sequence[int]) -> "SphereDataset":
        """Returns the dataset restricted to the given rows"""
        indices = list(indices)
        return SphereDataset(
            self.points[indices], self.labels[indices], self.projection, self.source
        )


# Only canonical collisions are cured by switching projection
COLINEAR_HINT = "use the stereographic projection for colinear data"


def _check_distinct(points: np.ndarray, antipodal: bool) -> None:
    """
    Rejects coinciding (and optionally antipodal) rows

    Args:
        points: Unit rows
        antipodal: Also reject pairs x_j = -x_i (canonical projection)

    Raises:
        DuplicateAfterProjection: For the first offending pair
    """
    n = points.shape[0]
    if n < 2:
        return
    hint = COLINEAR_HINT if antipodal else None
    # pdist uses the same (i, j) ordering as triu_indices with k=1
    rows, cols = np.triu_indices(n, k=1)
    close = np.flatnonzero(pdist(points) < DUPLICATE_TOLERANCE)
    if close.size:
        raise DuplicateAfterProjection(int(rows[close[0]]), int(cols[close[0]]), hint)
    if antipodal:
        flipped = cdist(points, -points)[rows, cols]
        close = np.flatnonzero(flipped < DUPLICATE_TOLERANCE)
        if close.size:
            raise DuplicateAfterProjection(int(rows[close[0]]), int(cols[close[0]]), hint)


def project_canonical(raw: RawDataset) -> SphereDataset:
    """
    Projects every row onto the sphere by dividing by its norm

    Args:
        raw: Dataset with non-zero rows

    Returns:
        Sphere dataset of the same dimension, labels unchanged

    Raises:
        ZeroRow: If a row has norm below 1e-300
        DuplicateAfterProjection: If two rows are colinear
    """
    norms = np.linalg.norm(raw.points, axis=1)
    zero = np.flatnonzero(norms < ZERO_NORM)
    if zero.size:
        raise ZeroRow(int(zero[0]))

    points = raw.points / norms[:, None]
    return SphereDataset(points, raw.labels, Projection.CANONICAL, raw)


def stereographic_inverse(x: np.ndarray) -> np.ndarray:
    """
    Maps points of R^n0 onto S^n0 (inverse stereographic projection)

    Args:
        x: Array of shape (..., n0)

    Returns:
        Array of shape (..., n0 + 1) with unit rows
    """
    x = np.asarray(x, dtype=np.float64)
    squared = np.sum(x * x, axis=-1, keepdims=True)
    return np.concatenate([2.0 * x, squared - 1.0], axis=-1) / (squared + 1.0)


def stereographic_forward(p: np.ndarray) -> np.ndarray:
    """
    Maps points of S^n0 (except the north pole) back to R^n0

    Args:
        p: Array of shape (..., n0 + 1) with unit rows

    Returns:
        Array of shape (..., n0)
    """
    p = np.asarray(p, dtype=np.float64)
    return p[..., :-1] / (1.0 - p[..., -1:])


def project_stereographic(raw: RawDataset) -> SphereDataset:
    """
    Embeds the dataset into S^n0 through inverse stereographic projection

    The map is injective, so colinear inputs stay distinct on the sphere.

    Args:
        raw: Any raw dataset

    Returns:
        Sphere dataset of dimension n0 + 1

    Raises:
        DuplicateAfterProjection: If two rows land on the same sphere point
            (repeated rows, or rows so far out that both round to the pole)
    """
    points = stereographic_inverse(raw.points)
    return SphereDataset(points, raw.labels, Projection.STEREOGRAPHIC, raw)


def as_sphere(raw: RawDataset) -> SphereDataset:
    """Wraps data that already lies on the sphere (identity projection)"""
    return SphereDataset(raw.points, raw.labels, Projection.IDENTITY, raw)


def project_points(points: np.ndarray, projection: str) -> np.ndarray:
    """
    Projects loose points (e.g. test inputs) without the dataset checks

    Args:
        points: Array of shape (m, n0)
        projection: One of "canonical", "stereographic", "identity"

    Returns:
        Array of unit rows

    Raises:
        ZeroRow: For a zero row under the canonical projection
        DatasetError: For identity rows that are not unit vectors
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    projection = Projection(projection)
    if projection is Projection.STEREOGRAPHIC:
        return stereographic_inverse(points)
    if projection is Projection.CANONICAL:
        norms = np.linalg.norm(points, axis=1)
        zero = np.flatnonzero(norms < ZERO_NORM)
        if zero.size:
            raise ZeroRow(int(zero[0]))
        return points / norms[:, None]
    norms = np.linalg.norm(points, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
    if bad.size:
        raise DatasetError(f"row {int(bad[0])} is not on the unit sphere")
    return points


def project(raw: RawDataset, projection: str) -> SphereDataset:
    """
    Applies the projection named by a tag

    Args:
        raw: Raw dataset
        projection: One of "canonical", "stereographic", "identity"

    Returns:
        Sphere dataset
    """
    projection = Projection(projection)
    if projection is Projection.CANONICAL:
        return project_canonical(raw)
    if projection is Projection.STEREOGRAPHIC:
        return project_stereographic(raw)
    return as_sphere(raw)


def _snap_unit(products: np.ndarray) -> np.ndarray:
    # h' has a square-root singularity at 1, so 1 - 2eps must not survive
    products = np.clip(products, -1.0, 1.0)
    products[products > 1.0 - SNAP_TOLERANCE] = 1.0
    products[products < -1.0 + SNAP_TOLERANCE] = -1.0
    return products


def _symmetric_clamped(products: np.ndarray) -> np.ndarray:
    # Upper triangle mirrored, so the result is bit-for-bit symmetric
    upper = np.triu(products)
    sym = _snap_unit(upper + np.triu(products, k=1).T)
    np.fill_diagonal(sym, 1.0)
    return sym


def gram(ds: SphereDataset) -> np.ndarray:
    """
    Computes the Gram matrix of a sphere dataset

    Args:
        ds: Sphere dataset

    Returns:
        Exactly symmetric n x n matrix with entries clamped to [-1, 1]
        and unit diagonal
    """
    products = ds.points @ ds.points.T
    overshoot = np.max(np.abs(products)) - 1.0
    if overshoot > 1e-12:
        logger.warning("Inner products exceed 1 by %.3g before clamping", overshoot)
    return _symmetric_clamped(products)


def cross_gram(ds: SphereDataset, points: np.ndarray) -> np.ndarray:
    """
    Inner products between probe points and the dataset

    Args:
        ds: Sphere dataset
        points: Probe points of shape (m, dim) or (dim,)

    Returns:
        Array of shape (m, n) clamped to [-1, 1]
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return _snap_unit(points @ ds.points.T)


def _parse_row(row: List[str]) -> Optional[List[float]]:
    try:
        return [float(value) for value in row]
    except ValueError:
        return None


def load_csv(path: str) -> RawDataset:
    """
    Reads a dataset from a CSV file

    The last column holds the label, all other columns are coordinates.
    A non-numeric first row is treated as a header.

    Args:
        path: Path to a UTF-8 comma separated file

    Returns:
        Raw dataset

    Raises:
        DatasetParseError: With the offending line number
    """
    rows: List[List[float]] = []
    width = None
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        for row in reader:
            line = reader.line_num
            cells = [cell.strip() for cell in row]
            if not cells or all(cell == "" for cell in cells):
                continue
            values = _parse_row(cells)
            if values is None:
                # Only the first non-empty line may be a header
                if not rows and width is None:
                    width = len(cells)
                    continue
                raise DatasetParseError(line, f"non-numeric value in {cells!r}", path)
            if width is None:
                width = len(values)
            if len(values) != width:
                raise DatasetParseError(
                    line, f"expected {width} columns, found {len(values)}", path
                )
            if len(values) < 3:
                raise DatasetParseError(
                    line, "need at least two coordinates and one label", path
                )
            rows.append(values)

    if not rows:
        raise DatasetParseError(0, "file contains no data rows", path)
    table = np.array(rows, dtype=np.float64)
    logger.info("Loaded %d points of dimension %d from %s", table.shape[0], table.shape[1] - 1, path)
    return RawDataset(table[:, :-1], table[:, -1])


def holdout(raw: RawDataset, indices: Sequence[int]) -> Tuple[RawDataset, RawDataset]:
    """
    Splits off the rows named by the caller as a test set

    Args:
        raw: Dataset to split
        indices: Row indices for the test set

    Returns:
        (train, test) datasets
    """
    mask = np.zeros(raw.n, dtype=bool)
    mask[list(indices)] = True
    if mask.all() or not mask.any():
        raise DatasetError("holdout must leave both train and test rows")
    return (
        RawDataset(raw.points[~mask], raw.labels[~mask]),
        RawDataset(raw.points[mask], raw.labels[mask]),
    )


def synthetic_dataset(n: int, n0: int, seed: int, low: float = 0.0,
                      high: float = 1.0) -> RawDataset:
    """
    Draws points uniformly from a box, with standard normal labels

    Args:
        n: Number of points
        n0: Input dimension
        seed: Random seed
        low: Lower bound of the box
        high: Upper bound of the box

    Returns:
        Raw dataset (project it to reach the sphere)
    """
    rng = make_rng(seed)
    points = rng.uniform(low, high, size=(n, n0))
    labels = rng.standard_normal(n)
    return RawDataset(points, labels)


def uniform_sphere(m: int, dim: int, seed: int) -> np.ndarray:
    """
    Draws points uniformly on the unit sphere S^(dim-1)

    Args:
        m: Number of points
        dim: Ambient dimension
        seed: Random seed

    Returns:
        Array of shape (m, dim) with unit rows
    """
    rng = make_rng(seed)
    points = rng.standard_normal((m, dim))
    return points / np.linalg.norm(points, axis=1)[:, None]
