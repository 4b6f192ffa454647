"""
Exception hierarchy for DeepNTK

Every error raised by the library derives from DeepNTKError, so callers
(mainly the command line) can map failures to exit codes.
"""

from typing import Optional


class DeepNTKError(Exception):
    """Base class for all DeepNTK errors"""


class DomainError(DeepNTKError, ValueError):
    """An argument lies outside the domain of a kernel function"""


class ConfigError(DeepNTKError, ValueError):
    """Invalid experiment configuration or command line flags"""


class DatasetError(DeepNTKError, ValueError):
    """Base class for dataset validation and parsing errors"""


class ZeroRow(DatasetError):
    """A data row has (numerically) zero norm and cannot be projected"""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"row {index} is the zero vector")


class DuplicateAfterProjection(DatasetError):
    """Two rows coincide on the sphere (colinear inputs or duplicates)"""

    def __init__(self, i: int, j: int, hint: Optional[str] = None):
        self.i = i
        self.j = j
        message = f"rows {i} and {j} coincide on the sphere"
        super().__init__(f"{message}; {hint}" if hint else message)


class DatasetParseError(DatasetError):
    """A CSV file could not be parsed"""

    def __init__(self, line: int, message: str, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{location}: {message}")


class DimensionMismatch(DeepNTKError, ValueError):
    """Input dimension does not match the network or dataset"""

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected dimension {expected}, got {got}")


class SingularKernel(DeepNTKError, ArithmeticError):
    """The kernel matrix is not numerically invertible"""

    def __init__(self, smallest_eigenvalue: float, depth: Optional[int] = None):
        self.smallest_eigenvalue = smallest_eigenvalue
        self.depth = depth
        where = f" at depth {depth}" if depth is not None else ""
        super().__init__(
            f"kernel matrix is singular{where} "
            f"(smallest eigenvalue {smallest_eigenvalue:.6g})"
        )


class NonFiniteLoss(DeepNTKError, ArithmeticError):
    """Gradient descent diverged"""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"training loss became {loss} at step {step}")


class OutputError(DeepNTKError, OSError):
    """Writing an output file failed"""
