"""Incremental quadratic testbed and the two-batch toy objective.

The testbed objective is a sum of N one-dimensional quadratics, each pinned
to a single coordinate of the parameter vector:

    F(x) = sum_i  a_i * (x[j_i] - b_i)^2 + c_i

with a_i drawn from U(0.5, 1), b_i from U(-1, 1), c_i from U(0.5, 1) and
j_i uniform over coordinates. Every batch therefore has a gradient with at
most |batch| nonzero entries, which keeps per-sample effects visible in the
optimizer state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadraticProblem",
    "Batch",
    "ToyProblem",
    "generate_quadratic",
    "batch_loss",
    "batch_grad",
    "full_loss",
    "full_loss_minimum",
    "toy_losses",
    "save_problem_csv",
    "load_problem_csv",
]


@dataclass
class Batch:
    """Indices of the functions visited at one step."""

    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class QuadraticProblem:
    """A fixed drawn instance of the incremental quadratic objective.

    coeffs is an (N, 3) array whose columns are the curvature a, the center
    b and the offset c; dim_index[i] is the coordinate function i acts on.
    """

    num_functions: int
    dim: int
    coeffs: np.ndarray
    dim_index: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        if self.coeffs.shape != (self.num_functions, 3):
            raise ValueError(
                f"coeffs must have shape ({self.num_functions}, 3), got {self.coeffs.shape}"
            )
        if self.dim_index.shape != (self.num_functions,):
            raise ValueError("dim_index must have one entry per function")
        if np.any(self.coeffs[:, 0] < 0):
            raise ValueError("curvatures must be nonnegative")
        if np.any((self.dim_index < 0) | (self.dim_index >= self.dim)):
            raise ValueError("dim_index entries must lie in [0, dim)")


def generate_quadratic(seed: int, num_functions: int, dim: int) -> QuadraticProblem:
    """Draw a problem instance; identical (seed, N, dim) gives identical draws.

    Draw order is fixed: the (N, 3) coefficient table row-major, then the
    center column is redrawn from U(-1, 1), then the coordinate assignment.
    """
    if num_functions < 1 or dim < 1:
        raise ValueError("num_functions and dim must be >= 1")
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(0.5, 1.0, size=(num_functions, 3))
    coeffs[:, 1] = rng.uniform(-1.0, 1.0, size=num_functions)
    dim_index = rng.integers(0, dim, size=num_functions)
    return QuadraticProblem(
        num_functions=num_functions,
        dim=dim,
        coeffs=coeffs,
        dim_index=dim_index,
        seed=seed,
    )


def _gather(problem: QuadraticProblem, indices: np.ndarray, x: np.ndarray):
    a = problem.coeffs[indices, 0]
    b = problem.coeffs[indices, 1]
    c = problem.coeffs[indices, 2]
    j = problem.dim_index[indices]
    return a, b, c, j, x[j]


def batch_loss(problem: QuadraticProblem, batch: Batch, x: np.ndarray) -> float:
    """Mean loss of the batch members at x."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    a, b, c, _, xj = _gather(problem, batch.indices, x)
    return float(np.mean(a * (xj - b) ** 2 + c))

def batch_grad(problem: QuadraticProblem, batch: Batch, x: np.ndarray) -> np.ndarray:
    """Mean gradient of the batch members at x, as a dense vector.

    Each member contributes 2 a (x[j] - b) to its own coordinate; members
    sharing a coordinate accumulate.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    a, b, _, j, xj = _gather(problem, batch.indices, x)
    grad = np.zeros(problem.dim)
    np.add.at(grad, j, 2.0 * a * (xj - b))
    grad /= len(batch)
    return grad


def sparse_batch_grad(
    problem: QuadraticProblem, batch: Batch, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(coords, values) form of batch_grad; coords are unique and sorted."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    a, b, _, j, xj = _gather(problem, batch.indices, x)
    coords, inverse = np.unique(j, return_inverse=True)
    vals = np.zeros(len(coords))
    np.add.at(vals, inverse, 2.0 * a * (xj - b))
    vals /= len(batch)
    return coords, vals


def full_loss(problem: QuadraticProblem, x: np.ndarray) -> float:
    """Sum of all component losses at x."""
    a = problem.coeffs[:, 0]
    b = problem.coeffs[:, 1]
    c = problem.coeffs[:, 2]
    xj = x[problem.dim_index]
    return float(np.sum(a * (xj - b) ** 2 + c))


def full_loss_minimum(problem: QuadraticProblem) -> tuple[np.ndarray, float]:
    """Closed-form minimizer and minimum of the full objective.

    Coordinate j minimizes a weighted least squares of the centers living on
    it: x*[j] = sum(a_i b_i) / sum(a_i). Coordinates no function touches are
    left at zero.
    """
    a = problem.coeffs[:, 0]
    b = problem.coeffs[:, 1]
    wsum = np.bincount(problem.dim_index, weights=a, minlength=problem.dim)
    wbsum = np.bincount(problem.dim_index, weights=a * b, minlength=problem.dim)
    x_star = np.zeros(problem.dim)
    touched = wsum > 0
    x_star[touched] = wbsum[touched] / wsum[touched]
    return x_star, full_loss(problem, x_star)


def save_problem_csv(problem: QuadraticProblem, path) -> None:
    """Write the drawn instance as rows (i, a, b, c, j) for audits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "a", "b", "c", "j"])
        for i in range(problem.num_functions):
            a, b, c = (float(v) for v in problem.coeffs[i])
            writer.writerow([i, repr(a), repr(b), repr(c), int(problem.dim_index[i])])


def load_problem_csv(path, dim: int, seed: int = -1) -> QuadraticProblem:
    """Inverse of save_problem_csv; the seed of a loaded instance is opaque."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["i", "a", "b", "c", "j"]:
            raise ValueError(f"unexpected problem header: {header}")
        for row in reader:
            rows.append(row)
    n = len(rows)
    coeffs = np.empty((n, 3))
    dim_index = np.empty(n, dtype=np.int64)
    for row in rows:
        i = int(row[0])
        coeffs[i] = [float(row[1]), float(row[2]), float(row[3])]
        dim_index[i] = int(row[4])
    return QuadraticProblem(
        num_functions=n, dim=dim, coeffs=coeffs, dim_index=dim_index, seed=seed
    )


@dataclass
class ToyProblem:
    """Two linear batches, A(theta) = theta and B(theta) = 1 - theta.

    Their sum is constant, so any movement of theta trades one batch loss
    against the other; gradients are +1 and -1 regardless of theta.
    """

    def losses(self, theta: float) -> tuple[float, float]:
        return (theta, 1.0 - theta)

    def grads(self) -> tuple[float, float]:
        return (1.0, -1.0)


def toy_losses(theta: float) -> tuple[float, float]:
    """Batch losses (A, B) of the toy objective at theta."""
    return ToyProblem().losses(theta)
