"""
Tensor Ops - dense matrix primitives
Row gather/scatter, column standardization, cross-correlation and shuffled group whitening,
each with the backward pass the loss module needs.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from shared.config import get_settings
from shared.errors import IdRangeError, ShapeError

Matrix = np.ndarray


def as_matrix(X, name: str = "X") -> Matrix:
    """Coerce to a 2-D float64 array, checking finiteness under __debug__."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    if __debug__ and not np.isfinite(X).all():
        raise ShapeError(f"{name} contains non-finite entries")
    return X


def _check_ids(ids, n_rows: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        bad = ids[(ids < 0) | (ids >= n_rows)][0]
        raise IdRangeError(f"Row id {int(bad)} out of range for table with {n_rows} rows")
    return ids


def gather_rows(table: Matrix, ids: Sequence[int]) -> Matrix:
    """
    Stack the rows of `table` selected by `ids`.

    Raises:
        IdRangeError: If any id is outside the table
    """
    ids = _check_ids(ids, table.shape[0])
    return table[ids]


def scatter_add_rows(table_grad: Matrix, ids: Sequence[int], grads: Matrix) -> Matrix:
    """
    Accumulate `grads` rows into `table_grad` at `ids`, in place.

    Repeated ids sum, since one batch may contain the same entity several times.

    Returns:
        The same `table_grad` array
    """
    ids = _check_ids(ids, table_grad.shape[0])
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != (ids.size, table_grad.shape[1]):
        raise ShapeError(
            f"Gradient shape {grads.shape} does not match ({ids.size}, {table_grad.shape[1]})"
        )
    np.add.at(table_grad, ids, grads)
    return table_grad


# ---------------------------------------------------------------------------
# Standardization and cross-correlation
# ---------------------------------------------------------------------------

def _standardize(X: Matrix, eps: float) -> Tuple[Matrix, np.ndarray]:
    if X.shape[0] < 2:
        raise ShapeError(f"Standardization needs at least 2 rows, got {X.shape[0]}")
    centered = X - X.mean(axis=0, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=0))
    safe = np.where(norms < eps, 1.0, norms)
    S = centered / safe
    S[:, norms < eps] = 0.0
    return S, norms


def standardize_columns(X: Matrix, eps: float = None) -> Matrix:
    """
    Mean-center every column and scale it to unit L2 norm.

    Columns whose centered norm falls below `eps` become all zeros.

    Raises:
        ShapeError: If X has fewer than 2 rows
    """
    eps = get_settings().standardize_eps if eps is None else eps
    S, _ = _standardize(as_matrix(X), eps)
    return S


def standardize_columns_backward(grad_S: Matrix, S: Matrix, norms: np.ndarray, eps: float) -> Matrix:
    """Gradient of a loss through `standardize_columns` (projection formula)."""
    live = norms >= eps
    safe = np.where(live, norms, 1.0)
    # d s / d c = (I - s s^T) / ||c||
    proj = (S * grad_S).sum(axis=0, keepdims=True)
    grad_c = (grad_S - S * proj) / safe
    grad_c[:, ~live] = 0.0
    return grad_c - grad_c.mean(axis=0, keepdims=True)


@dataclass
class CrossCorrelation:
    """d x d correlation between the columns of two b x d matrices"""

    C: Matrix
    from_dims: Tuple[int, int]
    X_std: Matrix = field(repr=False)
    Y_std: Matrix = field(repr=False)
    x_norms: np.ndarray = field(repr=False)
    y_norms: np.ndarray = field(repr=False)
    eps: float = field(repr=False, default=1e-12)


def cross_correlation(X: Matrix, Y: Matrix, eps: float = None) -> CrossCorrelation:
    """
    Empirical cross-correlation C = std(X)^T std(Y).

    Raises:
        ShapeError: If shapes differ or there are fewer than 2 rows
    """
    eps = get_settings().standardize_eps if eps is None else eps
    X = as_matrix(X, "X")
    Y = as_matrix(Y, "Y")
    if X.shape != Y.shape:
        raise ShapeError(f"Shape mismatch: {X.shape} vs {Y.shape}")

    X_std, x_norms = _standardize(X, eps)
    Y_std, y_norms = _standardize(Y, eps)
    return CrossCorrelation(
        C=X_std.T @ Y_std,
        from_dims=X.shape,
        X_std=X_std,
        Y_std=Y_std,
        x_norms=x_norms,
        y_norms=y_norms,
        eps=eps,
    )


def cross_correlation_backward(grad_C: Matrix, cc: CrossCorrelation) -> Tuple[Matrix, Matrix]:
    """Gradients with respect to the raw X and Y given dL/dC."""
    grad_Xs = cc.Y_std @ grad_C.T
    grad_Ys = cc.X_std @ grad_C
    dX = standardize_columns_backward(grad_Xs, cc.X_std, cc.x_norms, cc.eps)
    dY = standardize_columns_backward(grad_Ys, cc.Y_std, cc.y_norms, cc.eps)
    return dX, dY


# ---------------------------------------------------------------------------
# Shuffled decorrelated batch normalization
# ---------------------------------------------------------------------------

@dataclass
class _GroupWhitening:
    columns: np.ndarray
    centered: Matrix
    eigvecs: Matrix
    eigvals: np.ndarray
    whitening: Matrix


@dataclass
class ShuffleState:
    """Channel permutation and per-group whitening cache of one forward pass"""

    permutation: np.ndarray
    group_size: int
    eigen_floor: float
    groups: List[_GroupWhitening] = field(default_factory=list, repr=False)


def _inverse_sqrt_derivative_kernel(eigvals: np.ndarray, floor: float) -> np.ndarray:
    """
    Divided differences of f(l) = max(l, floor)^(-1/2), for the matrix-function derivative.
    """
    clamped = np.maximum(eigvals, floor)
    f = clamped ** -0.5
    fprime = np.where(eigvals > floor, -0.5 * clamped ** -1.5, 0.0)

    diff = eigvals[:, None] - eigvals[None, :]
    close = np.abs(diff) <= 1e-10 * np.maximum(1.0, np.abs(eigvals)[:, None])
    safe = np.where(close, 1.0, diff)
    K = (f[:, None] - f[None, :]) / safe
    mean_fprime = 0.5 * (fprime[:, None] + fprime[None, :])
    return np.where(close, mean_fprime, K)


def shuffled_dbn(
    X: Matrix,
    group_size: int = None,
    rng: Optional[np.random.Generator] = None,
    permutation: Optional[Sequence[int]] = None,
    eigen_floor: float = None,
) -> Tuple[Matrix, ShuffleState]:
    """
    Shuffle channels, ZCA-whiten consecutive groups along the batch, then unshuffle.

    Scaling convention: each group is whitened to identity covariance with the
    1/b estimator, so output columns have unit variance (their L2 norm is sqrt(b),
    i.e. sqrt(b) times the unit-norm output of `standardize_columns`).

    Args:
        X: b x d input
        group_size: Channels per group; the last group may be smaller
        rng: Generator drawing the channel permutation
        permutation: Explicit permutation, overriding rng (used to replay a state)
        eigen_floor: Lower clamp for covariance eigenvalues

    Returns:
        (whitened matrix, ShuffleState for the backward pass)
    """
    settings = get_settings()
    group_size = settings.sdbn_group_size if group_size is None else group_size
    eigen_floor = settings.sdbn_eigen_floor if eigen_floor is None else eigen_floor

    X = as_matrix(X)
    b, d = X.shape
    if b < 2:
        raise ShapeError(f"Whitening needs at least 2 rows, got {b}")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")

    if permutation is not None:
        perm = np.asarray(permutation, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(d)):
            raise ValueError(f"permutation is not a permutation of {d} channels")
    elif rng is not None:
        perm = rng.permutation(d)
    else:
        raise ValueError("shuffled_dbn needs an rng or an explicit permutation")

    state = ShuffleState(permutation=perm, group_size=group_size, eigen_floor=eigen_floor)
    out = np.empty_like(X)

    for start in range(0, d, group_size):
        columns = perm[start:start + group_size]
        block = X[:, columns]
        centered = block - block.mean(axis=0, keepdims=True)
        cov = centered.T @ centered / b
        eigvals, eigvecs = np.linalg.eigh(cov)
        inv_sqrt = np.maximum(eigvals, eigen_floor) ** -0.5
        whitening = (eigvecs * inv_sqrt) @ eigvecs.T
        out[:, columns] = centered @ whitening
        state.groups.append(_GroupWhitening(columns, centered, eigvecs, eigvals, whitening))

    if np.any(np.concatenate([g.eigvals for g in state.groups]) < eigen_floor):
        logger.debug("shuffled_dbn: clamped covariance eigenvalues below floor")

    return out, state


def shuffled_dbn_backward(grad_out: Matrix, state: ShuffleState) -> Matrix:
    """Gradient with respect to the input of `shuffled_dbn`, replaying `state`."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    grad_in = np.empty_like(grad_out)
    b = grad_out.shape[0]

    for group in state.groups:
        G = grad_out[:, group.columns]
        U = group.eigvecs
        grad_centered = G @ group.whitening
        grad_W = group.centered.T @ G
        K = _inverse_sqrt_derivative_kernel(group.eigvals, state.eigen_floor)
        grad_cov = U @ (K * (U.T @ grad_W @ U)) @ U.T
        grad_centered += group.centered @ (grad_cov + grad_cov.T) / b
        grad_in[:, group.columns] = grad_centered - grad_centered.mean(axis=0, keepdims=True)

    return grad_in
