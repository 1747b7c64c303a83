"""
Loss Service - cross-correlation and negative-sampling objectives
Barlow Twins and HSIC losses, the weighted negative-sampling-free loss over (H|, T) and (H, T|),
the extended four-term variant, margin/logistic baselines, and the trace-form identities
that tie the correlation losses back to the TransE and DistMult score functions.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from embedding_model.service import Batch
from shared.errors import ShapeError
from shared.models import LossConfig, LossKind, ModelKind
from tensor_ops.service import cross_correlation, cross_correlation_backward


@dataclass(frozen=True)
class LossValue:
    """total = invariance_term + lambda * redundancy_term for the correlation losses"""

    total: float
    invariance_term: float
    redundancy_term: float


@dataclass
class LossGradients:
    """dL/dH, dL/dR, dL/dT, row-aligned with the batch they were computed on"""

    dH: np.ndarray
    dR: np.ndarray
    dT: np.ndarray


def correlation_loss(
    X: np.ndarray,
    Y: np.ndarray,
    lam: Optional[float] = None,
    kind: LossKind = LossKind.BT,
) -> Tuple[LossValue, np.ndarray, np.ndarray]:
    """
    Correlation loss with gradients with respect to X and Y.

    BT:   sum_i (1 - C_ii)^2 + lam * sum_{i != j} C_ij^2
    HSIC: sum_i (1 - C_ii)^2 + lam * sum_{i != j} (1 + C_ij)^2

    Args:
        X, Y: b x d matrices
        lam: Redundancy weight; defaults to 1/d
        kind: LossKind.BT or LossKind.HSIC

    Returns:
        (LossValue, dL/dX, dL/dY)
    """
    cc = cross_correlation(X, Y)
    C = cc.C
    d = C.shape[0]
    lam = 1.0 / d if lam is None else lam
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")

    diag = np.diagonal(C)
    off = ~np.eye(d, dtype=bool)
    invariance = float(((1.0 - diag) ** 2).sum())

    if LossKind(kind) is LossKind.BT:
        shifted = C
    else:
        shifted = 1.0 + C
    redundancy = float((shifted[off] ** 2).sum())

    grad_C = np.where(off, 2.0 * lam * shifted, 0.0)
    grad_C[np.diag_indices(d)] = -2.0 * (1.0 - diag)
    dX, dY = cross_correlation_backward(grad_C, cc)

    value = LossValue(total=invariance + lam * redundancy, invariance_term=invariance, redundancy_term=redundancy)
    return value, dX, dY


def bt_loss(X: np.ndarray, Y: np.ndarray, lam: Optional[float] = None) -> LossValue:
    """Barlow Twins loss value."""
    return correlation_loss(X, Y, lam, LossKind.BT)[0]


def hsic_loss(X: np.ndarray, Y: np.ndarray, lam: Optional[float] = None) -> LossValue:
    """HSIC-style loss value (off-diagonals pushed toward -1)."""
    return correlation_loss(X, Y, lam, LossKind.HSIC)[0]


def _combine(*weighted: Tuple[float, LossValue], lam: float) -> LossValue:
    invariance = sum(w * v.invariance_term for w, v in weighted)
    redundancy = sum(w * v.redundancy_term for w, v in weighted)
    return LossValue(total=invariance + lam * redundancy, invariance_term=invariance, redundancy_term=redundancy)


def nsf_loss(batch: Batch, config: LossConfig) -> Tuple[LossValue, LossGradients]:
    """
    Negative-sampling-free loss on one batch.

    total = alpha * L(H|, T) + (1 - alpha) * L(H, T|), with L the BT or HSIC loss.
    alpha = 0.5 is half the unweighted sum L(H|, T) + L(H, T|).
    With `extended_terms`, L(H, T) - L(R, H - T) is added (R and H - T taken before any whitening).

    Gradients flow through the correlation standardization, the optional whitening
    and the g1/g2 construction back to the gathered H, R, T rows.

    Raises:
        ShapeError: If the batch has fewer than 2 rows
    """
    if batch.size < 2:
        raise ShapeError(f"Correlation losses need at least 2 rows, got {batch.size}")

    inputs = batch.inputs
    d = batch.H.shape[1]
    lam = config.resolved_lambda(d)
    alpha = config.alpha

    head_value, g_hpipe, g_t = correlation_loss(inputs["H_pipe"], inputs["T"], lam, config.kind)
    tail_value, g_h, g_tpipe = correlation_loss(inputs["H"], inputs["T_pipe"], lam, config.kind)

    input_grads = {
        "H_pipe": alpha * g_hpipe,
        "T": alpha * g_t,
        "H": (1.0 - alpha) * g_h,
        "T_pipe": (1.0 - alpha) * g_tpipe,
    }
    weighted = [(alpha, head_value), (1.0 - alpha, tail_value)]
    dH = dR = dT = None

    if config.extended_terms:
        pair_value, g_h3, g_t3 = correlation_loss(inputs["H"], inputs["T"], lam, config.kind)
        input_grads["H"] = input_grads["H"] + g_h3
        input_grads["T"] = input_grads["T"] + g_t3

        rel_value, g_r4, g_diff4 = correlation_loss(batch.R, batch.H - batch.T, lam, config.kind)
        dR = -g_r4
        dH = -g_diff4
        dT = g_diff4
        weighted += [(1.0, pair_value), (-1.0, rel_value)]

    value = _combine(*weighted, lam=lam)
    dH, dR, dT = batch.backward(input_grads, dH=dH, dR=dR, dT=dT)
    return value, LossGradients(dH=dH, dR=dR, dT=dT)


# ---------------------------------------------------------------------------
# Negative-sampling baselines
# ---------------------------------------------------------------------------

def _scores_and_partials(kind: ModelKind, H, R, T):
    """Scores and their partial derivatives with respect to h, r, t."""
    if kind is ModelKind.DISTMULT:
        return ((H * R) * T).sum(axis=1), R * T, H * T, H * R

    diff = (H + R) - T
    if kind is ModelKind.TRANSE_L1:
        f = -np.abs(diff).sum(axis=1)
        g = -np.sign(diff)
    else:
        norms = np.sqrt((diff * diff).sum(axis=1))
        f = -norms
        g = -diff / np.where(norms > 0.0, norms, 1.0)[:, None]
    return f, g, g, -g


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ns_baseline_loss(
    batch: Batch,
    negatives: Batch,
    kind: ModelKind,
    margin: float = 1.0,
) -> Tuple[LossValue, LossGradients]:
    """
    Negative-sampling objective for the baselines.

    Negatives are laid out positive-major: rows [i*n, (i+1)*n) corrupt positive i.

    TransE:   sum_j max(0, margin - f(pos) + f(neg_j))
    DistMult: sum_j softplus(-f(pos)) + softplus(f(neg_j))

    Returns:
        (LossValue, LossGradients) where the gradients stack the positive rows
        followed by the negative rows

    Raises:
        ShapeError: If the negative count is not a positive multiple of the positive count
    """
    kind = ModelKind(kind)
    b, m = batch.size, negatives.size
    if b == 0 or m == 0 or m % b:
        raise ShapeError(f"{m} negatives cannot be paired with {b} positives")
    n = m // b
    owner = np.repeat(np.arange(b), n)

    f_pos, ph, pr, pt = _scores_and_partials(kind, batch.H, batch.R, batch.T)
    f_neg, nh, nr, nt = _scores_and_partials(kind, negatives.H, negatives.R, negatives.T)

    if kind is ModelKind.DISTMULT:
        pos_terms = np.logaddexp(0.0, -f_pos)
        neg_terms = np.logaddexp(0.0, f_neg)
        positive_part = float(n * pos_terms.sum())
        negative_part = float(neg_terms.sum())
        value = LossValue(total=positive_part + negative_part, invariance_term=positive_part, redundancy_term=negative_part)
        grad_pos = -n * _sigmoid(-f_pos)
        grad_neg = _sigmoid(f_neg)
    else:
        hinge = margin - f_pos[owner] + f_neg
        active = hinge > 0.0
        total = float(np.where(active, hinge, 0.0).sum())
        value = LossValue(total=total, invariance_term=total, redundancy_term=0.0)
        grad_neg = active.astype(np.float64)
        grad_pos = -np.bincount(owner, weights=grad_neg, minlength=b)

    gp = grad_pos[:, None]
    gn = grad_neg[:, None]
    grads = LossGradients(
        dH=np.vstack([gp * ph, gn * nh]),
        dR=np.vstack([gp * pr, gn * nr]),
        dT=np.vstack([gp * pt, gn * nt]),
    )
    return value, grads


# ---------------------------------------------------------------------------
# Trace-form identities (non-standardized correlations X^T Y)
# ---------------------------------------------------------------------------

def _trace_cor(X: np.ndarray, Y: np.ndarray) -> float:
    return float(np.einsum("ij,ij->", X, Y))


def transe_trace_form(batch: Batch) -> float:
    """
    TransE positive loss sum_i ||h_i + r_i - t_i||_2^2 written through correlations:

        nu + 4/3 tr[cor(R, H - T)] - 2/3 tr[cor(H|, T)] - 2/3 tr[cor(H, T|)] - 2/3 tr[cor(T, H)]

    with nu = ||H||^2 + ||R||^2 + ||T||^2, H| = H + R, T| = T - R.
    """
    H, R, T = batch.H, batch.R, batch.T
    if not (H.shape == R.shape == T.shape):
        raise ShapeError("Batch matrices must share a shape")
    H_pipe = H + R
    T_pipe = T - R
    nu = _trace_cor(H, H) + _trace_cor(R, R) + _trace_cor(T, T)
    return (
        nu
        + 4.0 / 3.0 * _trace_cor(R, H - T)
        - 2.0 / 3.0 * _trace_cor(H_pipe, T)
        - 2.0 / 3.0 * _trace_cor(H, T_pipe)
        - 2.0 / 3.0 * _trace_cor(T, H)
    )


def transe_negative_trace_form(batch: Batch) -> float:
    """Loss on negative examples in the same form (to be maximized): the sign-flipped positive form."""
    return -transe_trace_form(batch)


def distmult_trace_terms(batch: Batch) -> Tuple[float, float, float]:
    """
    The three equal traces tr[cor(H|, T)], tr[cor(T|, H)], tr[cor(R|, R)] with
    H| = H * R, T| = T * R, R| = H * T. The third is not used for training.
    """
    H, R, T = batch.H, batch.R, batch.T
    if not (H.shape == R.shape == T.shape):
        raise ShapeError("Batch matrices must share a shape")
    return (
        _trace_cor(H * R, T),
        _trace_cor(T * R, H),
        _trace_cor(H * T, R),
    )


def distmult_trace_form(batch: Batch) -> float:
    """DistMult positive score sum_i sum_j h_ij r_ij t_ij as the average of the three traces."""
    return sum(distmult_trace_terms(batch)) / 3.0


def log_loss_breakdown(value: LossValue, prefix: str = "") -> None:
    logger.debug(
        f"{prefix}loss={value.total:.6f} invariance={value.invariance_term:.6f} "
        f"redundancy={value.redundancy_term:.6f}"
    )
