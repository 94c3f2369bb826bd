"""Softmax losses with analytic gradients w.r.t. the pre-softmax activations.

All reductions are done in float64 regardless of the activation dtype.
"""
import numpy as np
from scipy.special import log_softmax, xlogy


def softmax(a, temperature=1.0):
    z = np.asarray(a, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(activations, labels):
    """Mean cross-entropy of integer ``labels``; returns ``(loss, grad)``."""
    a = np.asarray(activations, dtype=np.float64)
    n = len(a)
    logp = log_softmax(a, axis=1)
    loss = -logp[np.arange(n), labels].sum() / n
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def kd_loss(student_acts, teacher_probs, hard_labels, temperature, balance=1.0, divergence="kl", scale_by_t2=True):
    """Hard-label cross-entropy plus ``balance`` times the distillation term.

    The distillation term compares the (already softened) teacher distribution
    with ``softmax(student / T)``.  ``divergence`` is ``"kl"`` or ``"ce"``
    (same gradient, offset by the teacher entropy).  With ``scale_by_t2`` the
    term is multiplied by ``T**2`` to keep gradient magnitudes comparable
    across temperatures.  Returns ``(loss, grad)``.
    """
    ce, grad = cross_entropy(student_acts, hard_labels)
    if balance == 0:
        return ce, grad
    a = np.asarray(student_acts, dtype=np.float64)
    p = np.asarray(teacher_probs, dtype=np.float64)
    n = len(a)
    T = float(temperature)
    logq = log_softmax(a / T, axis=1)
    if divergence == "kl":
        term = (xlogy(p, p) - p * logq).sum() / n
    elif divergence == "ce":
        term = -(p * logq).sum() / n
    else:
        raise ValueError(f"unknown divergence {divergence!r}")
    factor = T * T if scale_by_t2 else 1.0
    # d/da of -sum_j p_j log softmax(a/T)_j is (q * sum_j p_j - p) / T
    dterm = (np.exp(logq) * p.sum(axis=1, keepdims=True) - p) / (T * n)
    return float(ce + balance * factor * term), grad + balance * factor * dterm
