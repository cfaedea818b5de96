"""Norm clipping and the clipped gradient mapping."""

import numpy as np


def _check(beta, delta):
    if not (beta > 0 and delta > 0):
        raise ValueError(f"clip needs beta > 0 and delta > 0, got {beta}, {delta}")


def is_unclipped(v, beta, delta):
    """True when ``||v|| <= beta * delta``; the boundary counts as unclipped."""
    _check(beta, delta)
    return bool(np.linalg.norm(v) <= beta * delta)


def clip(v, beta, delta):
    """``v / beta`` if ``||v|| <= beta * delta``, else ``delta * v / ||v||``."""
    _check(beta, delta)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv <= beta * delta:
        return v / beta
    return (delta / nv) * v


def gradient_mapping(grad, beta_min, delta):
    """``beta_min * clip(grad, beta_min, delta)``; equals ``grad`` on the
    unclipped branch."""
    _check(beta_min, delta)
    grad = np.asarray(grad, dtype=float)
    ng = np.linalg.norm(grad)
    if ng <= beta_min * delta:
        return grad.copy()
    return (beta_min * delta / ng) * grad
