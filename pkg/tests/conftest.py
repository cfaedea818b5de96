import math

import numpy as np
import pytest

from cgtvr.network import MixingMatrix
from cgtvr.problems import FiniteSumProblem
from cgtvr.smoothness import Constant


class ShiftedSquares(FiniteSumProblem):
    """Components ``0.5 * ||x - a_ij||^2``; gradients ``x - a_ij``."""

    name = "shifted_squares"

    def __init__(self, anchors, L=1.0):
        anchors = [np.atleast_2d(np.asarray(a, dtype=float)) for a in anchors]
        super().__init__([a.shape[0] for a in anchors], anchors[0].shape[1])
        self.anchors = anchors
        self.L = L

    def component_values(self, i, idx, x):
        r = x - self.anchors[i][idx]
        return 0.5 * np.sum(r * r, axis=1)

    def batch_gradient(self, i, idx, x):
        return (x - self.anchors[i][idx]).mean(axis=0)

    def smoothness_model(self, i):
        return Constant(self.L)


def single_agent():
    return MixingMatrix(np.ones((1, 1)), 0.0, 2.0 * math.sqrt(2.0))


@pytest.fixture
def toy_problem():
    rng = np.random.default_rng(7)
    return ShiftedSquares([rng.normal(size=(9, 3)) for _ in range(4)])
