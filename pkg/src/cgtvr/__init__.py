"""Clipped gradient tracking with variance reduction for decentralized
finite-sum problems whose smoothness varies over the domain."""

from .clipping import clip, gradient_mapping, is_unclipped
from .errors import (ConfigurationError, DegenerateNetworkError, DivergenceError,
                     DomainError, GenerationError, IngestionError, NumericError)
from .network import MixingMatrix, build_topology, metropolis_weights, spectral_constants
from .optimizers import R0Rule, RunConfig, init_run, run
from .smoothness import Ball, combine, estimate_r0, eval_local_L, gamma_from_eta

__version__ = "0.1.0"
