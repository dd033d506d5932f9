"""Numerical tractor calculus: ambient metrics, codimension-two immersions and parallel tractors."""

__version__ = "0.1.0"

from .ambient import (AmbientMetric, AmbientPoint, ExprFamily, SchoutenFamily, gamma_schouten,
                      identity_family, normalization_check)
from .chart import (MetricChart, ScalarField, curvature, curvature_fd_oracle, flat, hyperbolic,
                    perturbed, sphere)
from .errors import *  # noqa: F401,F403
from .expr import differentiate, evaluate, lambdify, parse, render, simplify
from .immersion import Immersion
from .tractor import (CurvePath, PiecewisePath, TractorBundle, TractorSection, TractorVector,
                      einstein_scale_tractor, flat_parallel_section)
