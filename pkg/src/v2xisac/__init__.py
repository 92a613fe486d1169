"""Roadside full-duplex ISAC link simulator.

A vehicle detects the next vehicle ahead with a forward radar while
receiving from the nearest roadside unit, disturbed by oncoming traffic.
The package evaluates univariate and joint radar/communication metrics
under three frameworks of increasing fidelity (abstract line model,
enriched Monte-Carlo model, simplified ray tracer) and fits the abstract
models' parameters back from traced data.
"""

__version__ = "0.1.0"

from .propagation import FadingSpec, LinkPropagation, PathLossParams
from .scene import ConfigurationError, LineScene, RtScene, SystemConfig
from .engines import LinkSample, SampleSet, run_batch
from .metrics import MetricEstimate, ThresholdGrid, UnsupportedModelError

__all__ = [
    "__version__",
    "FadingSpec", "LinkPropagation", "PathLossParams",
    "ConfigurationError", "LineScene", "RtScene", "SystemConfig",
    "LinkSample", "SampleSet", "run_batch",
    "MetricEstimate", "ThresholdGrid", "UnsupportedModelError",
]
