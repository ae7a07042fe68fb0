"""Numerical lab for the mean-field equation of excitatory LIF networks."""

from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import ModelParams, RegimeReport, classify, validate, uniqueness_threshold  # noqa: F401
