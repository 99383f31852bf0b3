"""Selective state-space language models with canonical-form state matrices.

Modules by layer: :mod:`numerics` (hand-written linear algebra),
:mod:`ssm` (parameterisations, realisations, rank tests), :mod:`discretize`
(zero-order hold), :mod:`scan` (recurrent and convolutional views),
:mod:`model` / :mod:`train` (byte-level language model) and :mod:`cli`.
"""

from .config import Config, load_config
from .model import LmModel, param_census
from .ssm import CcfParam, DenseHippo, DiagParam, DiagStable, OcfParam, StateSpace

__version__ = "0.1.0"

__all__ = [
    "CcfParam",
    "Config",
    "DenseHippo",
    "DiagParam",
    "DiagStable",
    "LmModel",
    "OcfParam",
    "StateSpace",
    "load_config",
    "param_census",
]
