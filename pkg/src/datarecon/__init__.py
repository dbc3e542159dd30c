"""Reconstruct training inputs from the weights of small trained classifiers.

Two attacks are provided: a bilevel solve with implicit differentiation
(:func:`datarecon.bilevel.reconstruct`) and minimisation of the squared
training-gradient norm (:func:`datarecon.gradpen.reconstruct_gradpen`).
"""

__version__ = "0.1.0"

from .bilevel import ReconConfig, ReconResult, reconstruct
from .gradpen import GradPenConfig, reconstruct_gradpen
from .model import Dataset, LossSpec, ModelSpec, ParamVector
from .trainer import TrainConfig, train

__all__ = ["Dataset", "GradPenConfig", "LossSpec", "ModelSpec", "ParamVector", "ReconConfig",
           "ReconResult", "TrainConfig", "reconstruct", "reconstruct_gradpen", "train"]
