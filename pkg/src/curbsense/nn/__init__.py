"""Small reverse-mode engine for 1-D convolutional networks."""

from curbsense.nn.graph import ModelGraph, NonFiniteError, Sequential, backprop
from curbsense.nn.layers import (
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    MaxPool1d,
    ReLU,
    Reparameterize,
    Reshape,
    ShapeError,
    TransposedConv1d,
    Upsample1d,
)
from curbsense.nn.optim import AdamState, adam_step
from curbsense.nn.store import WeightStoreError, load_model, save_model

__all__ = [
    "AdamState",
    "Conv1d",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool1d",
    "ModelGraph",
    "NonFiniteError",
    "ReLU",
    "Reparameterize",
    "Reshape",
    "Sequential",
    "ShapeError",
    "TransposedConv1d",
    "Upsample1d",
    "WeightStoreError",
    "adam_step",
    "backprop",
    "load_model",
    "save_model",
]
