"""Minimal differentiable substrate used by the policies."""
from .tensor import (NonFiniteError, ShapeError, Tensor, concat, dropout, embedding_lookup, exp,
                     layer_norm, log, log_softmax, mean_over_axis, precision, relu, softmax,
                     softmax_rows, tabs)
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .layers import (DecoderLayer, DropoutRNG, EncoderLayer, FeedForward, LayerNorm, Linear,
                     MultiHeadAttention, linear)
from .posenc import positional_embeddings, sinusoidal_2d
from .gradcheck import check_parameters, finite_difference_check, relative_error
from .optim import AdamW

__all__ = [
    "AdamW", "DecoderLayer", "DropoutRNG", "EncoderLayer", "FeedForward", "LayerNorm", "Linear",
    "MultiHeadAttention", "NonFiniteError", "ParameterStore", "ShapeError", "Tensor",
    "check_parameters", "concat", "dropout", "embedding_lookup", "exp", "finite_difference_check",
    "layer_norm", "linear", "load_checkpoint", "log", "log_softmax", "mean_over_axis",
    "positional_embeddings", "precision", "relative_error", "relu", "save_checkpoint",
    "sinusoidal_2d", "softmax", "softmax_rows", "tabs",
]
