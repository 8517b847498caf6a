"""Population-correlation domain adaptation with a searched bottleneck.

Features in, adapted classifier out: :mod:`dampc.similarity` holds the
measures, :mod:`dampc.training` the objective, fixed training and search.
"""

from .numerics import Rng, matmul, sample_categorical, softmax_rows
from .similarity import (CMD, CORAL, KL_GAUSS, MMD_LINEAR, MMD_RBF, PC, PROXY_A, SimilarityKind,
                         SimilaritySignal, measure, population_correlation, proxy_a_distance)
from .search_space import (ArchitectureChoice, CellChoice, FCSize, InputFrom, SkipFrom, SuperGraph,
                           count_configurations, decode_decisions, encode_decisions, instantiate_child,
                           parse_arch, serialize_arch)
from .controller import ControllerParams, controller_greedy, controller_sample, reinforce_update
from .data import LabeledSet, UnlabeledSet, gen_shifted_blobs, gen_two_moons, shifted_blobs_task
from .training import TrainConfig, dampc_loss, evaluate, lr_at, search, train_fixed

__all__ = [
    "Rng", "matmul", "sample_categorical", "softmax_rows",
    "CMD", "CORAL", "KL_GAUSS", "MMD_LINEAR", "MMD_RBF", "PC", "PROXY_A", "SimilarityKind", "SimilaritySignal",
    "measure", "population_correlation", "proxy_a_distance",
    "ArchitectureChoice", "CellChoice", "FCSize", "InputFrom", "SkipFrom", "SuperGraph", "count_configurations",
    "decode_decisions", "encode_decisions", "instantiate_child", "parse_arch", "serialize_arch",
    "ControllerParams", "controller_greedy", "controller_sample", "reinforce_update",
    "LabeledSet", "UnlabeledSet", "gen_shifted_blobs", "gen_two_moons", "shifted_blobs_task",
    "TrainConfig", "dampc_loss", "evaluate", "lr_at", "search", "train_fixed",
]

__version__ = "0.1.0"
