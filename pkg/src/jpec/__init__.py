"""Competitor retrieval from supply-chain knowledge graphs.

A directed-GCN autoencoder over the supply graph, trained with a
Laplacian-eigenmap objective on known and sampled competitor pairs.
"""

from .errors import (DivergenceError, FormatError, GraphValidationError, InfeasibleError,
                     JpecError, NormalizationError, PairError, ShapeError)
from .evalkit import (MetricReport, RankedList, SplitResult, evaluate, hits_at_k,
                      make_regular_split, make_zero_shot_split, mean_average_precision, mrr,
                      rank_candidates)
from .graph import CompanyGraph, LabeledPair, competitor_pair_sets, supply_adjacency, validate
from .linalg import SparseMatrix, spmm
from .model import JpecConfig, JpecModel, TrainReport, embed, init_model, train
from .pipeline import PlantedRun, run_planted
from .sampling import NegativeSampleSpec, sample_negatives
from .synth import SynthSpec, generate

__version__ = "0.1.0"
