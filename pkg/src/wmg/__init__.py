"""Weighted Markovian graphs: passage moments, connectivity summaries,
gradients, and constrained policy optimization."""

from .graph import (
    GraphFormatError,
    GraphValidationError,
    ValidationReport,
    WeightTag,
    WeightedMarkovGraph,
    load_graph,
    make_graph,
    save_graph,
    uniform_mixing_matrix,
    validate,
)
from .chain import (
    ChainAnalysis,
    ReducibleChainError,
    SingularFundamentalError,
    analyze_chain,
    stationary_of,
)
from .passage import (
    MonteCarloResult,
    PassageMoments,
    mean_passage_lengths,
    monte_carlo_passage,
    passage_moments,
    passage_variance,
    series_passage_column,
    taboo_passage_column,
    weighted_mean_passage,
    weighted_second_moment,
)
from .kemeny import KemenySummary, graph_resistance, kemeny_constants, surprise_index

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
