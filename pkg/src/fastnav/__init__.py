"""Frontier-aware search with backtracking for instruction-conditioned graph navigation."""

from .fusion import LOCAL_FUSIONS, GlobalFusion, LocalFusion
from .nav_graph import Episode, EpisodeParams, GraphParams, NavGraph, generate_episode, generate_graph
from .search import SearchConfig, beam_navigate, fast_navigate, greedy_navigate, random_navigate
from .signals import STOP, Action, ScorerParams, SyntheticScorer, perfect_scorer

__version__ = "0.1.0"
