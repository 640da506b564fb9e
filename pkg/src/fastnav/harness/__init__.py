"""Benchmark runner, analyses and command-line interface."""

from .analysis import analyze_pareto, analyze_recovery, run_fusion_ablation
from .config import ConfigError, DecoderConfig, RunConfig, load_config, parse_config
from .runner import BenchmarkResult, World, build_world, run_benchmark, write_benchmark

__all__ = [
    "BenchmarkResult",
    "ConfigError",
    "DecoderConfig",
    "RunConfig",
    "World",
    "analyze_pareto",
    "analyze_recovery",
    "build_world",
    "load_config",
    "parse_config",
    "run_benchmark",
    "run_fusion_ablation",
    "write_benchmark",
]
