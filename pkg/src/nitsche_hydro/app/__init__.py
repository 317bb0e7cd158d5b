"""Benchmark setup, configuration, output and the command-line driver."""

from .config import ConfigError, RunConfig
from .problems import Problem, build_problem, init_sedov

__all__ = ["ConfigError", "RunConfig", "Problem", "build_problem", "init_sedov"]
