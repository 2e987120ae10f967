"""
CLI commands for the sparse input localizer

This module provides a function to register every command parser with the
top-level argparse parser. Each command module exposes `register(subparsers,
parents)` and a `run(args) -> int` handler stored as the `handler` default.
"""

import argparse
from typing import List

from .analyze import register as register_analyze
from .mic import register as register_mic
from .estimate import register as register_estimate
from .sweep import register as register_sweep
from .simulate import register as register_simulate


def register_commands(subparsers, parents: List[argparse.ArgumentParser]) -> None:
    """
    Register all command parsers.

    Args:
        subparsers: Result of ArgumentParser.add_subparsers()
        parents: Parsers whose options (output, format, config, verbose) every command shares
    """
    register_analyze(subparsers, parents)
    register_mic(subparsers, parents)
    register_estimate(subparsers, parents)
    register_sweep(subparsers, parents)
    register_simulate(subparsers, parents)


__all__ = [
    "register_commands",
    "register_analyze",
    "register_mic",
    "register_estimate",
    "register_sweep",
    "register_simulate",
]
