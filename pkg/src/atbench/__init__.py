"""Desk-scale multi-task vision-language benchmark with a prompt-routed unified decoder."""

from atbench.tokenization import TaskKind

__all__ = ["TaskKind"]
__version__ = "0.1.0"
