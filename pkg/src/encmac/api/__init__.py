"""Command-level operations shared by the CLI and the MCP server."""

from .table import cmd_table
from .search import cmd_search, cmd_sweep
from .simulate import cmd_simulate
from .train import cmd_eval, cmd_finetune, cmd_nonuniform, cmd_sweep_accuracy

__all__ = [
    # Truth tables
    "cmd_table",
    # Encoding search
    "cmd_search",
    "cmd_sweep",
    # Array simulation
    "cmd_simulate",
    # Toy-network experiments
    "cmd_eval",
    "cmd_finetune",
    "cmd_nonuniform",
    "cmd_sweep_accuracy",
]
