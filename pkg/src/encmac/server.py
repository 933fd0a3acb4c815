#!/usr/bin/env python3
"""encmac MCP Server - exposes table, search, simulation and training tools over stdio."""

import logging
import os
from typing import List, Optional

from dotenv import load_dotenv
from fastmcp import FastMCP

from .api import cmd_eval, cmd_finetune, cmd_search, cmd_simulate, cmd_table
from .config import ExperimentConfig, apply_overrides, env_defaults
from .workspace import Workspace

load_dotenv()

# stderr only; stdout carries the protocol
logging.basicConfig(
    level=os.getenv("ENCMAC_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

mcp = FastMCP("encmac MCP Server")

_workspace = None


def get_workspace() -> Workspace:
    """Get or create the output workspace (lazy initialization).

    Returns:
        Workspace: Writes into ENCMAC_OUT (default: current directory)

    Raises:
        FileNotFoundError: If the output directory does not exist
    """
    global _workspace

    if _workspace is None:
        out = os.getenv("ENCMAC_OUT", ".")
        logger.info(f"=== OPENING WORKSPACE {out} ===")
        _workspace = Workspace(out)

    return _workspace


def get_config(**overrides) -> ExperimentConfig:
    """Environment defaults with per-call overrides (dotted keys, None skipped)."""
    return apply_overrides(env_defaults(), overrides)


# ═══════════════════════════════════════════════════════════════════════
# MCP Tool Definitions
# ═══════════════════════════════════════════════════════════════════════


@mcp.tool()
async def build_table_tool(
    width: int = 2, kind: str = "uniform-signed", codebook: Optional[List[float]] = None
):
    """Write the product truth table CSV for a quantization scheme.

    Args:
        width: Operand width W in bits (1..8)
        kind: uniform-signed or nonuniform-codebook
        codebook: 2^W levels, required for nonuniform-codebook
    """
    cfg = get_config(**{"quant.width": width, "quant.kind": kind, "quant.codebook": codebook})
    return cmd_table(get_workspace(), cfg.quant)


@mcp.tool()
async def search_tool(
    width: int = 8,
    samples: int = 10000,
    target_rmse: float = None,
    output_width: int = None,
    min_width: int = None,
    max_width: int = None,
    seed: int = None,
):
    """Search an encoding; writes encoding.json and the RMSE trace CSVs.

    Args:
        width: Operand width W in bits
        samples: Max circuits sampled per output width (default: 10000)
        target_rmse: Absolute target; default is 37.5% of the table RMS
        output_width: Sample only this output width instead of binary search
        min_width: Lower output-width bound
        max_width: Upper output-width bound
        seed: Master seed
    """
    cfg = get_config(
        **{
            "seed": seed,
            "quant.width": width,
            "search.max_samples": samples,
            "search.target_rmse": target_rmse,
            "search.output_width": output_width,
            "search.min_width": min_width,
            "search.max_width": max_width,
        }
    )
    return cmd_search(get_workspace(), cfg)


@mcp.tool()
async def simulate_tool(encoding_path: str, array_size: int = 16, matrices: int = 1, seed: int = None):
    """Simulate the encoded N x N array against the systolic baseline.

    Args:
        encoding_path: Path to an encoding JSON
        array_size: Array size N (default: 16)
        matrices: Input matrices streamed back to back (default: 1)
        seed: Master seed for the random operands
    """
    cfg = get_config(**{"seed": seed, "array.size": array_size, "array.matrices": matrices})
    return cmd_simulate(get_workspace(), cfg, encoding_path)


@mcp.tool()
async def evaluate_tool(encoding_path: str = None, dataset: str = None, seed: int = None):
    """Exact and encoded accuracy of the toy network.

    Args:
        encoding_path: Optional encoding JSON to evaluate with
        dataset: Optional CSV dataset (feature...,label)
        seed: Master seed
    """
    cfg = get_config(**{"seed": seed, "train.dataset": dataset})
    return cmd_eval(get_workspace(), cfg, encoding_path)


@mcp.tool()
async def finetune_tool(encoding_path: str, epochs: int = 20, lr: float = 1e-3, seed: int = None):
    """Fine-tune the position weights of an encoding on the toy network.

    Args:
        encoding_path: Encoding JSON to start from
        epochs: Training epochs (default: 20)
        lr: Position-weight learning rate (default: 1e-3)
        seed: Master seed
    """
    cfg = get_config(**{"seed": seed, "train.epochs": epochs, "train.lr": lr})
    return cmd_finetune(get_workspace(), cfg, encoding_path)


# ═══════════════════════════════════════════════════════════════════════
# Main Entry Point
# ═══════════════════════════════════════════════════════════════════════


def main():
    """Main entry point for the encmac MCP server (stdio)."""
    logger.info("Starting encmac MCP server")
    get_workspace()
    mcp.run()


if __name__ == "__main__":
    main()
