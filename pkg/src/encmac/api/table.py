"""Truth-table export."""

import logging
from typing import Any, Dict

from ..config import QuantSection
from ..quant import build_product_table, product_table_csv
from ..workspace import Workspace

logger = logging.getLogger(__name__)


def cmd_table(workspace: Workspace, quant: QuantSection, name: str = "table.csv") -> Dict[str, Any]:
    """Write the product truth table as CSV.

    Args:
        workspace: Output workspace
        quant: Operand schemes
        name: File name inside the workspace

    Returns:
        Summary with the written path, row count and RMS product value

    Raises:
        UnsupportedSizeError: If the operand width exceeds 8 bits
    """
    s1, s2 = quant.schemes()
    table = build_product_table(s1, s2)
    path = workspace.write_text(name, product_table_csv(table))
    return {
        "path": str(path),
        "rows": len(table),
        "operand_width": table.operand_width,
        "rms": table.rms,
    }
