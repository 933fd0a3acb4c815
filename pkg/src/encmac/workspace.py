"""Output directory handling with atomic artifact writes."""

import errno
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict

logger = logging.getLogger(__name__)


def dumps_json(data: Any) -> str:
    """Deterministic JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


class Workspace:
    """Writes experiment artifacts into an existing output directory."""

    def __init__(self, out_dir):
        """Initialize the workspace.

        Args:
            out_dir: Output directory; it must already exist

        Raises:
            FileNotFoundError: If ``out_dir`` is not a directory
        """
        self.out_dir = Path(out_dir)
        if not self.out_dir.is_dir():
            logger.error(f"Output directory missing: {self.out_dir}")
            raise FileNotFoundError(errno.ENOENT, "Output directory does not exist", str(self.out_dir))

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_text(self, name: str, text: str) -> Path:
        """Write a file atomically (temp file in the same directory, then rename)."""
        target = self.path(name)
        fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="\n") as f:
                f.write(text)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.info(f"Wrote {target}")
        return target

    def write_json(self, name: str, data: Any) -> Path:
        return self.write_text(name, dumps_json(data))

    @staticmethod
    def read_json(path) -> Dict[str, Any]:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(errno.ENOENT, "No such file", str(path))
        return json.loads(path.read_text())
