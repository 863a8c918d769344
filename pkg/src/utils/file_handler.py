"""
Result storage for simulation outputs.

CSV tables are written by pandas with a fixed float format and JSON with
sorted keys, so a rerun with the same manifest produces identical bytes.
"""

import asyncio
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

from .config import settings

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class ResultStorage:
    """
    Output directory for one run (or the service's result directory).

    Every run directory gets a manifest.json next to its outputs.
    """

    def __init__(self, output_dir: Optional[Union[str, Path]] = None):
        """
        Initialize result storage.

        Args:
            output_dir: Target directory (defaults to settings.OUTPUT_DIR).
        """
        self.output_dir = Path(output_dir or settings.OUTPUT_DIR)
        os.makedirs(self.output_dir, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        """
        Write a table with the fixed float format.

        Args:
            name: File name inside the output directory.
            frame: Table to write.

        Returns:
            Path: Written file.
        """
        target = self.path(name)
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.debug(f"Wrote {len(frame)} rows to {target}")
        return target

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        """Write a JSON document with sorted keys."""
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        logger.debug(f"Wrote {target}")
        return target

    def write_manifest(self, manifest: Any) -> Path:
        """Write manifest.json from a pydantic model or a plain dict."""
        payload = manifest.model_dump(mode="json") if hasattr(manifest, "model_dump") else dict(manifest)
        return self.write_json("manifest.json", payload)

    def read_json(self, name: str) -> Optional[Dict[str, Any]]:
        target = self.path(name)
        if not target.exists():
            return None
        with open(target, "r", encoding="utf-8") as f:
            return json.load(f)

    async def get_result(self, task_id: str) -> Optional[Dict[str, Any]]:
        """
        Get a task result by task ID.

        Returns:
            Optional[dict]: Result or None if not found.
        """
        try:
            return await asyncio.get_event_loop().run_in_executor(
                None, lambda: self.read_json(f"{task_id}.json")
            )
        except Exception as e:
            logger.error(f"Error reading result {task_id}: {e}")
            return None
