"""Artifact storage with provenance stamps and a checksum manifest."""
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

from errors import DataError, ProvenanceError
from metrics import record_artifact

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CSV_PREFIX = "# gazelab "


def _float_format(value: float) -> str:
    return repr(float(value))


class ArtifactStore:
    """Artifact files under one output directory, all stamped with one config hash."""

    def __init__(self, output_dir: str, config_hash: str, tool_version: str):
        self.root = Path(output_dir)
        self.config_hash = config_hash
        self.tool_version = tool_version

    @property
    def provenance(self) -> Dict[str, str]:
        return {"tool": "gazelab", "tool_version": self.tool_version, "config_hash": self.config_hash}

    def path(self, name: str) -> Path:
        return self.root / name

    def _header(self) -> str:
        return f"{CSV_PREFIX}{self.tool_version} config={self.config_hash}\n"

    def _write(self, name: str, data: bytes, kind: str) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        self._update_manifest(name, hashlib.sha256(data).hexdigest())
        record_artifact(kind)
        logger.info("Wrote artifact", extra={"path": str(target), "config_hash": self.config_hash})
        return target

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        """
        Write a table with the provenance comment as its first line.

        Floats are written with ``repr`` precision so values survive a round
        trip and reruns are byte-identical.
        """
        buffer = io.StringIO()
        buffer.write(self._header())
        frame.to_csv(buffer, index=False, lineterminator="\n", float_format=_float_format)
        return self._write(name, buffer.getvalue().encode(), "csv")

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        document = {"provenance": self.provenance, **payload}
        text = json.dumps(document, sort_keys=True, indent=2, default=_json_default) + "\n"
        return self._write(name, text.encode(), "json")

    def write_bytes(self, name: str, data: bytes) -> Path:
        """Raw artifact (recordings); provenance travels in the manifest only."""
        return self._write(name, data, "raw")

    def read_csv(self, name: str, **kwargs: Any) -> pd.DataFrame:
        target = self.path(name)
        try:
            with target.open() as fh:
                header = fh.readline()
                self._check_header(header, target)
                return pd.read_csv(fh, **{"float_precision": "round_trip", **kwargs})
        except FileNotFoundError:
            raise DataError(f"artifact not found: {target}")

    def read_json(self, name: str) -> Dict[str, Any]:
        target = self.path(name)
        try:
            document = json.loads(target.read_text())
        except FileNotFoundError:
            raise DataError(f"artifact not found: {target}")
        except json.JSONDecodeError as e:
            raise DataError(f"{target}: invalid JSON at line {e.lineno}: {e.msg}")
        found = (document.get("provenance") or {}).get("config_hash")
        if found != self.config_hash:
            raise ProvenanceError(f"{target}: written under config {found}, current config is {self.config_hash}")
        return document

    def _check_header(self, header: str, target: Path) -> None:
        if not header.startswith(CSV_PREFIX):
            raise ProvenanceError(f"{target}: missing provenance header")
        found: Optional[str] = None
        for token in header.split():
            if token.startswith("config="):
                found = token[len("config="):]
        if found != self.config_hash:
            raise ProvenanceError(f"{target}: written under config {found}, current config is {self.config_hash}")

    def manifest(self) -> Dict[str, Any]:
        target = self.path(MANIFEST)
        if not target.exists():
            return {"provenance": self.provenance, "artifacts": {}}
        return json.loads(target.read_text())

    def _update_manifest(self, name: str, digest: str) -> None:
        manifest = self.manifest()
        manifest["provenance"] = self.provenance
        manifest.setdefault("artifacts", {})[name] = {"sha256": digest}
        text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        self.path(MANIFEST).write_text(text)


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
