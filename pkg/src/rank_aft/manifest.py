"""Run manifests and machine-readable output helpers"""

import hashlib
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"
CSV_FLOAT_FORMAT = "%.17g"


def calculate_file_hash(path) -> str:
    """SHA-256 of a file's content, read in chunks"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def library_versions() -> Dict[str, str]:
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'rank_aft': __version__,
    }


def jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings inf, -inf, nan"""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def to_json_text(value: Any) -> str:
    # float repr is the shortest string that parses back to the same double
    return json.dumps(jsonable(value), indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_json(value: Any, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json_text(value), encoding="utf-8")
    return path


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


@dataclass
class RunManifest:
    """What produced an output: command, settings, inputs and software versions"""

    command: str
    arguments: Dict[str, Any]
    config: Dict[str, Any]
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    versions: Dict[str, str] = field(default_factory=library_versions)
    wall_time: Optional[float] = None

    @classmethod
    def for_inputs(cls, command: str, arguments: Dict[str, Any], config: Dict[str, Any],
                   seed: int, inputs: Sequence = ()) -> "RunManifest":
        digests = {}
        for path in inputs:
            if path is None:
                continue
            digests[str(path)] = calculate_file_hash(path)
        return cls(command, arguments, config, seed, digests)

    def add_output(self, path) -> None:
        self.outputs.append(str(path))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, output) -> Path:
        """Write next to ``output`` as ``<output>.manifest.json``"""
        path = write_json(self.to_dict(), manifest_path(output))
        logger.debug(f"manifest written to {path}")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, 'r', encoding="utf-8") as f:
            values = json.load(f)
        return cls(**values)
