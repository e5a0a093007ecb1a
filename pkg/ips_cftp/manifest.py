import json
import platform
import time
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Any
from typing import Dict
from typing import List
from typing import Optional

import numpy as np
import scipy

from ips_cftp.settings import Caps
from ips_cftp.version import __version__


def package_versions() -> Dict[str, str]:
    try:
        from importlib.metadata import version
        zipkin_version = version('py_zipkin')
    except Exception:  # pragma: no cover
        zipkin_version = 'unknown'
    return {
        'ips_cftp': __version__,
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'py_zipkin': zipkin_version,
        'python': platform.python_version(),
    }


@dataclass
class RunManifest:
    """Everything needed to re-run a command and get the same output.

    Only `timing` changes between two runs of the same manifest.
    """
    command: str
    argv: List[str]
    model_path: Optional[str] = None
    model_digest: Optional[str] = None
    seed_schedule: Dict[str, Any] = dc_field(default_factory=dict)
    caps: Dict[str, int] = dc_field(default_factory=dict)
    settings: Dict[str, Any] = dc_field(default_factory=dict)
    versions: Dict[str, str] = dc_field(default_factory=package_versions)
    timing: Dict[str, float] = dc_field(default_factory=dict)

    def set_caps(self, caps: Caps) -> None:
        self.caps = dict(caps._asdict())

    def start(self) -> None:
        self.timing['started'] = time.time()
        self._clock = time.perf_counter()

    def stop(self) -> None:
        self.timing['elapsed'] = time.perf_counter() - self._clock

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def manifest_path(out: str) -> str:
    return f'{out}.manifest.json'


def write_manifest(out: str, manifest: RunManifest) -> str:
    """Writes `<out>.manifest.json` and returns its path."""
    path = manifest_path(out)
    with open(path, 'w') as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True, default=str)
        f.write('\n')
    return path


def read_manifest(path: str) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)
