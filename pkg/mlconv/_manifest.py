# SPDX-License-Identifier: MIT

import logging
import shlex
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from ._constants import __version__
from ._exceptions import MlconvError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.txt'


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to re-run a command, serialized as ``key=value``
    lines next to the run's outputs."""
    command: str
    argv: Tuple[str, ...]
    config_path: Optional[str] = None
    dataset_paths: Tuple[str, ...] = ()
    seed: Optional[int] = None
    output_dir: Optional[str] = None
    settings: Tuple[Tuple[str, str], ...] = field(default=())

    def items(self) -> List[Tuple[str, str]]:
        pairs = [('mlconv_version', __version__),
                 ('command', self.command),
                 ('argv', shlex.join(self.argv)),
                 ('config_path', self.config_path or ''),
                 ('dataset_paths', shlex.join(self.dataset_paths)),
                 ('seed', '' if self.seed is None else str(self.seed)),
                 ('output_dir', self.output_dir or '')]
        pairs.extend((f"train.{k}", v) for k, v in self.settings)
        return pairs

    def to_text(self) -> str:
        for key, value in self.items():
            if '\n' in value:
                raise MlconvError(f"manifest value of {key!r} spans lines")
        return "".join(f"{key}={value}\n" for key, value in self.items())


def write_manifest(manifest: RunManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    path.write_text(manifest.to_text(), encoding='utf-8')
    logger.debug("manifest written to %s", path)
    return path


def parse_manifest(text: str) -> Dict[str, str]:
    entries: Dict[str, str] = OrderedDict()
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise MlconvError(f"manifest line {number} has no '='")
        entries[key] = value
    return entries


def read_manifest(path: Union[str, Path]) -> RunManifest:
    entries = parse_manifest(Path(path).read_text(encoding='utf-8'))
    try:
        seed = entries.get('seed', '')
        return RunManifest(
            command=entries['command'],
            argv=tuple(shlex.split(entries['argv'])),
            config_path=entries.get('config_path') or None,
            dataset_paths=tuple(shlex.split(entries.get('dataset_paths',
                                                        ''))),
            seed=int(seed) if seed else None,
            output_dir=entries.get('output_dir') or None,
            settings=tuple((k[len('train.'):], v) for k, v in entries.items()
                           if k.startswith('train.')))
    except (KeyError, ValueError) as e:
        raise MlconvError(f"malformed manifest {path}", inner=e)


def rerun_argv(manifest: RunManifest) -> Sequence[str]:
    """Command-line arguments that repeat the recorded run."""
    return list(manifest.argv)
