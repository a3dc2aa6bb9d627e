"""File-based storage for run tables, cascade reports, manifests and path dumps."""

import csv
import json
import math
import platform
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
import scipy

from fisherflow import __version__
from fisherflow.config.settings import CASCADE_SCHEMA, CSV_SCHEMA, FLOAT_FORMAT, MANIFEST_SCHEMA

RUN_COLUMNS = ('step', 't', 'F', 'H', 'W2_step', 'mass', 'min_u', 'max_u')
CASCADE_COLUMNS = ('delta', 'F_delta_u0', 'final_F', 'final_H', 'gap_to_next')
PATH_COLUMNS = ('j', 'i', 'u', 'w')


def format_value(value) -> str:
    """Integers as-is, floats with 17 significant digits."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return 'nan'
    return FLOAT_FORMAT % value


class RunStorage:
    """Static helpers writing the artifacts of one run directory."""

    @staticmethod
    def run_dir(output_dir, command: str, config_hash: str) -> Path:
        """Create and return <output_dir>/<command>_<hash prefix>."""
        path = Path(output_dir) / f"{command}_{config_hash[:12]}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    @staticmethod
    def _write_table(filepath, schema: str, columns: Sequence[str], rows: Iterable[Sequence],
                     source: str = '') -> Path:
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        tag = f"# {schema}" + (f" source={source}" if source else '')
        with open(filepath, 'w', encoding='utf-8', newline='') as file:
            file.write(tag + '\n')
            writer = csv.writer(file, lineterminator='\n')
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
        print(f"[INFO] Saved {filepath}")
        return filepath

    @staticmethod
    def write_run_csv(filepath, rows: Iterable[Sequence], source: str = 'jko') -> Path:
        """Per-step table (step, t, F, H, W2_step, mass, min_u, max_u)."""
        return RunStorage._write_table(filepath, CSV_SCHEMA, RUN_COLUMNS, rows, source)

    @staticmethod
    def write_cascade_csv(filepath, rows: Iterable[Sequence]) -> Path:
        """Per-level table (delta, F_delta(u0), final F, final H, gap to next level)."""
        return RunStorage._write_table(filepath, CASCADE_SCHEMA, CASCADE_COLUMNS, rows)

    @staticmethod
    def write_path_dump(filepath, path) -> Path:
        """Transport path as (j, i, u, w) rows; w is the flux through the left face of cell i at half-step j."""
        slices = path.time_slices

        def rows():
            for j in range(slices + 1):
                for i in range(path.grid.cells):
                    flux = path.w[j, i] if j < slices else math.nan
                    yield (j, i, path.u[j, i], flux)
        return RunStorage._write_table(filepath, CSV_SCHEMA, PATH_COLUMNS, rows(), source='path')

    @staticmethod
    def read_table(filepath) -> List[List[str]]:
        """Rows of a table written by this class, header included, schema line skipped."""
        with open(filepath, 'r', encoding='utf-8', newline='') as file:
            lines = [line for line in file if not line.startswith('#')]
        return list(csv.reader(lines))

    @staticmethod
    def table_body(filepath) -> str:
        """Everything after the schema line, for byte comparisons between runs."""
        text = Path(filepath).read_text(encoding='utf-8')
        return text.split('\n', 1)[1] if text.startswith('#') else text

    @staticmethod
    def write_manifest(filepath, config_text: str, config_hash: str, command: str,
                       payload: Dict) -> Path:
        """JSON manifest with schema tag, config hash, versions and the run payload."""
        filepath = Path(filepath)
        manifest = {
            'schema': MANIFEST_SCHEMA,
            'command': command,
            'created': datetime.now().isoformat(timespec='seconds'),
            'config_hash': config_hash,
            'config': config_text,
            'versions': {
                'fisherflow': __version__,
                'python': platform.python_version(),
                'numpy': np.__version__,
                'scipy': scipy.__version__,
            },
        }
        manifest.update(payload)
        try:
            with open(filepath, 'w', encoding='utf-8') as file:
                json.dump(manifest, file, indent=2, default=_json_default)
            print(f"[INFO] Saved manifest {filepath}")
            return filepath
        except (OSError, TypeError) as e:
            print(f"[ERROR] Failed to write manifest {filepath}: {e}")
            return None

    @staticmethod
    def load_manifest(filepath) -> Dict:
        with open(filepath, 'r', encoding='utf-8') as file:
            return json.load(file)


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")
