#!/usr/bin/env python3
"""
Tests for the run configuration, the result files and the command-line driver.
"""

import sys
from pathlib import Path

import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent))

from fisherflow.config.run_config import RunConfig
from fisherflow.errors import ConfigError
from fisherflow.storage.file_storage import RUN_COLUMNS, RunStorage, format_value
from main import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_SOLVER, LIPSCHITZ_PATH, main

LINEAR_CONSTANT = """
[mobility]
family = linear

[grid]
cells = 16

[initial]
profile = constant
a = 1.0

[time]
tau = 0.001
horizon = 0.01
"""

LINEAR_COSINE = """
[mobility]
family = linear

[grid]
cells = 16

[initial]
profile = cosine_bump
a = 1.0
b = 0.5

[time]
tau = 0.001
horizon = 0.002

[solver]
tol = 1e-4
tol_outer = 1e-6
max_iter = 200

[run]
deterministic = true
"""


def write_config(tmp_path, text, name='run.ini'):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return str(path)


def power_config(beta):
    return f"[mobility]\nfamily = power\nbeta = {beta}\n\n[grid]\ncells = 16\n"


def test_config_round_trip_and_hash():
    print("=" * 80)
    print("TESTING RUN CONFIG")
    print("=" * 80)

    cfg = RunConfig.from_text(LINEAR_COSINE)
    assert cfg.mobility_family == 'linear'
    assert cfg.profile_kwargs == {'a': 1.0, 'b': 0.5}
    assert cfg.deterministic
    again = RunConfig.from_text(cfg.to_text())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()

    cascade = RunConfig.from_text(LINEAR_COSINE + "\n[cascade]\ndeltas = 0.1, 0.05\n")
    assert cascade.deltas == (0.1, 0.05)
    assert cascade.has_schedule
    assert cascade.config_hash() != cfg.config_hash()
    assert RunConfig.from_text(LINEAR_COSINE + "\n[cascade]\ndeltas = auto\n").auto_schedule
    print(f"   ✓ canonical text round-trips, hash {cfg.config_hash()[:12]}")


@pytest.mark.parametrize('text', [
    "[grid]\ncells = 16\n",
    "[mobility]\nfamily = linear\n[time]\ntau = 0.01\nhorizon = 0.001\n",
    "[mobility]\nfamily = linear\n[time]\ntau = fast\n",
    "[mobility]\nfamily = linear\n[grid]\ncells = 4\n",
    "[mobility]\nfamily = linear\n[extras]\nkey = 1\n",
    "[mobility]\nfamily = linear\n[cascade]\ndeltas = 0.1, x\n",
    "not an ini file",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_format_value():
    assert format_value(3) == '3'
    assert format_value(0.1) == '0.10000000000000001'
    assert format_value(float('nan')) == 'nan'


def test_validate_mobility_exit_codes(tmp_path, capsys):
    print("=" * 80)
    print("TESTING validate-mobility")
    print("=" * 80)

    assert main(['validate-mobility', write_config(tmp_path, LINEAR_CONSTANT)]) == EXIT_OK

    assert main(['validate-mobility', write_config(tmp_path, power_config(0.8), 'p08.ini')]) == EXIT_OK
    assert 'cascade required' in capsys.readouterr().out

    assert main(['validate-mobility', write_config(tmp_path, power_config(0.5), 'p05.ini')]) == EXIT_FAILED
    assert 'singularity-strength (M-S)' in capsys.readouterr().out

    saturating = "[mobility]\nfamily = double_power\nbeta1 = 1\nbeta2 = 1\nceiling = 1\n"
    assert main(['validate-mobility', write_config(tmp_path, saturating, 'dp.ini')]) == EXIT_OK


def test_config_errors_exit_with_code_2(tmp_path):
    assert main(['validate-mobility', write_config(tmp_path, "[grid]\ncells = 16\n")]) == EXIT_CONFIG
    missing = "[mobility]\nfamily = power\n"
    assert main(['validate-mobility', write_config(tmp_path, missing, 'missing.ini')]) == EXIT_CONFIG
    assert main(['evolve', str(tmp_path / 'absent.ini')]) == EXIT_CONFIG


def test_evolve_refuses_non_lipschitz_without_schedule(tmp_path, capsys):
    text = power_config(0.8) + "\n[time]\ntau = 0.001\nhorizon = 0.002\n"
    code = main(['evolve', write_config(tmp_path, text), '--output-dir', str(tmp_path / 'out')])
    assert code == EXIT_FAILED
    assert 'not Lipschitz' in capsys.readouterr().out


def test_unconverged_transport_exits_with_code_3(tmp_path, capsys):
    stalled = LINEAR_COSINE.replace("tol = 1e-4\n", "tol = 1e-12\n").replace("max_iter = 200", "max_iter = 3")
    config = write_config(tmp_path, stalled)
    assert main(['evolve', config, '--output-dir', str(tmp_path / 'out')]) == EXIT_SOLVER
    assert 'did not converge' in capsys.readouterr().out

    cfg = RunConfig.load(config)
    manifest = RunStorage.load_manifest(tmp_path / 'out' / f"evolve_{cfg.config_hash()[:12]}" / 'manifest.json')
    assert not all(step['transport_converged'] for step in manifest['steps'])

    cascade = (power_config(0.8) + "\n[time]\ntau = 0.001\nhorizon = 0.002\n"
               "\n[cascade]\ndeltas = 0.1, 0.05\n\n[solver]\ntol = 1e-12\nmax_iter = 3\n")
    code = main(['cascade', write_config(tmp_path, cascade, 'cascade.ini'), '--output-dir', str(tmp_path / 'c')])
    assert code == EXIT_SOLVER


def test_evolve_writes_one_row_per_step(tmp_path):
    print("=" * 80)
    print("TESTING evolve")
    print("=" * 80)

    config = write_config(tmp_path, LINEAR_CONSTANT)
    out = tmp_path / 'out'
    assert main(['evolve', config, '--output-dir', str(out)]) == EXIT_OK

    cfg = RunConfig.load(config)
    run_dir = out / f"evolve_{cfg.config_hash()[:12]}"
    table = RunStorage.read_table(run_dir / 'run.csv')
    assert tuple(table[0]) == RUN_COLUMNS
    assert len(table) == 11
    assert [row[0] for row in table[1:]] == [str(n) for n in range(1, 11)]
    assert (run_dir / 'run.csv').read_text(encoding='utf-8').startswith('# fisherflow-run/1 source=jko')

    manifest = RunStorage.load_manifest(run_dir / 'manifest.json')
    assert manifest['config_hash'] == cfg.config_hash()
    assert manifest['theorem_path'] == LIPSCHITZ_PATH == 'Thm-1/LSC'
    assert manifest['holder']['seed'] == 0 and manifest['holder']['passed']
    assert all(manifest['checks'].values())
    print(f"   ✓ {len(table) - 1} rows written to {run_dir}")


@pytest.mark.slow
def test_deterministic_runs_are_byte_identical(tmp_path):
    config = write_config(tmp_path, LINEAR_COSINE)
    cfg = RunConfig.load(config)
    bodies = []
    for name in ('first', 'second'):
        out = tmp_path / name
        main(['evolve', config, '--output-dir', str(out)])
        bodies.append(RunStorage.table_body(out / f"evolve_{cfg.config_hash()[:12]}" / 'run.csv'))
    assert bodies[0] == bodies[1]
    assert bodies[0].count('\n') == 3


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
