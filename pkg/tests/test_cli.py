import csv
import os

import numpy as np
import pytest

from cco_transitions import apply_overrides, build_parser, main
from setting_loaders import TransitionSettings
from seeds.finder import Seed
from utils import read_json, write_matrix_csv


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    out = tmp_path / "output"
    monkeypatch.setenv("CCO_OUTPUT_DIR", str(out))
    return out


def _density_csv(path, matrix, rows=(0.1, 0.2, 0.3), cols=(0.4, 0.5)):
    write_matrix_csv(matrix, list(rows), list(cols), str(path))
    return str(path)


def test_parser_requires_a_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["density-classical", "--E-range", "0.1", "0.9", "--section"])
    assert args.E_range == [0.1, 0.9]
    assert args.section


def test_compare_identical_files(tmp_path, output_dir):
    first = _density_csv(tmp_path / "a.csv", np.arange(6.0).reshape(3, 2))
    assert main(["compare", first, first]) == 0
    summary = read_json(str(output_dir / "compare" / "summary.json"))
    assert summary["l2"] == 0.0
    assert summary["max_abs"] == 0.0
    assert os.path.exists(output_dir / "compare" / "manifest.json")


def test_compare_reports_the_difference(tmp_path, output_dir):
    first = _density_csv(tmp_path / "a.csv", np.zeros((3, 2)))
    second = _density_csv(tmp_path / "b.csv", np.full((3, 2), 0.5))
    assert main(["compare", first, second]) == 0
    summary = read_json(str(output_dir / "compare" / "summary.json"))
    assert summary["l2"] == pytest.approx(0.5)
    assert summary["cells"] == 6


def test_compare_rejects_different_grids(tmp_path, output_dir):
    first = _density_csv(tmp_path / "a.csv", np.zeros((3, 2)))
    second = _density_csv(tmp_path / "b.csv", np.zeros((3, 2)), rows=(0.1, 0.2, 0.35))
    assert main(["compare", first, second]) == 1


def test_configuration_errors_exit_with_two(tmp_path, output_dir):
    assert main(["seed", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["seed", "--set", "density.epsilon=-1"]) == 2
    assert main(["seed", "--set", "density.nothing=1"]) == 2
    assert main(["seed", "--set", "no_equals_sign"]) == 2


def test_seed_subcommand(output_dir):
    assert main(["seed", "--set", "seed.grid=3"]) == 0
    record = read_json(str(output_dir / "seed" / "seeds.json"))
    seeds = [Seed.from_json(obj) for obj in record["seeds"]]
    assert len(seeds) == 1
    np.testing.assert_allclose(seeds[0].point.coords, [0.0, 4.0 / 3.0], atol=1e-9)
    manifest = read_json(str(output_dir / "seed" / "manifest.json"))
    assert manifest["stages"]["seeds"]["count"] == 1
    assert os.path.exists(output_dir / "seed" / "configurations.yaml")


def test_classical_density_is_reproducible(tmp_path, monkeypatch):
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        monkeypatch.setenv("CCO_OUTPUT_DIR", str(out))
        code = main(["density-classical", "--samples", "10000", "--bins", "5", "--tau", "0.5"])
        assert code == 0
        outputs.append(out / "density-classical")

    first, second = ((path / "classical_mc.csv").read_bytes() for path in outputs)
    assert first == second
    manifests = [read_json(str(path / "manifest.json")) for path in outputs]
    assert manifests[0]["config_hash"] == manifests[1]["config_hash"]
    assert manifests[0]["random_seeds"] == {"density": 20240101}
    metadata = read_json(str(outputs[0] / "classical_metadata.json"))
    assert metadata["monte_carlo"]["samples"] == 10000
    assert len(metadata["grid"]["E_values"]) == 5


def _read_table(path):
    with open(path, newline="") as inp:
        rows = list(csv.reader(inp))
    return rows[0], np.array(rows[1:], dtype=float)


def test_seed_flags_reach_the_settings():
    args = build_parser().parse_args(["seed", "--box", "-1", "1", "-2.5", "2.5", "--grid", "4", "--tol", "1e-11"])
    settings = apply_overrides(TransitionSettings(), args)
    assert settings.seed.box == [[-1.0, 1.0], [-2.5, 2.5]]
    assert settings.seed.grid == 4
    assert settings.seed.tol == pytest.approx(1e-11)


def test_cco_flags_reach_the_settings():
    args = build_parser().parse_args([
        "cco", "--seed-index", "0", "--path", "0.7", "0.5", "1.2", "--t-max", "0.5", "--tau-max", "1.25",
        "--step", "0.1", "--tol", "1e-9"
    ])
    settings = apply_overrides(TransitionSettings(), args)
    assert settings.cco.seed_index == 0
    assert settings.cco.path == [0.7, 0.5, 1.2]
    assert (settings.cco.t_max, settings.cco.tau_max, settings.cco.step) == (0.5, 1.25, 0.1)
    assert settings.cco.tol == pytest.approx(1e-9)


def test_odd_box_bounds_exit_with_two(output_dir):
    assert main(["seed", "--box", "-2", "2", "-3"]) == 2


def test_seed_subcommand_with_flags(output_dir):
    assert main(["seed", "--box", "-2", "2", "-3", "3", "--grid", "3", "--tol", "1e-11"]) == 0
    record = read_json(str(output_dir / "seed" / "seeds.json"))
    seeds = [Seed.from_json(obj) for obj in record["seeds"]]
    assert len(seeds) == 1
    np.testing.assert_allclose(seeds[0].point.coords, [0.0, 4.0 / 3.0], atol=1e-9)


def test_cco_subcommand_writes_family_tables(output_dir):
    code = main([
        "cco", "--set", "seed.grid=3", "--set", "cco.sheet_t=[0.6, 0.65, 2]",
        "--set", "cco.sheet_t_prime=[0.6, 0.65, 2]", "--t-max", "0.5", "--tau-max", "1.0", "--step", "0.25",
        "--path", "0.6", "0.6", "1.0"
    ])
    assert code == 0
    folder = output_dir / "cco"
    for name in ("t_family", "tau_family", "path_family", "sheet"):
        assert os.path.exists(folder / f"{name}.json")
        header, _ = _read_table(folder / f"{name}.csv")
        assert header == ["t", "t'", "tau", "E", "E'", "action", "det(I-M)", "sigma"]

    _, t_family = _read_table(folder / "t_family.csv")
    assert t_family[-1, 0] == pytest.approx(0.5)
    _, tau_family = _read_table(folder / "tau_family.csv")
    assert tau_family[-1, 2] == pytest.approx(1.0)
    _, path = _read_table(folder / "path_family.csv")
    np.testing.assert_allclose(path[-1, :3], [0.6, 0.6, 1.0], atol=1e-12)
    _, sheet = _read_table(folder / "sheet.csv")
    assert len(sheet) == 4
    np.testing.assert_allclose(sheet[:, 2], 1.0)
