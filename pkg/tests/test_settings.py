import os

import numpy as np
import pytest

from setting_loaders import SETTING_DIR, ConfigError, TransitionSettings
from experiment.manifest import RunManifest, settings_hash
from utils import camel_to_snake, read_matrix_csv, snake_to_camel, write_matrix_csv


DEFAULT_CONF = os.path.join(SETTING_DIR, "transitions.yaml")


def _write_variant(tmp_path, old, new):
    with open(DEFAULT_CONF) as inp:
        text = inp.read()
    assert old in text
    path = tmp_path / "variant.yaml"
    path.write_text(text.replace(old, new, 1))
    return str(path)


def test_defaults_load():
    settings = TransitionSettings()
    assert settings.system.inner == "harmonic"
    assert settings.density.epsilon == pytest.approx(0.05)
    assert settings.density.box == [[-2.0, 2.0], [-3.0, 3.0]]
    assert settings.density.sigma_offset is None
    assert settings.oracle.richardson is False


def test_acceptance_configuration_loads():
    settings = TransitionSettings(os.path.join(SETTING_DIR, "acceptance.yaml"))
    assert settings.system.dof == 1


def test_unknown_key_is_located(tmp_path):
    path = _write_variant(
        tmp_path, "            Epsilon:\n", "            Bogus:\n                Value: 1\n            Epsilon:\n"
    )
    with pytest.raises(ConfigError) as err:
        TransitionSettings(path)
    assert "Bogus" in str(err.value)
    assert err.value.line is not None


def test_invalid_value_is_rejected(tmp_path):
    path = _write_variant(
        tmp_path,
        "                Description: Half width of the Lorentzian energy smoothing.\n"
        "                Type: Float\n"
        "                Value: 0.05\n",
        "                Description: Half width of the Lorentzian energy smoothing.\n"
        "                Type: Float\n"
        "                Value: -0.05\n",
    )
    with pytest.raises(ConfigError) as err:
        TransitionSettings(path)
    assert "Epsilon" in str(err.value)


def test_malformed_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("General:\n    System: [unclosed\n")
    with pytest.raises(ConfigError):
        TransitionSettings(str(path))


def test_missing_file():
    with pytest.raises(ConfigError):
        TransitionSettings("/nonexistent/transitions.yaml")


def test_overrides():
    settings = TransitionSettings()
    settings.override("density.tau", 2.5)
    assert settings.density.tau == 2.5
    settings.override("Density.RandomSeed", 7)
    assert settings.density.random_seed == 7
    with pytest.raises(ConfigError):
        settings.override("density.bogus", 1)
    with pytest.raises(ConfigError):
        settings.override("tau", 1.0)
    with pytest.raises(ConfigError):
        settings.override("density.epsilon", -1.0)
    with pytest.raises(ConfigError):
        settings.override("density.bins", 1)


def test_settings_hash_follows_the_values():
    first, second = TransitionSettings(), TransitionSettings()
    assert settings_hash(first) == settings_hash(second)
    second.override("density.hbar", 0.1)
    assert settings_hash(first) != settings_hash(second)


def test_manifest_checksums(tmp_path):
    artifact = tmp_path / "artifact.txt"
    artifact.write_text("transition")
    manifest = RunManifest("oracle", "abc", random_seeds={"density": 3})
    manifest.add_stage("oracle", {"levels": 12})
    manifest.finish([str(artifact)])
    assert manifest.wall_clock >= 0
    assert manifest.verify() == []

    path = manifest.write(str(tmp_path / "manifest.json"))
    clone = RunManifest.read(path)
    assert clone.to_json() == manifest.to_json()

    artifact.write_text("changed")
    assert clone.verify() == [str(artifact)]


def test_matrix_csv_round_trip(tmp_path):
    matrix = np.array([[1.0, np.nan], [-2.5e-3, 4.0]])
    path = str(tmp_path / "matrix.csv")
    write_matrix_csv(matrix, [0.1, 0.2], [0.3, 0.4], path)
    back, rows, cols = read_matrix_csv(path)
    np.testing.assert_allclose(back, matrix, equal_nan=True)
    np.testing.assert_allclose(rows, [0.1, 0.2])
    np.testing.assert_allclose(cols, [0.3, 0.4])
    with pytest.raises(ValueError):
        write_matrix_csv(matrix, [0.1], [0.3, 0.4], path)


@pytest.mark.parametrize("snake, camel", [("abs_tol", "AbsTol"), ("e_range", "ERange"), ("seed_index", "SeedIndex")])
def test_case_conversions(snake, camel):
    assert snake_to_camel(snake) == camel
    assert camel_to_snake(camel) == snake
