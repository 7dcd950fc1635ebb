import os
from os.path import join as jpath

import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np

from base import BaseApplication, TransitionError
from utils import get_logger, read_matrix_csv, LazyLoader
from setting_loaders import TransitionSettings
from hamiltonians.catalog import build_pair
from dynamics.integrator import IntegratorConfig
from seeds.finder import seed_scan
from cco.families import (
    CCOFamily, ContinuationStalledError, continue_family, grow_sheet, grow_thin_t_family, grow_thin_tau_family
)
from density.grid import TransitionGrid, l2_deviation, line_cut
from density.classical import classical_density_mc, classical_density_section_grid
from density.semiclassical import calibrate_sigma, sc_density, total_density
from experiment.manifest import RunManifest, settings_hash
quantum = LazyLoader("quantum", globals(), "oracle.quantum")


logger = get_logger("Transition App")

SUBCOMMANDS = ("seed", "cco", "density-classical", "density-sc", "density-total", "oracle", "compare")


class GridMismatchError(TransitionError):
    stage = "compare"


FAMILY_COLUMNS = ["t", "t'", "tau", "E", "E'", "action", "det(I-M)", "sigma"]


def _family_columns(family):
    members = family.members
    return [
        [orbit.t for orbit in members],
        [orbit.t_prime for orbit in members],
        [orbit.tau for orbit in members],
        [orbit.E for orbit in members],
        [orbit.E_prime for orbit in members],
        [orbit.energy_action for orbit in members],
        [orbit.det_i_minus_m for orbit in members],
        [orbit.maslov_sigma for orbit in members],
    ]


def _ladder(values):
    lo, hi, num = values
    return np.linspace(lo, hi, int(num))


def _jsonable(value):
    if isinstance(value, dict):
        return {str(key): _jsonable(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(val) for val in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class TransitionApp(BaseApplication):
    """Application running the transition density stages, one method per subcommand"""

    def __init__(self, conf_path=None):
        super().__init__(TransitionSettings, conf_path=conf_path)

    def run(self, subcommand, settings=None, **kwargs):
        if subcommand not in SUBCOMMANDS:
            raise ValueError(f"Unknown subcommand '{subcommand}', choose from {SUBCOMMANDS}")
        settings = self._validate_and_get_settings(settings)
        self.written_files = []
        manifest = RunManifest(subcommand, settings_hash(settings),
                               random_seeds={"density": settings.density.random_seed})
        out_path = self._resolve_output_path(settings, subcommand)
        method = getattr(self, subcommand.replace("-", "_"))
        result = method(settings, out_path, manifest, **kwargs)

        self._output_settings(out_path, settings)
        manifest.finish(list(self.written_files))
        manifest.write(jpath(out_path, "manifest.json"))
        return result

    def _setup(self, settings):
        inner, driving = build_pair(settings.system)
        cfg = IntegratorConfig.from_settings(settings.integrator)
        return inner, driving, cfg

    def _grid(self, settings):
        den = settings.density
        return TransitionGrid.from_ranges(den.e_range, den.ep_range, den.bins, den.tau, den.epsilon, den.hbar)

    def _output_density(self, out_path, name, matrix, grid):
        self._output_matrix(out_path, name, matrix, grid.E_values, grid.E_prime_values)
        cut_e = grid.E_values[len(grid.E_values) // 2]
        ep_vals, cut = line_cut(matrix, grid, cut_e)
        self._output_table(out_path, f"{name}_cut", [ep_vals, cut], ["E'", f"P(E={cut_e:.6g},E')"])

    def seed(self, settings, out_path, manifest):
        """Seeds of the bracket {H, L} over the configured box"""
        inner, driving, _ = self._setup(settings)
        conf = settings.seed
        seeds = seed_scan(inner, driving, conf.box, conf.grid, tol=conf.tol, max_iter=conf.max_iter,
                          workers=conf.workers)
        self._output_json(out_path, "seeds", {"seeds": [seed.to_json() for seed in seeds]})
        manifest.add_stage("seeds", {"count": len(seeds)})
        return seeds

    def _families(self, settings, tau, manifest):
        inner, driving, cfg = self._setup(settings)
        conf = settings.cco
        seeds = seed_scan(inner, driving, settings.seed.box, settings.seed.grid, tol=settings.seed.tol,
                          max_iter=settings.seed.max_iter, workers=settings.seed.workers)
        if conf.seed_index >= len(seeds):
            raise TransitionError(f"Seed index {conf.seed_index} requested, but only {len(seeds)} seeds found",
                                  seeds=len(seeds))
        seed = seeds[conf.seed_index]
        logger.info("Growing families from %s", seed)

        t_family = grow_thin_t_family(inner, driving, seed, conf.t_max, conf.step, cfg, max_iter=conf.max_iter)
        tau_family = grow_thin_tau_family(inner, driving, seed, conf.tau_max, conf.step, cfg,
                                          max_iter=conf.max_iter)
        if len(tau_family) == 0:
            raise TransitionError("The thin tau family is empty, no continuation is possible")

        start = min(tau_family.members, key=lambda orbit: abs(orbit.tau - tau))
        path = CCOFamily(inner, driving, seed, "tau-edge", members=[start])
        sheet_t, sheet_tp = _ladder(conf.sheet_t), _ladder(conf.sheet_t_prime)
        waypoints = [np.array([conf.path[0], conf.path[1], tau]), np.array([sheet_t[0], sheet_tp[0], tau])]
        try:
            for waypoint in waypoints:
                path = continue_family(path, waypoint, cfg, step=conf.step, min_step=conf.min_step, tol=conf.tol,
                                       max_iter=conf.max_iter)
        except ContinuationStalledError as err:
            manifest.add_stage("continuation", _jsonable(err.family.diagnostics))
            raise

        sheet = grow_sheet(inner, driving, path.members[-1], sheet_t, sheet_tp, tau, cfg, tol=conf.tol,
                           max_iter=conf.max_iter)
        manifest.add_stage("families", _jsonable({
            "seed": seed.to_json(),
            "t_family": {"members": len(t_family), **t_family.diagnostics},
            "tau_family": {"members": len(tau_family), **tau_family.diagnostics},
            "path": {"members": len(path), **path.diagnostics},
            "sheet": {"members": len(sheet), **sheet.diagnostics},
        }))
        return t_family, tau_family, path, sheet

    def cco(self, settings, out_path, manifest):
        """Thin families, continuation along the configured path and the interior sheet at its tau"""
        families = self._families(settings, settings.cco.path[2], manifest)
        for name, family in zip(("t_family", "tau_family", "path_family", "sheet"), families):
            self._output_json(out_path, name, _jsonable(family.to_json()))
            self._output_csv_table(out_path, name, _family_columns(family), FAMILY_COLUMNS)
        return families

    def density_classical(self, settings, out_path, manifest, section=False):
        """Monte Carlo classical density, and the section formula for one degree of freedom"""
        inner, driving, cfg = self._setup(settings)
        grid = self._grid(settings)
        den = settings.density
        estimate = classical_density_mc(inner, driving, grid, den.samples, den.box, cfg, random_seed=den.random_seed,
                                        chunk_size=den.chunk_size, workers=den.workers)
        self._output_density(out_path, "classical_mc", estimate.raw, grid)
        self._output_matrix(out_path, "classical_mc_errors", estimate.errors, grid.E_values, grid.E_prime_values)
        self._output_density(out_path, "classical_smeared", estimate.smeared, grid)
        self._output_matrix(out_path, "classical_smeared_errors", estimate.smeared_errors, grid.E_values,
                            grid.E_prime_values)
        diagnostics = estimate.diagnostics()

        if section:
            if inner.dof != 1:
                logger.warning("The section formula needs one degree of freedom, skipped")
            else:
                values, divergent = classical_density_section_grid(inner, driving, grid, cfg)
                self._output_density(out_path, "classical_section", values, grid)
                diagnostics["divergent_cells"] = int(np.sum(divergent))

        metadata = {"grid": grid.to_json(), "monte_carlo": diagnostics}
        self._output_json(out_path, "classical_metadata", _jsonable(metadata))
        manifest.add_stage("density-classical", _jsonable(diagnostics))
        return estimate

    def density_sc(self, settings, out_path, manifest):
        """Oscillatory terms from the interior sheet at the density's tau"""
        grid = self._grid(settings)
        sheet = self._families(settings, grid.tau, manifest)[-1]
        offsets = None
        terms = sc_density([sheet], grid)
        if settings.density.sigma_offset is not None:
            terms = [term.with_offset(settings.density.sigma_offset) for term in terms]
            offsets = settings.density.sigma_offset
        for term in terms:
            self._output_density(out_path, f"oscillatory_{term.name}", term.matrix(), grid)
        metadata = {
            "grid": grid.to_json(),
            "terms": [{"name": term.name, "masked": int(np.sum(term.mask)), "sigma_offset": term.sigma_offset}
                      for term in terms],
            "sigma_offset": offsets,
        }
        self._output_json(out_path, "sc_metadata", _jsonable(metadata))
        manifest.add_stage("density-sc", _jsonable(metadata["terms"]))
        return terms

    def _oracle_density(self, settings, grid):
        inner, driving, _ = self._setup(settings)
        conf = settings.oracle
        model = quantum.build_model(inner, driving, conf.basis, grid.hbar, frequency=conf.frequency,
                                    center=conf.center)
        unitary = quantum.propagate(model, grid.tau, conf.steps, richardson=conf.richardson)
        probabilities = quantum.transition_probabilities(model, unitary)
        density = quantum.smeared_density(model, probabilities, grid)
        return model, probabilities, density

    def density_total(self, settings, out_path, manifest, calibrate=False):
        """Smeared classical background plus the oscillatory terms, optionally phase calibrated on the oracle"""
        grid = self._grid(settings)
        classical = self.density_classical(settings, out_path, manifest)
        terms = self.density_sc(settings, out_path, manifest)
        diagnostics = {"sigma_calibration": None}
        if calibrate:
            _, _, reference = self._oracle_density(settings, grid)
            calibration = calibrate_sigma(classical.smeared, terms, reference, grid)
            terms = [term.with_offset(calibration["offsets"][term.name]) for term in terms]
            diagnostics["sigma_calibration"] = calibration
            self._output_density(out_path, "oracle", reference, grid)
        elif settings.density.sigma_offset is not None:
            terms = [term.with_offset(settings.density.sigma_offset) for term in terms]

        density = total_density(classical.smeared, terms, grid, errors=classical.smeared_errors,
                                diagnostics=diagnostics)
        self._output_density(out_path, "total", density.total, grid)
        self._output_json(out_path, "total_metadata", _jsonable(density.to_json()))
        manifest.add_stage("density-total", _jsonable(density.diagnostics))
        return density

    def oracle(self, settings, out_path, manifest):
        """Quantum transition density in the truncated oscillator basis"""
        grid = self._grid(settings)
        model, probabilities, density = self._oracle_density(settings, grid)
        self._output_density(out_path, "oracle", density, grid)
        levels = model.converged
        self._output_matrix(out_path, "probabilities", probabilities[:levels, :levels], model.energies[:levels],
                            model.energies[:levels])
        info = quantum.density_diagnostics(model, probabilities, grid)
        metadata = {"grid": grid.to_json(), "model": model.to_json(), **info}
        self._output_json(out_path, "oracle_metadata", _jsonable(metadata))
        manifest.add_stage("oracle", _jsonable(info))
        return density

    def compare(self, settings, out_path, manifest, first=None, second=None):
        """Cell differences and summary norms of two density matrices on the same grid"""
        if first is None or second is None:
            raise ValueError("compare needs two density CSV files")
        mat_a, rows_a, cols_a = read_matrix_csv(first)
        mat_b, rows_b, cols_b = read_matrix_csv(second)
        if mat_a.shape != mat_b.shape or not (np.allclose(rows_a, rows_b) and np.allclose(cols_a, cols_b)):
            raise GridMismatchError(f"{first} and {second} are not on the same grid")
        diff = mat_a - mat_b
        self._output_matrix(out_path, "difference", diff, rows_a, cols_a)
        finite = np.isfinite(diff)
        summary = {
            "first": first,
            "second": second,
            "l2": l2_deviation(mat_a, mat_b),
            "max_abs": float(np.max(np.abs(diff[finite]))) if np.any(finite) else float("nan"),
            "cells": int(diff.size),
            "nan_cells": int(np.sum(~finite)),
        }
        self._output_json(out_path, "summary", summary)
        manifest.add_stage("compare", summary)
        return summary
