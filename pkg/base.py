import os
from os.path import join as jpath
from abc import ABCMeta, abstractmethod

from utils import (
    get_logger, ensure_path_exists, write_matrix_csv, write_table_csv, write_json, write_gnuplot_table, write_yaml
)

MODULE_PATH = os.path.split(__file__)[0]


logger = get_logger("Base Class")


class TransitionError(Exception):
    """Root of every domain error raised by the transition-density stages"""

    stage = None

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class BaseApplication(metaclass=ABCMeta):
    """Base class of the experiment applications.

    Holds the settings instance and the helpers that put artifacts on disk. Every
    file written through the helpers is recorded so the run manifest can list it.
    """

    def __init__(self, setting_class, conf_path=None):
        self.setting_class = setting_class
        self.conf_path = conf_path
        self.settings = setting_class(conf_path=conf_path)
        self.written_files = []

    @abstractmethod
    def run(self, subcommand, settings=None):
        raise NotImplementedError

    def _validate_and_get_settings(self, setting_instance):
        if setting_instance is not None:
            assert isinstance(setting_instance, self.setting_class)
            return setting_instance
        return self.settings

    def _resolve_output_path(self, settings, stage):
        output_dir = os.environ.get("CCO_OUTPUT_DIR", settings.output.directory)
        out_path = jpath(output_dir, stage)
        ensure_path_exists(out_path)
        logger.debug("Output folder of stage %s: %s", stage, out_path)
        return out_path

    def _record(self, path):
        if path not in self.written_files:
            self.written_files.append(path)
        return path

    def _output_matrix(self, out_path, name, matrix, row_values, col_values):
        path = jpath(out_path, f"{name}.csv")
        write_matrix_csv(matrix, row_values, col_values, path)
        logger.info("Matrix has been written to %s.", path)
        return self._record(path)

    def _output_json(self, out_path, name, json_obj):
        path = jpath(out_path, f"{name}.json")
        write_json(json_obj, path)
        logger.info("JSON record has been written to %s.", path)
        return self._record(path)

    def _output_csv_table(self, out_path, name, columns, names):
        path = jpath(out_path, f"{name}.csv")
        write_table_csv(columns, names, path)
        logger.info("Table has been written to %s.", path)
        return self._record(path)

    def _output_table(self, out_path, name, columns, names):
        path = jpath(out_path, f"{name}.dat")
        write_gnuplot_table(columns, names, path)
        return self._record(path)

    def _output_settings(self, out_path, settings):
        path = jpath(out_path, "configurations.yaml")
        write_yaml(settings.to_json(), path)
        return self._record(path)
