import os
import sys
import json
import time
import hashlib
import platform
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

from utils import file_sha256, write_json, read_json, get_logger


TOOL_VERSION = "0.3.0"

logger = get_logger("Run Manifest")


def settings_hash(settings):
    """sha256 of the effective settings, serialized with sorted keys"""
    text = json.dumps(settings.to_json(), sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunManifest:
    """Provenance of one run: settings hash, version, random seeds, timing, stage diagnostics and the
    checksum of every file written"""

    def __init__(self, subcommand, config_hash, random_seeds=None, version=TOOL_VERSION):
        self.subcommand = subcommand
        self.config_hash = config_hash
        self.version = version
        self.random_seeds = dict(random_seeds or {})
        self.stages = {}
        self.files = []
        self.python = platform.python_version()
        self.started = time.time()
        self.wall_clock = None

    def add_stage(self, name, diagnostics):
        self.stages[name] = diagnostics

    def finish(self, paths):
        self.wall_clock = time.time() - self.started
        self.files = [{"path": path, "sha256": file_sha256(path)} for path in paths]
        logger.info("Run %s finished in %.1f s with %d files", self.subcommand, self.wall_clock, len(self.files))
        return self

    def verify(self):
        """Files whose content no longer matches the recorded checksum"""
        return [entry["path"] for entry in self.files
                if not os.path.exists(entry["path"]) or file_sha256(entry["path"]) != entry["sha256"]]

    def to_json(self):
        return {
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "version": self.version,
            "python": self.python,
            "random_seeds": self.random_seeds,
            "wall_clock": self.wall_clock,
            "stages": self.stages,
            "files": self.files,
        }

    @classmethod
    def from_json(cls, json_obj):
        manifest = cls(json_obj["subcommand"], json_obj["config_hash"], json_obj["random_seeds"],
                       version=json_obj["version"])
        manifest.python = json_obj["python"]
        manifest.wall_clock = json_obj["wall_clock"]
        manifest.stages = json_obj["stages"]
        manifest.files = json_obj["files"]
        return manifest

    def write(self, path):
        write_json(self.to_json(), path)
        return path

    @classmethod
    def read(cls, path):
        return cls.from_json(read_json(path))
