import os

import jsonschema
from ruamel.yaml.error import YAMLError

from base import TransitionError
from utils import load_yaml, json_serializable, key_location, UnknownKeyError, camel_to_snake

SETTING_DIR = f'{os.path.split(__file__)[0]}/defaults'


class ConfigError(TransitionError):
    """Invalid configuration, located by line and column of the offending key when known"""

    stage = "config"

    def __init__(self, message, line=None, column=None, **diagnostics):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message, line=line, column=column, **diagnostics)
        self.line = line
        self.column = column


def _value(schema):
    return {"type": "object", "properties": {"Value": schema}, "required": ["Value"]}


def _section(fields):
    return {
        "type": "object",
        "required": ["Settings"],
        "properties": {
            "Settings": {"type": "object", "properties": {key: _value(val) for key, val in fields.items()}}
        },
    }


_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_RANGE = {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}
_BOX = {"type": "array", "items": _RANGE, "minItems": 2}
_LADDER = {"type": "array", "items": _NUMBER, "minItems": 3, "maxItems": 3}

TRANSITION_SCHEMA = {
    "type": "object",
    "required": ["General"],
    "properties": {
        "General": {
            "type": "object",
            "properties": {
                "System": _section({
                    "Inner": {"type": "string"},
                    "Driving": {"type": "string"},
                    "Params": {"type": ["object", "null"], "additionalProperties": _NUMBER},
                    "Dof": _POS_INT,
                    "Perturbation": {"type": ["object", "null"]},
                }),
                "Integrator": _section({
                    "Method": {"enum": ["adaptive", "symplectic"]},
                    "AbsTol": _POSITIVE,
                    "RelTol": _POSITIVE,
                    "MaxStep": _POSITIVE,
                    "MaxSteps": _POS_INT,
                }),
                "Seed": _section({
                    "Box": _BOX,
                    "Grid": _POS_INT,
                    "Tol": _POSITIVE,
                    "MaxIter": _POS_INT,
                    "Workers": _POS_INT,
                }),
                "Cco": _section({
                    "SeedIndex": {"type": "integer", "minimum": 0},
                    "TMax": _POSITIVE,
                    "TauMax": _POSITIVE,
                    "Step": _POSITIVE,
                    "MinStep": _POSITIVE,
                    "Tol": _POSITIVE,
                    "MaxIter": _POS_INT,
                    "Path": _LADDER,
                    "SheetT": _LADDER,
                    "SheetTPrime": _LADDER,
                }),
                "Density": _section({
                    "Tau": _NUMBER,
                    "Epsilon": _POSITIVE,
                    "Hbar": _POSITIVE,
                    "Samples": _POS_INT,
                    "ChunkSize": _POS_INT,
                    "ERange": _RANGE,
                    "EpRange": _RANGE,
                    "Bins": {"type": "integer", "minimum": 2},
                    "Box": _BOX,
                    "RandomSeed": {"type": "integer", "minimum": 0},
                    "Workers": _POS_INT,
                    "SigmaOffset": {"type": ["integer", "null"], "minimum": 0, "maximum": 3},
                }),
                "Oracle": _section({
                    "Basis": {"type": "integer", "minimum": 4},
                    "Steps": _POS_INT,
                    "Frequency": _POSITIVE,
                    "Center": _NUMBER,
                    "Richardson": {"type": "boolean"},
                }),
                "Output": _section({"Directory": {"type": "string"}}),
            },
        }
    },
}


def _schema_error_location(json_obj, error):
    path = list(error.absolute_path)
    parent = json_obj
    line, col = None, None
    for key in path:
        line, col = key_location(parent, key)
        try:
            parent = parent[key]
        except (KeyError, IndexError, TypeError):
            break
    return line, col, "/".join(str(key) for key in path)


class Settings:
    default_setting_file = None

    def __init__(self, conf_path=None):
        if conf_path is None:
            conf_path = os.path.join(SETTING_DIR, self.default_setting_file)
        try:
            json_obj = load_yaml(conf_path)
        except OSError as err:
            raise ConfigError(f"Cannot read configuration {conf_path}: {err}", path=conf_path)
        except YAMLError as err:
            mark = getattr(err, "problem_mark", None)
            raise ConfigError(
                f"Malformed YAML in {conf_path}: {err}",
                line=None if mark is None else mark.line + 1,
                column=None if mark is None else mark.column + 1,
                path=conf_path
            )

        try:
            self.from_json(json_obj)  # pylint: disable=E1101
        except jsonschema.ValidationError as err:
            line, col, where = _schema_error_location(json_obj, err)
            raise ConfigError(f"Invalid value at {where}: {err.message}", line=line, column=col, path=conf_path)
        except UnknownKeyError as err:
            raise ConfigError(
                f"Unknown key '{err.key}' in section {err.owner}", line=err.line, column=err.column, path=conf_path
            )
        except (AttributeError, KeyError, TypeError) as err:
            raise ConfigError(f"Incomplete configuration {conf_path}: {err}", path=conf_path)


@json_serializable(key_path="./General", value_path="./Value")
class TransitionSettings(Settings):
    default_setting_file: str = "transitions.yaml"
    schema = TRANSITION_SCHEMA

    def __init__(self, conf_path=None):
        self.system = self.System()
        self.integrator = self.Integrator()
        self.seed = self.Seed()
        self.cco = self.Cco()
        self.density = self.Density()
        self.oracle = self.Oracle()
        self.output = self.Output()

        super().__init__(conf_path=conf_path)

    def override(self, dotted_key, value):
        """Set ``section.key`` (snake or camel case) to ``value``"""
        try:
            section_name, key = dotted_key.split(".")
        except ValueError:
            raise ConfigError(f"Override key must look like 'section.key', got '{dotted_key}'")
        section_name, key = camel_to_snake(section_name), camel_to_snake(key)
        section = getattr(self, section_name, None)
        if section is None or not hasattr(section, "from_json") or key not in section.__dict__:
            raise ConfigError(f"Unknown setting '{dotted_key}'")
        setattr(section, key, value)
        self._validate()

    def _validate(self):
        json_obj = self.to_json()  # pylint: disable=E1101
        try:
            jsonschema.validate(instance=json_obj, schema=self.schema)
        except jsonschema.ValidationError as err:
            where = "/".join(str(key) for key in err.absolute_path)
            raise ConfigError(f"Invalid value at {where}: {err.message}")

    @json_serializable(key_path="./Settings", value_path="./Value")
    class System:
        def __init__(self):
            self.inner: str = None
            self.driving: str = None
            self.params: dict = None
            self.dof: int = None
            self.perturbation: dict = None

    @json_serializable(key_path="./Settings", value_path="./Value")
    class Integrator:
        def __init__(self):
            self.method: str = None
            self.abs_tol: float = None
            self.rel_tol: float = None
            self.max_step: float = None
            self.max_steps: int = None

    @json_serializable(key_path="./Settings", value_path="./Value")
    class Seed:
        def __init__(self):
            self.box: list = None
            self.grid: int = None
            self.tol: float = None
            self.max_iter: int = None
            self.workers: int = None

    @json_serializable(key_path="./Settings", value_path="./Value")
    class Cco:
        def __init__(self):
            self.seed_index: int = None
            self.t_max: float = None
            self.tau_max: float = None
            self.step: float = None
            self.min_step: float = None
            self.tol: float = None
            self.max_iter: int = None
            self.path: list = None
            self.sheet_t: list = None
            self.sheet_t_prime: list = None

    @json_serializable(key_path="./Settings", value_path="./Value")
    class Density:
        def __init__(self):
            self.tau: float = None
            self.epsilon: float = None
            self.hbar: float = None
            self.samples: int = None
            self.chunk_size: int = None
            self.e_range: list = None
            self.ep_range: list = None
            self.bins: int = None
            self.box: list = None
            self.random_seed: int = None
            self.workers: int = None
            self.sigma_offset: int = None

    @json_serializable(key_path="./Settings", value_path="./Value")
    class Oracle:
        def __init__(self):
            self.basis: int = None
            self.steps: int = None
            self.frequency: float = None
            self.center: float = None
            self.richardson: bool = None

    @json_serializable(key_path="./Settings", value_path="./Value")
    class Output:
        def __init__(self):
            self.directory: str = None
