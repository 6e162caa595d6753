"""Manage tlt run configuration"""

import copy
import dataclasses
import logging
import os
import typing

import yaml

from tlt import util
from tlt.configuration.basetypes import (
    DataConfig,
    MetricsConfig,
    ModelConfig,
    SuiteConfig,
    TrainConfig,
    build_section,
)
from tlt.errors import TltConfigurationError


logger = logging.getLogger(__name__)


# Commands and the paths each one reads
REQUIRED_INPUTS = {
    "gen-data": [],
    "train": ["manifest"],
    "eval": ["manifest", "checkpoint"],
    "ate": ["manifest", "checkpoint"],
    "refute": ["manifest", "checkpoint"],
    "tfr": ["manifest", "checkpoint"],
    "saliency": ["manifest", "checkpoint"],
    "export-latents": ["manifest", "checkpoint"],
    "suite": [],
}


@dataclasses.dataclass(frozen=True)
class PathsConfig:
    """Paths used by a run

    manifest:   Dataset manifest, written by gen-data and read by everything else
    checkpoint: Model checkpoint, written by train and read by evaluation commands
    out:        Output directory; empty means $TLT_OUTPUT_ROOT/<command>
    """

    manifest: str = ""
    checkpoint: str = ""
    out: str = ""


def apply_overrides(
    yamlcontents: typing.Dict, overrides: typing.Iterable[str]
) -> typing.Dict:
    """Apply dotted key=value overrides to a raw YAML mapping

    Values are parsed with the YAML scalar parser, so `model.latent_dim=8`
    yields an integer just as it would in the file.
    """
    result = copy.deepcopy(yamlcontents)
    for override in overrides or []:
        if "=" not in override:
            raise TltConfigurationError(
                f"Override '{override}' is not of the form key=value"
            )
        dottedkey, rawvalue = override.split("=", 1)
        keys = [k for k in dottedkey.strip().split(".") if k]
        if not keys:
            raise TltConfigurationError(f"Override '{override}' has an empty key")
        try:
            value = yaml.safe_load(rawvalue) if rawvalue.strip() else ""
        except yaml.YAMLError as exc:
            raise TltConfigurationError(
                f"Override '{override}' has an unparseable value: {exc}"
            )
        node = result
        for key in keys[:-1]:
            child = node.get(key)
            if child is None:
                child = {}
                node[key] = child
            if not isinstance(child, dict):
                raise TltConfigurationError(
                    f"Override '{override}' descends into non-mapping '{key}'"
                )
            node = child
        node[keys[-1]] = value
        logger.debug(f"Config override {'.'.join(keys)} = {value!r}")
    return result


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Configuration for one tlt run"""

    loglevel: str = "INFO"
    seed: int = 0
    paths: PathsConfig = dataclasses.field(default_factory=PathsConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    metrics: MetricsConfig = dataclasses.field(default_factory=MetricsConfig)
    suite: SuiteConfig = dataclasses.field(default_factory=SuiteConfig)

    @classmethod
    def fromdict(cls, yamlcontents: typing.Optional[typing.Dict]) -> "RunConfig":
        """Create a new RunConfig from a parsed YAML mapping"""
        if yamlcontents is None:
            yamlcontents = {}
        if not isinstance(yamlcontents, dict):
            raise TltConfigurationError(
                "The configuration file must contain a mapping at top level"
            )

        sections = {
            "paths": lambda m: build_section(PathsConfig, m, "paths"),
            "data": lambda m: DataConfig.fromdict(m, "data"),
            "model": lambda m: build_section(ModelConfig, m, "model"),
            "train": lambda m: build_section(TrainConfig, m, "train"),
            "metrics": lambda m: build_section(MetricsConfig, m, "metrics"),
            "suite": lambda m: build_section(SuiteConfig, m, "suite"),
        }
        parsed = {
            name: builder(yamlcontents.get(name)) for name, builder in sections.items()
        }
        config = build_section(cls, yamlcontents, "<top level>", **parsed)

        level = config.loglevel.upper()
        if logging.getLevelName(level) == f"Level {level}":
            raise TltConfigurationError(f"Unknown loglevel '{config.loglevel}'")
        return config

    @classmethod
    def fromyaml(cls, path: str, overrides: typing.Iterable[str] = ()) -> "RunConfig":
        """Create a new RunConfig instance from a YAML file path and optional overrides

        Note that debug logging may not yet be available
        """
        if not path:
            raise TltConfigurationError(
                "No configuration file given, pass --config or set TLT_CONFIG"
            )
        if not os.path.isfile(path):
            raise TltConfigurationError(f"Configuration file {path} does not exist")
        with open(path) as fp:
            try:
                yamlcontents = yaml.safe_load(fp)
            except yaml.YAMLError as exc:
                raise TltConfigurationError(
                    f"Configuration file {path} is not valid YAML: {exc}"
                )
        if yamlcontents is None:
            yamlcontents = {}
        if not isinstance(yamlcontents, dict):
            raise TltConfigurationError(
                f"Configuration file {path} must contain a mapping at top level"
            )
        return cls.fromdict(apply_overrides(yamlcontents, overrides))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_paths(self, **changes) -> "RunConfig":
        paths = dataclasses.replace(self.paths, **changes)
        return dataclasses.replace(self, paths=paths)

    def seeded(self) -> "RunConfig":
        """A copy whose model and training seeds derive from the master seed"""
        init = util.derive_seed(self.seed, "train", "init")
        optimize = util.derive_seed(self.seed, "train", "optimize")
        return dataclasses.replace(
            self,
            model=dataclasses.replace(self.model, seed=init),
            train=dataclasses.replace(self.train, seed=optimize),
        )

    def output_dir(self, command: str) -> str:
        """The output directory for a command"""
        if self.paths.out:
            return self.paths.out
        root = os.environ.get("TLT_OUTPUT_ROOT", "tlt-output")
        return os.path.join(root, command)

    def validate_inputs(self, command: str):
        """Check that every path the command reads exists"""
        for name in REQUIRED_INPUTS.get(command, []):
            path = getattr(self.paths, name)
            if not path:
                raise TltConfigurationError(
                    f"Command {command} requires paths.{name} to be set"
                )
            if not os.path.exists(path):
                raise TltConfigurationError(
                    f"Command {command} requires paths.{name}, but {path} does not exist"
                )
        if command == "suite" and not self.suite.train_inline:
            for variant in self.suite.variants:
                path = self.suite.checkpoints.get(variant)
                if not path:
                    raise TltConfigurationError(
                        f"Suite variant {variant} has no checkpoint and suite.train_inline is false"
                    )
                if not os.path.exists(path):
                    raise TltConfigurationError(
                        f"Suite checkpoint {path} for variant {variant} does not exist"
                    )

    def asdict(self) -> typing.Dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """A stable hash of the canonicalized configuration"""
        return util.digest(util.plain(self.asdict()))
