"""Model checkpoints

A checkpoint file is an uncompressed numpy .npz archive holding:

    __version__     format version
    __config__      the ModelConfig as YAML text
    __dtype__       the parameter dtype of the saved model, float32 or float64
    __trained__     whether the model finished training
    param/<name>    one little-endian float64 array per parameter

Every float32 value is exactly representable as float64,
so loading a saved model reproduces its outputs bit-exactly.
"""

import dataclasses
import logging
import os
import typing

import numpy as np
import torch
import yaml

from tlt import consts, util
from tlt.configuration.basetypes import ModelConfig, build_section
from tlt.errors import NumericError, TltConfigurationError
from tlt.model.network import TltNetwork


logger = logging.getLogger(__name__)

PARAM_PREFIX = "param/"


@dataclasses.dataclass
class Checkpoint:
    """An in-memory snapshot of a model

    Snapshots only ever hold finite parameters.
    """

    config: ModelConfig
    params: typing.Dict[str, np.ndarray]
    dtype: str = "float32"
    trained: bool = False

    def __post_init__(self):
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"checkpoint parameter {name}")

    @classmethod
    def capture(cls, model: TltNetwork) -> "Checkpoint":
        params = {
            name: value.detach().cpu().numpy().astype("<f8")
            for name, value in model.state_dict().items()
        }
        dtype = str(model.dtype).replace("torch.", "")
        return cls(
            config=model.config, params=params, dtype=dtype, trained=bool(model.trained)
        )

    def restore_into(self, model: TltNetwork):
        """Copy the snapshot parameters into an existing model of the same config"""
        dtype = getattr(torch, self.dtype)
        state = {
            name: torch.from_numpy(np.array(value, dtype=np.float64)).to(dtype)
            for name, value in self.params.items()
        }
        model.load_state_dict(state)
        model.trained = self.trained

    def restore(self) -> TltNetwork:
        model = TltNetwork(self.config).to(getattr(torch, self.dtype))
        self.restore_into(model)
        return model

    def save(self, path: str):
        arrays = {
            f"{PARAM_PREFIX}{name}": np.ascontiguousarray(value, dtype="<f8")
            for name, value in self.params.items()
        }
        arrays["__version__"] = np.array(consts.CHECKPOINT_VERSION)
        configtext = util.canonical_yaml(util.plain(dataclasses.asdict(self.config)))
        arrays["__config__"] = np.array(configtext)
        arrays["__dtype__"] = np.array(self.dtype)
        arrays["__trained__"] = np.array(self.trained)
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        tmppath = f"{path}.tmp"
        with open(tmppath, "wb") as fp:
            np.savez(fp, **arrays)
        os.replace(tmppath, path)
        logger.info(
            f"Saved {self.config.variant} checkpoint with {len(self.params)} tensors to {path}"
        )

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        if not os.path.isfile(path):
            raise TltConfigurationError(f"Checkpoint {path} does not exist")
        try:
            archive = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise TltConfigurationError(
                f"Checkpoint {path} is not a readable archive: {exc}"
            )

        with archive:
            key_exc = None
            try:
                version = int(archive["__version__"])
                configtext = str(archive["__config__"])
                dtype = str(archive["__dtype__"])
                trained = bool(archive["__trained__"])
            except KeyError as exc:
                key_exc = exc
            if key_exc:
                raise TltConfigurationError(
                    f"Checkpoint {path} is missing '{key_exc.args[0]}'"
                )
            if version != consts.CHECKPOINT_VERSION:
                raise TltConfigurationError(
                    f"Checkpoint {path} has unsupported version {version}"
                )
            params = {
                name[len(PARAM_PREFIX) :]: archive[name].astype(np.float64)
                for name in archive.files
                if name.startswith(PARAM_PREFIX)
            }

        config = build_section(
            ModelConfig, yaml.safe_load(configtext), "checkpoint model"
        )
        return cls(config=config, params=params, dtype=dtype, trained=trained)


def save_checkpoint(model: TltNetwork, path: str):
    Checkpoint.capture(model).save(path)


def load_checkpoint(path: str) -> TltNetwork:
    return Checkpoint.load(path).restore()
