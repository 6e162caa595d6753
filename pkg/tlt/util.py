"""tlt utility functions"""

import fractions
import hashlib
import typing

import numpy as np
import torch
import yaml


def derive_seed(master: int, *labels) -> int:
    """Derive an independent seed from a master seed and a path of labels

    The labels are typically (command, component, trial index).
    The mixing function is SHA-256 over the text "master|label1|label2|...",
    keeping the first 8 bytes as a little-endian integer and masking to 63 bits.
    Each path gets its own stream, so adding trials never perturbs earlier ones.
    """
    text = "|".join([str(int(master))] + [str(label) for label in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def numpy_rng(master: int, *labels) -> np.random.Generator:
    """A numpy generator for a derived seed"""
    return np.random.default_rng(derive_seed(master, *labels))


def torch_generator(seed: int) -> torch.Generator:
    """A CPU torch generator seeded with `seed`"""
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def fmt6(value: float) -> float:
    """Round a number to 6 significant digits

    Used for everything written to metric and report files,
    so that their text is stable across platforms.
    """
    value = float(value)
    if not np.isfinite(value):
        return value
    return float(f"{value:.6g}")


def rounded(d: typing.Dict) -> typing.Dict:
    """Return a copy of a flat-ish dict with all floats passed through fmt6"""
    result = {}
    for k, v in d.items():
        if isinstance(v, dict):
            result[k] = rounded(v)
        elif isinstance(v, (list, tuple)):
            result[k] = [fmt6(i) if isinstance(i, float) else i for i in v]
        elif isinstance(v, (float, np.floating)):
            result[k] = fmt6(v)
        elif isinstance(v, np.integer):
            result[k] = int(v)
        elif isinstance(v, np.bool_):
            result[k] = bool(v)
        else:
            result[k] = v
    return result


def canonical_yaml(d: typing.Dict) -> str:
    """Dump a mapping as YAML with sorted keys, for hashing and stable files"""
    return yaml.safe_dump(d, sort_keys=True, default_flow_style=False)


def digest(d: typing.Dict) -> str:
    """SHA-256 hex digest of the canonical YAML form of a mapping"""
    hash = hashlib.sha256()
    hash.update(canonical_yaml(d).encode("utf-8"))
    return hash.hexdigest()


def plain(value):
    """Convert tuples to lists and numpy scalars to Python scalars, recursively"""
    if isinstance(value, dict):
        return {k: plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def exact_mean(values) -> float:
    """Arithmetic mean computed in exact rational arithmetic, then rounded once

    The mean of identical values is that value, bit for bit.
    """
    values = list(values)
    return float(sum(fractions.Fraction(float(v)) for v in values) / len(values))
