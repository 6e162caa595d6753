"""Samples, dataset manifests, and the manifest file format

A manifest file is line-delimited JSON.
The first line is a header:

    {"format": "tlt-manifest", "version": 1, "K": 2, "mode": "image",
     "treated_fraction": 0.5, "flip_rate": 0.05, "seed": 7,
     "planted_ate": null, "flip_count": 48, "treatments": ["scramble"],
     "storage": "sidecar", "count": 2000}

Every following line is one record:

    {"id": "img-000000", "y": 1, "t": 0, "t_clean": 0, "treatment": "",
     "key": null, "x": {...}, "mask": {...} or null}

Arrays are either inline, {"shape": [32, 32, 1], "data": [0.41, ...]},
with floats written by Python's shortest round-trip repr,
or stored in a sidecar, {"shape": [32, 32, 1], "offset": 0, "count": 1024},
where offset and count are in elements of the file `<manifest>.bin`,
a flat sequence of little-endian IEEE 754 binary64 values.
Either way, reading a written manifest reproduces every array bit-exactly.
"""

import dataclasses
import json
import logging
import os
import typing

import numpy as np

from tlt import consts
from tlt.errors import DomainError, TltConfigurationError


logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class Sample:
    """One observation

    x:          Image as an H x W x C array, or a D-vector, with values in [0,1]
    y:          Class label
    t:          Observed treatment, possibly flipped
    mask:       Optional H x W object mask with values in {0,1}
    t_clean:    Treatment actually applied, before any label flipping
    treatment:  Name of the treatment kind applied, or "" if untreated
    key:        Scramble key, kept so the scramble can be inverted
    """

    id: str
    x: np.ndarray
    y: int
    t: int = 0
    mask: typing.Optional[np.ndarray] = None
    t_clean: typing.Optional[int] = None
    treatment: str = ""
    key: typing.Optional[int] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        object.__setattr__(self, "x", x)
        if self.t_clean is None:
            object.__setattr__(self, "t_clean", self.t)
        if x.ndim not in (1, 3):
            raise DomainError(
                f"Sample {self.id}: x must be H x W x C or a vector, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)) or x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise DomainError(f"Sample {self.id}: values must lie in [0,1]")
        if self.t not in (0, 1) or self.t_clean not in (0, 1):
            raise DomainError(
                f"Sample {self.id}: treatment must be 0 or 1, got {self.t}"
            )
        if int(self.y) < 0:
            raise DomainError(
                f"Sample {self.id}: class label must be nonnegative, got {self.y}"
            )
        object.__setattr__(self, "y", int(self.y))
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=np.uint8)
            if x.ndim != 3 or mask.shape != x.shape[:2]:
                raise DomainError(
                    f"Sample {self.id}: mask shape {mask.shape} does not match x {x.shape}"
                )
            if not np.all((mask == 0) | (mask == 1)):
                raise DomainError(f"Sample {self.id}: mask values must be 0 or 1")
            object.__setattr__(self, "mask", mask)

    def same_as(self, other: "Sample") -> bool:
        """True if every field is identical, comparing arrays bit for bit"""
        if (self.id, self.y, self.t, self.t_clean, self.treatment, self.key) != (
            other.id,
            other.y,
            other.t,
            other.t_clean,
            other.treatment,
            other.key,
        ):
            return False
        if self.x.shape != other.x.shape or self.x.tobytes() != other.x.tobytes():
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        return self.mask is None or np.array_equal(self.mask, other.mask)


@dataclasses.dataclass(frozen=True, eq=False)
class DatasetManifest:
    """An immutable, ordered collection of samples and its metadata"""

    records: typing.Tuple[Sample, ...]
    n_classes: int
    mode: str
    flip_rate: float = 0.0
    seed: int = 0
    planted_ate: typing.Optional[float] = None
    flip_count: int = 0
    treatments: typing.Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "treatments", tuple(self.treatments))
        if self.mode not in consts.INPUT_MODES:
            raise DomainError(f"Unknown manifest mode '{self.mode}'")
        if self.n_classes < 2:
            raise DomainError(
                f"A manifest needs at least 2 classes, got {self.n_classes}"
            )
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DomainError("Manifest record ids are not unique")
        for record in self.records:
            if record.y >= self.n_classes:
                raise DomainError(
                    f"Sample {record.id}: class {record.y} is not below K={self.n_classes}"
                )

    def __len__(self):
        return len(self.records)

    @property
    def treated_fraction(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean(self.t))

    @property
    def x(self) -> np.ndarray:
        """All inputs stacked along a new first axis"""
        return np.stack([r.x for r in self.records])

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records], dtype=np.int64)

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records], dtype=np.int64)

    @property
    def t_clean(self) -> np.ndarray:
        return np.array([r.t_clean for r in self.records], dtype=np.int64)

    @property
    def ids(self) -> typing.List[str]:
        return [r.id for r in self.records]

    @property
    def sample_shape(self) -> typing.Tuple[int, ...]:
        return self.records[0].x.shape

    def subset(self, indices) -> "DatasetManifest":
        """A manifest holding the records at `indices`, in the order given"""
        records = tuple(self.records[int(i)] for i in indices)
        return dataclasses.replace(self, records=records)

    def header(self, storage: str) -> typing.Dict:
        return {
            "format": consts.MANIFEST_FORMAT,
            "version": consts.MANIFEST_VERSION,
            "K": self.n_classes,
            "mode": self.mode,
            "treated_fraction": self.treated_fraction,
            "flip_rate": self.flip_rate,
            "seed": self.seed,
            "planted_ate": self.planted_ate,
            "flip_count": self.flip_count,
            "treatments": list(self.treatments),
            "storage": storage,
            "count": len(self.records),
        }


def flip_treatments(
    manifest: DatasetManifest, n: float, rng: np.random.Generator
) -> DatasetManifest:
    """Flip each observed treatment independently with probability n

    The clean treatment on each record is left alone.
    A zero rate returns the manifest untouched.
    """
    if not 0.0 <= n <= 1.0:
        raise DomainError(f"Flip rate must be in [0,1], got {n}")
    if n == 0.0:
        return manifest
    flips = rng.random(len(manifest)) < n
    records = tuple(
        dataclasses.replace(r, t=1 - r.t) if flip else r
        for r, flip in zip(manifest.records, flips)
    )
    count = int(flips.sum())
    logger.debug(f"Flipped {count} of {len(manifest)} treatment labels at rate {n}")
    return dataclasses.replace(
        manifest, records=records, flip_rate=n, flip_count=manifest.flip_count + count
    )


class _SidecarWriter:
    def __init__(self, fp):
        self.fp = fp
        self.offset = 0

    def put(self, array: np.ndarray) -> typing.Dict:
        flat = np.ascontiguousarray(array, dtype="<f8").ravel()
        self.fp.write(flat.tobytes())
        entry = {
            "shape": list(array.shape),
            "offset": self.offset,
            "count": int(flat.size),
        }
        self.offset += int(flat.size)
        return entry


def _inline(array: np.ndarray) -> typing.Dict:
    flat = np.asarray(array, dtype=np.float64).ravel()
    return {"shape": list(array.shape), "data": [float(v) for v in flat]}


def write_manifest(manifest: DatasetManifest, path: str, storage: str = "sidecar"):
    """Write a manifest file, plus a binary sidecar if storage is 'sidecar'

    Files are written under temporary names and moved into place,
    so a failed write never leaves a truncated manifest behind.
    """
    if storage not in ("inline", "sidecar"):
        raise DomainError(f"storage must be 'inline' or 'sidecar', got '{storage}'")
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmppath = f"{path}.tmp"
    sidecarpath = f"{path}.bin"
    tmpsidecar = f"{sidecarpath}.tmp"

    sidecar_fp = open(tmpsidecar, "wb") if storage == "sidecar" else None
    try:
        sidecar = _SidecarWriter(sidecar_fp) if sidecar_fp else None
        encode = sidecar.put if sidecar else _inline
        with open(tmppath, "w") as fp:
            fp.write(json.dumps(manifest.header(storage), sort_keys=True) + "\n")
            for record in manifest.records:
                line = {
                    "id": record.id,
                    "y": record.y,
                    "t": record.t,
                    "t_clean": record.t_clean,
                    "treatment": record.treatment,
                    "key": record.key,
                    "x": encode(record.x),
                    "mask": None if record.mask is None else encode(record.mask),
                }
                fp.write(json.dumps(line, sort_keys=True) + "\n")
    finally:
        if sidecar_fp:
            sidecar_fp.close()

    if storage == "sidecar":
        os.replace(tmpsidecar, sidecarpath)
    elif os.path.exists(sidecarpath):
        os.remove(sidecarpath)
    os.replace(tmppath, path)
    logger.info(
        f"Wrote manifest with {len(manifest)} records to {path} ({storage} storage)"
    )


def _array(
    entry: typing.Dict, sidecar: typing.Optional[np.ndarray], where: str
) -> np.ndarray:
    shape = tuple(entry["shape"])
    if "data" in entry:
        return np.array(entry["data"], dtype=np.float64).reshape(shape)
    if sidecar is None:
        raise TltConfigurationError(
            f"{where} refers to a sidecar, but no sidecar file exists"
        )
    start, count = int(entry["offset"]), int(entry["count"])
    if start + count > sidecar.size:
        raise TltConfigurationError(f"{where} points past the end of the sidecar file")
    return sidecar[start : start + count].astype(np.float64).reshape(shape)


def read_manifest(path: str) -> DatasetManifest:
    """Read a manifest file written by write_manifest()"""
    if not os.path.isfile(path):
        raise TltConfigurationError(f"Manifest {path} does not exist")
    with open(path) as fp:
        lines = [line for line in fp.read().splitlines() if line.strip()]
    if not lines:
        raise TltConfigurationError(f"Manifest {path} is empty")

    key_exc = None
    try:
        header = json.loads(lines[0])
        if header["format"] != consts.MANIFEST_FORMAT:
            raise TltConfigurationError(f"{path} is not a tlt manifest")
        if header["version"] != consts.MANIFEST_VERSION:
            raise TltConfigurationError(
                f"Manifest {path} has unsupported version {header['version']}"
            )
        storage = header["storage"]
        n_classes = header["K"]
        mode = header["mode"]
    except KeyError as exc:
        key_exc = exc
    except json.JSONDecodeError as exc:
        raise TltConfigurationError(f"Manifest {path} has an unreadable header: {exc}")
    if key_exc:
        raise TltConfigurationError(
            f"Manifest {path} header is missing '{key_exc.args[0]}'"
        )

    sidecar = None
    if storage == "sidecar":
        sidecarpath = f"{path}.bin"
        if not os.path.isfile(sidecarpath):
            raise TltConfigurationError(
                f"Manifest {path} needs sidecar {sidecarpath}, which does not exist"
            )
        sidecar = np.fromfile(sidecarpath, dtype="<f8")

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        where = f"{path} line {lineno}"
        try:
            entry = json.loads(line)
            mask = entry.get("mask")
            if mask is not None:
                mask = _array(mask, sidecar, where).astype(np.uint8)
            records.append(
                Sample(
                    id=entry["id"],
                    x=_array(entry["x"], sidecar, where),
                    y=entry["y"],
                    t=entry["t"],
                    mask=mask,
                    t_clean=entry.get("t_clean"),
                    treatment=entry.get("treatment", ""),
                    key=entry.get("key"),
                )
            )
        except KeyError as exc:
            raise TltConfigurationError(f"{where} is missing '{exc.args[0]}'")
        except json.JSONDecodeError as exc:
            raise TltConfigurationError(f"{where} is not valid JSON: {exc}")
        except (DomainError, ValueError, TypeError) as exc:
            raise TltConfigurationError(f"{where} is malformed: {exc}")

    try:
        manifest = DatasetManifest(
            records=tuple(records),
            n_classes=n_classes,
            mode=mode,
            flip_rate=header.get("flip_rate", 0.0),
            seed=header.get("seed", 0),
            planted_ate=header.get("planted_ate"),
            flip_count=header.get("flip_count", 0),
            treatments=tuple(header.get("treatments", [])),
        )
    except DomainError as exc:
        raise TltConfigurationError(f"Manifest {path} is malformed: {exc}")
    if "count" in header and header["count"] != len(records):
        raise TltConfigurationError(
            f"Manifest {path} declares {header['count']} records but has {len(records)}"
        )
    declared = header.get("treated_fraction", manifest.treated_fraction)
    if records and abs(manifest.treated_fraction - declared) > 1.0 / len(records):
        raise TltConfigurationError(
            f"Manifest {path} treated_fraction does not match its records"
        )
    logger.debug(f"Read manifest {path}: {len(records)} {mode} records, K={n_classes}")
    return manifest
