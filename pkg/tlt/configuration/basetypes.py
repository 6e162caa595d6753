"""Typed configuration sections

Every section is a dataclass with defaults for every field.
Sections are built from YAML mappings with `fromdict()`,
which rejects unknown keys and type-checks every value.
Programmatic construction runs the same invariant checks in `__post_init__`.
"""

import dataclasses
import typing

from tlt import consts
from tlt.errors import DomainError, TltConfigurationError


def _parse_value(where: str, value, typ):
    """Check and coerce a single YAML value against a field type"""
    origin = typing.get_origin(typ)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise TltConfigurationError(
                f"Setting '{where}' must be a list, not {value!r}"
            )
        args = typing.get_args(typ)
        elemtype = args[0] if args else None
        items = [
            _parse_value(f"{where}[{idx}]", item, elemtype) if elemtype else item
            for idx, item in enumerate(value)
        ]
        return tuple(items) if origin is tuple else items
    if origin is dict:
        if not isinstance(value, dict):
            raise TltConfigurationError(
                f"Setting '{where}' must be a mapping, not {value!r}"
            )
        return {str(k): str(v) for k, v in value.items()}
    if typ is bool:
        if not isinstance(value, bool):
            raise TltConfigurationError(
                f"Setting '{where}' must be true or false, not {value!r}"
            )
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TltConfigurationError(
                f"Setting '{where}' must be an integer, not {value!r}"
            )
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TltConfigurationError(
                f"Setting '{where}' must be a number, not {value!r}"
            )
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise TltConfigurationError(
                f"Setting '{where}' must be a string, not {value!r}"
            )
        return value
    if typing.get_origin(typ) is typing.Union:
        # Optional[...]
        if value is None:
            return None
        inner = [a for a in typing.get_args(typ) if a is not type(None)][0]
        return _parse_value(where, value, inner)
    return value


def section_kwargs(
    cls, mapping: typing.Optional[typing.Dict], section: str, skip=()
) -> typing.Dict:
    """Turn a YAML mapping into constructor keyword arguments for a dataclass section

    cls:        The dataclass type
    mapping:    The YAML mapping, or None for all defaults
    section:    Dotted name used in error messages
    skip:       Field names the caller parses itself; they are returned untouched
    """
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise TltConfigurationError(
            f"Section '{section}' must be a mapping, not {mapping!r}"
        )
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - set(fields))
    if unknown:
        raise TltConfigurationError(
            f"Unknown setting(s) in section '{section}': {', '.join(str(u) for u in unknown)}"
        )
    kwargs = {}
    for name, value in mapping.items():
        if name in skip:
            kwargs[name] = value
        else:
            kwargs[name] = _parse_value(f"{section}.{name}", value, fields[name].type)
    return kwargs


def build_section(cls, mapping, section: str, **parsed):
    """Construct a section, reporting invariant failures as configuration errors"""
    kwargs = section_kwargs(cls, mapping, section, skip=tuple(parsed))
    kwargs.update(parsed)
    try:
        return cls(**kwargs)
    except DomainError as exc:
        raise TltConfigurationError(f"Invalid section '{section}': {exc}")


@dataclasses.dataclass(frozen=True)
class TreatmentSpec:
    """One visual treatment

    kind:   One of consts.TREATMENT_KINDS
    ratio:  Fraction of the object masked, for object_mask and background_refill
    sigma:  Standard deviation of additive noise, for gaussian
    eps:    L-infinity budget, for fgsm
    key:    Permutation seed, for scramble; None is the identity permutation
    """

    kind: str = "scramble"
    ratio: float = 1.0
    sigma: float = 0.1
    eps: float = 0.3
    key: typing.Optional[int] = 0

    def __post_init__(self):
        if self.kind not in consts.TREATMENT_KINDS:
            raise DomainError(
                f"Unsupported treatment kind '{self.kind}', expected one of {consts.TREATMENT_KINDS}"
            )
        if not 0.0 <= self.ratio <= 1.0:
            raise DomainError(f"Treatment ratio must be in [0,1], got {self.ratio}")
        if self.sigma < 0:
            raise DomainError(f"Treatment sigma must be nonnegative, got {self.sigma}")
        if self.eps < 0:
            raise DomainError(f"Treatment eps must be nonnegative, got {self.eps}")

    @classmethod
    def fromdict(cls, mapping, section: str = "treatment") -> "TreatmentSpec":
        return build_section(cls, mapping, section)


@dataclasses.dataclass(frozen=True)
class SceneConfig:
    """Synthetic scene rendering settings

    area_band is the (low, high) fraction of the image an object may cover;
    shape parameters are drawn so every rendered object falls inside it.
    """

    height: int = 32
    width: int = 32
    channels: int = 1
    n_classes: int = 2
    smoothing: float = 2.0
    area_band: typing.Tuple[float, float] = (0.05, 0.30)

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise DomainError(
                f"Scenes must be at least 16x16, got {self.height}x{self.width}"
            )
        if self.channels not in (1, 3):
            raise DomainError(f"Scenes have 1 or 3 channels, got {self.channels}")
        if not 2 <= self.n_classes <= len(consts.SHAPE_VOCABULARY):
            raise DomainError(
                f"n_classes must be between 2 and {len(consts.SHAPE_VOCABULARY)}, got {self.n_classes}"
            )
        if (
            len(self.area_band) != 2
            or not 0 < self.area_band[0] < self.area_band[1] < 1
        ):
            raise DomainError(
                f"area_band must be (low, high) with 0 < low < high < 1, got {self.area_band}"
            )
        if self.smoothing < 0:
            raise DomainError(f"smoothing must be nonnegative, got {self.smoothing}")


@dataclasses.dataclass(frozen=True)
class ScmConfig:
    """Tabular structural causal model settings

    z ~ N(0, I_latent_dim)
    t ~ Bern(sigmoid(treatment_strength * w.z))
    x = sigmoid(A z + noise_x * e)
    y = 1[b.z + tau * t + noise_y * e > 0]

    w, A and b are drawn from coefficient_seed; samples are drawn from the data seed.
    """

    latent_dim: int = 4
    feature_dim: int = 10
    noise_x: float = 0.5
    noise_y: float = 1.0
    tau: float = 1.5
    treatment_strength: float = 1.0
    coefficient_seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise DomainError(f"SCM latent_dim must be positive, got {self.latent_dim}")
        if self.feature_dim < 1:
            raise DomainError(
                f"SCM feature_dim must be positive, got {self.feature_dim}"
            )
        if self.noise_x < 0 or self.noise_y < 0:
            raise DomainError("SCM noise scales must be nonnegative")


@dataclasses.dataclass(frozen=True)
class DataConfig:
    """Dataset generation settings"""

    mode: str = "image"
    n: int = 2000
    flip_rate: float = 0.05
    storage: str = "sidecar"
    treatments: typing.List[TreatmentSpec] = dataclasses.field(
        default_factory=lambda: [TreatmentSpec(kind="scramble")]
    )
    scene: SceneConfig = dataclasses.field(default_factory=SceneConfig)
    scm: ScmConfig = dataclasses.field(default_factory=ScmConfig)

    def __post_init__(self):
        if self.mode not in consts.INPUT_MODES:
            raise DomainError(
                f"Unknown data mode '{self.mode}', expected one of {consts.INPUT_MODES}"
            )
        if self.n < 2:
            raise DomainError(f"A dataset needs at least 2 records, got {self.n}")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise DomainError(f"flip_rate must be in [0,1], got {self.flip_rate}")
        if self.storage not in ("inline", "sidecar"):
            raise DomainError(
                f"storage must be 'inline' or 'sidecar', got '{self.storage}'"
            )
        if self.mode == "image" and not self.treatments:
            raise DomainError("Image datasets need at least one treatment")

    @classmethod
    def fromdict(cls, mapping, section: str = "data") -> "DataConfig":
        mapping = mapping or {}
        parsed = {}
        if "treatments" in mapping:
            yamltreatments = mapping["treatments"]
            if not isinstance(yamltreatments, list):
                raise TltConfigurationError(
                    f"Setting '{section}.treatments' must be a list"
                )
            parsed["treatments"] = [
                TreatmentSpec.fromdict(item, f"{section}.treatments[{idx}]")
                for idx, item in enumerate(yamltreatments)
            ]
        if "scene" in mapping:
            parsed["scene"] = build_section(
                SceneConfig, mapping["scene"], f"{section}.scene"
            )
        if "scm" in mapping:
            parsed["scm"] = build_section(ScmConfig, mapping["scm"], f"{section}.scm")
        return build_section(cls, mapping, section, **parsed)


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Network settings

    The input shape fields (image_size, in_channels, input_dim, n_classes)
    are normally filled in from the dataset manifest with `for_input()`.

    posterior_input selects what feeds the posterior heads:
    'attention' uses the pooled attention output,
    'concat' concatenates it with the pooled fused map.
    """

    variant: str = "TLT"
    mode: str = "image"
    n_classes: int = 2
    latent_dim: int = 16
    channels: typing.Tuple[int, ...] = (32, 64, 64)
    heads: int = 1
    d_k: int = 16
    seed: int = 0
    image_size: int = 32
    in_channels: int = 1
    input_dim: int = 10
    hidden: int = 64
    activation: str = "elu"
    posterior_input: str = "attention"
    soft_mixing: bool = False

    def __post_init__(self):
        if self.variant not in consts.VARIANTS:
            raise DomainError(
                f"Unknown variant '{self.variant}', expected one of {consts.VARIANTS}"
            )
        if self.mode not in consts.INPUT_MODES:
            raise DomainError(
                f"Unknown model mode '{self.mode}', expected one of {consts.INPUT_MODES}"
            )
        if self.latent_dim < 1:
            raise DomainError(f"latent_dim must be at least 1, got {self.latent_dim}")
        if self.d_k < 1:
            raise DomainError(f"d_k must be at least 1, got {self.d_k}")
        if self.n_classes < 2:
            raise DomainError(f"n_classes must be at least 2, got {self.n_classes}")
        if self.heads < 1:
            raise DomainError(f"heads must be at least 1, got {self.heads}")
        if not self.channels or any(c < 1 for c in self.channels):
            raise DomainError(
                f"channels must be a nonempty list of positive widths, got {self.channels}"
            )
        if self.mode == "image" and self.image_size % 4 != 0:
            raise DomainError(
                f"image_size must be divisible by 4, got {self.image_size}"
            )
        if self.activation not in ("elu", "relu", "tanh"):
            raise DomainError(f"Unknown activation '{self.activation}'")
        if self.posterior_input not in ("attention", "concat"):
            raise DomainError(
                f"posterior_input must be 'attention' or 'concat', got '{self.posterior_input}'"
            )

    def for_input(
        self, mode: str, shape: typing.Tuple[int, ...], n_classes: int
    ) -> "ModelConfig":
        """A copy of this config sized for inputs of the given mode and per-sample shape"""
        if mode == "image":
            height, width, channels = shape
            if height != width:
                raise DomainError(
                    f"Only square images are supported, got {height}x{width}"
                )
            return dataclasses.replace(
                self,
                mode=mode,
                image_size=height,
                in_channels=channels,
                n_classes=n_classes,
            )
        return dataclasses.replace(
            self, mode=mode, input_dim=shape[0], n_classes=n_classes
        )


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Optimization settings"""

    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    kl_weight: float = 1.0
    aux_weight: float = 1.0
    mc_samples: int = 1
    precision: str = "float32"
    recon_likelihood: str = "gaussian"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise DomainError(
                f"learning_rate must be nonnegative, got {self.learning_rate}"
            )
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise DomainError(f"epochs must be nonnegative, got {self.epochs}")
        if self.mc_samples < 1:
            raise DomainError(f"mc_samples must be at least 1, got {self.mc_samples}")
        if self.precision not in ("float32", "float64"):
            raise DomainError(
                f"precision must be 'float32' or 'float64', got '{self.precision}'"
            )
        if self.recon_likelihood not in ("gaussian", "bernoulli"):
            raise DomainError(
                f"recon_likelihood must be 'gaussian' or 'bernoulli', got '{self.recon_likelihood}'"
            )


@dataclasses.dataclass(frozen=True)
class MetricsConfig:
    """Evaluation and causal analysis settings"""

    bootstrap: int = 1000
    mc_samples: int = 128
    functional: str = "true_class"
    trials: int = 20
    subset_fraction: float = 0.8
    tol_floor: float = 0.02
    tol_placebo: float = 0.05
    layer: str = "encoder"
    saliency_count: int = 8
    batch_size: int = 256
    n_perm: int = 1000

    def __post_init__(self):
        if self.bootstrap < 1:
            raise DomainError(f"bootstrap must be at least 1, got {self.bootstrap}")
        if self.mc_samples < 1:
            raise DomainError(f"mc_samples must be at least 1, got {self.mc_samples}")
        if self.functional not in consts.OUTCOME_FUNCTIONALS:
            raise DomainError(
                f"Unknown outcome functional '{self.functional}', expected one of {consts.OUTCOME_FUNCTIONALS}"
            )
        if self.trials < 1:
            raise DomainError(f"trials must be at least 1, got {self.trials}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise DomainError(
                f"subset_fraction must be in (0,1], got {self.subset_fraction}"
            )
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be at least 1, got {self.batch_size}")


@dataclasses.dataclass(frozen=True)
class SuiteConfig:
    """Experiment suite settings

    treatments:     Row kinds; "none" is the untreated baseline row
    mask_ratios:    Ratio sweep rows added for each masking kind in treatments
    checkpoints:    variant name -> checkpoint path, used when train_inline is false
    folds:          1 uses a single stratified split of test_fraction; k > 1 uses k folds
    """

    variants: typing.List[str] = dataclasses.field(default_factory=lambda: ["TLT"])
    treatments: typing.List[str] = dataclasses.field(
        default_factory=lambda: ["none", "scramble", "object_mask"]
    )
    mask_ratios: typing.List[float] = dataclasses.field(default_factory=list)
    train_inline: bool = True
    checkpoints: typing.Dict[str, str] = dataclasses.field(default_factory=dict)
    folds: int = 1
    test_fraction: float = 0.2

    def __post_init__(self):
        for variant in self.variants:
            if variant not in consts.VARIANTS:
                raise DomainError(
                    f"Unknown variant '{variant}', expected one of {consts.VARIANTS}"
                )
        for kind in self.treatments:
            if kind != "none" and kind not in consts.TREATMENT_KINDS:
                raise DomainError(f"Unknown suite treatment '{kind}'")
        for ratio in self.mask_ratios:
            if not 0.0 <= ratio <= 1.0:
                raise DomainError(f"Mask ratios must be in [0,1], got {ratio}")
        if self.folds < 1:
            raise DomainError(f"folds must be at least 1, got {self.folds}")
        if not 0.0 < self.test_fraction < 1.0:
            raise DomainError(
                f"test_fraction must be in (0,1), got {self.test_fraction}"
            )
