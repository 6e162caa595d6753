TREATMENT_KINDS = [
    "scramble",
    "object_mask",
    "background_refill",
    "gaussian",
    "fgsm",
]

# Kinds that need an object mask on the sample
MASK_TREATMENT_KINDS = ["object_mask", "background_refill"]

VARIANTS = ["TLT", "CVAE_PRIME", "CEVAE_PRIME"]

INPUT_MODES = ["image", "tabular"]

SHAPE_VOCABULARY = ["disc", "cross", "square"]

HISTORY_COLUMNS = [
    "epoch",
    "total",
    "recon_x",
    "recon_t",
    "recon_y",
    "kl",
    "aux_t",
    "aux_y",
    "acc",
    "t_acc",
]

OUTCOME_FUNCTIONALS = ["true_class", "true_class_argmax", "positive_class"]

REFUTATION_KINDS = ["common_cause", "placebo", "subset"]

MANIFEST_FORMAT = "tlt-manifest"
MANIFEST_VERSION = 1
CHECKPOINT_VERSION = 1

# Neutral gray used by object masking
OBJECT_MASK_FILL = 0.5

# Lower bound on posterior variances
VARIANCE_FLOOR = 1e-6

# Probabilities are clamped here before taking logs
PROBABILITY_FLOOR = 1e-12

# TFR denominators at or below this are flagged rather than divided by
TFR_DENOMINATOR_GUARD = 1e-8

INCOMPLETE_MARKER = ".incomplete"
