"""Named network architectures used by the extraction and prediction phases.

Filter counts and pool widths not pinned down elsewhere are defaults here;
every run manifest records the preset so the assumption is visible.
"""

from .errors import ConfigError
from .net import (
    Conv1D,
    Dense,
    DilatedCausalConv1D,
    Dropout,
    Flatten,
    LastStep,
    MaxPool1D,
    NetworkSpec,
    Residual,
)

EXTRACTION_EPOCHS = 30
PREDICTION_EPOCHS = 50
PREDICTION_MAX_EPOCHS = 200


def cnn_extraction(input_shape, output_dim, dropout=0.2):
    """Three conv blocks (ReLU, max pool, dropout), flattened dense head."""
    layers = []
    for filters in (64, 128, 64):
        layers += [Conv1D(filters, 3, "relu"), MaxPool1D(2), Dropout(dropout)]
    layers += [Flatten(), Dense(output_dim, "linear")]
    return NetworkSpec(input_shape=tuple(input_shape), output_dim=output_dim,
                       layers=tuple(layers))


def tcn1_extraction(input_shape, output_dim, dropout=0.2):
    """Three residual causal conv blocks, kernel 3, no dilation."""
    layers = []
    for filters in (64, 128, 64):
        layers.append(
            Residual(block=(DilatedCausalConv1D(filters, 3, 1, "relu"), Dropout(dropout)))
        )
    layers += [LastStep(), Dense(output_dim, "linear")]
    return NetworkSpec(input_shape=tuple(input_shape), output_dim=output_dim,
                       layers=tuple(layers))


def tcn2_extraction(input_shape, output_dim, dropout=0.2):
    """tcn1 with dilation rates (1, 2, 4) across the three blocks."""
    layers = []
    for filters, rate in zip((64, 128, 64), (1, 2, 4)):
        layers.append(
            Residual(block=(DilatedCausalConv1D(filters, 3, rate, "relu"), Dropout(dropout)))
        )
    layers += [LastStep(), Dense(output_dim, "linear")]
    return NetworkSpec(input_shape=tuple(input_shape), output_dim=output_dim,
                       layers=tuple(layers))


def tcn_prediction(input_shape, output_dim):
    """Dilated causal stack (rates 1,2,4,8; 64 filters; kernel 2) with a
    dense head on the last step. Receptive field 1 + sum((m-1)*r) = 16."""
    layers = [DilatedCausalConv1D(64, 2, r, "relu") for r in (1, 2, 4, 8)]
    layers += [LastStep(), Dense(output_dim, "linear")]
    return NetworkSpec(input_shape=tuple(input_shape), output_dim=output_dim,
                       layers=tuple(layers))


def dense_bayes(input_shape, output_dim, width=10, hidden=2):
    """Flattened dense tanh net used by the Bayesian samplers."""
    layers = [Flatten()] if len(input_shape) == 2 else []
    layers += [Dense(width, "tanh") for _ in range(hidden)]
    layers += [Dense(output_dim, "linear")]
    return NetworkSpec(input_shape=tuple(input_shape), output_dim=output_dim,
                       layers=tuple(layers))


EXTRACTION_PRESETS = {
    "cnn": cnn_extraction,
    "tcn1": tcn1_extraction,
    "tcn2": tcn2_extraction,
}


def extraction_preset(name, input_shape, output_dim):
    try:
        builder = EXTRACTION_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown extraction preset {name!r}; choose from {sorted(EXTRACTION_PRESETS)}"
        ) from None
    return builder(input_shape, output_dim)
