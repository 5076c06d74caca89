"""Triplet-based diffusion forecaster for sparse ICU time series."""

from ._core import (
    Error,
    RunConfig,
    Schedule,
    crps_gaussian,
    evaluate,
    forward_noise,
    load_config,
    make_schedule,
    parse_config,
    preprocess,
    quantile_levels,
    quantiles,
    read_dataset,
    report,
    reverse_step,
    sacrps,
    sample,
    synth,
    train,
)

__all__ = [
    "Error",
    "RunConfig",
    "Schedule",
    "crps_gaussian",
    "evaluate",
    "forward_noise",
    "load_config",
    "make_schedule",
    "parse_config",
    "preprocess",
    "quantile_levels",
    "quantiles",
    "read_dataset",
    "report",
    "reverse_step",
    "sacrps",
    "sample",
    "synth",
    "train",
]
