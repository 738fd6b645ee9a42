# SPDX-FileCopyrightText: Copyright (c) 2026 The nvflow Authors
# SPDX-License-Identifier: Apache-2.0

"""Normalizing variational flows."""

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    IncompatibleEstimator,
    Model,
    TrainingAborted,
    default_config,
    generate,
    gmm_true_nll,
    run_cli,
    transport_jacobian,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "IncompatibleEstimator",
    "Model",
    "TrainingAborted",
    "default_config",
    "generate",
    "gmm_true_nll",
    "run_cli",
    "transport_jacobian",
]
