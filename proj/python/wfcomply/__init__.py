# Copyright 2026 The wfcomply Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the wfcomply core: metrics, quantization and the CLI."""

from ._core import (
    Error,
    InputError,
    Vocabulary,
    dist_n,
    kl_term,
    pairwise_loss_from_gap,
    parse_judge_response,
    quantize_rewards,
    render_judge_prompt,
    run_cli,
    sentence_bleu,
    token_f1,
    workflow_accuracy,
)

__all__ = [
    "Error",
    "InputError",
    "Vocabulary",
    "dist_n",
    "kl_term",
    "pairwise_loss_from_gap",
    "parse_judge_response",
    "quantize_rewards",
    "render_judge_prompt",
    "run_cli",
    "sentence_bleu",
    "token_f1",
    "workflow_accuracy",
]
