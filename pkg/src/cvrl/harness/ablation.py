"""Paired multi-seed comparisons: augmentation consistency and fine-tune init."""

from __future__ import annotations

import csv
import logging
from dataclasses import replace

import numpy as np

from ..encoder.network import TinyEncoder
from .config import EvalConfig, PretrainConfig
from .evaluation import fine_tune, linear_eval, semi_subset
from .pretrain import CVRLPretrainer

log = logging.getLogger(__name__)

ABLATION_FIELDS = ("seed", "consistent", "per_frame", "difference")
SEMI_FIELDS = ("seed", "fraction", "pretrained", "scratch", "difference")


def consistency_ablation(pretrain_config: PretrainConfig, eval_config: EvalConfig, train, test, seeds) -> list[dict]:
    """Probe accuracy after pretraining with consistent vs per-frame augmentation.

    Both arms share the seed, data order and every other setting.
    """
    rows = []
    for seed in seeds:
        acc = {}
        for mode in ("consistent", "per_frame"):
            cfg = replace(pretrain_config, seed=seed, consistency=mode)
            model = CVRLPretrainer.from_config(cfg).fit(train)
            acc[mode] = linear_eval(replace(eval_config, seed=seed), model.encoder_, train, test).accuracy
            log.info("seed %d %s: %.3f", seed, mode, acc[mode])
        rows.append({"seed": seed, **acc, "difference": acc["consistent"] - acc["per_frame"]})
    return rows


def semi_supervised_comparison(
    encoder: TinyEncoder, eval_config: EvalConfig, train, test, seeds, fraction: float
) -> list[dict]:
    """Fine-tune on a balanced label subset from ``encoder`` and from scratch."""
    rows = []
    for seed in seeds:
        cfg = replace(eval_config, seed=seed)
        subset = semi_subset(train, fraction, seed)
        pre, _ = fine_tune(cfg, subset, test, encoder=encoder)
        scratch, _ = fine_tune(cfg, subset, test, encoder_config=encoder.config)
        log.info("seed %d fraction %g: pretrained %.3f scratch %.3f", seed, fraction, pre, scratch)
        rows.append({"seed": seed, "fraction": fraction, "pretrained": pre, "scratch": scratch,
                     "difference": pre - scratch})
    return rows


def summarize(rows: list[dict], fields) -> dict:
    """Mean of each numeric column except ``seed``."""
    return {f: float(np.mean([r[f] for r in rows])) for f in fields if f != "seed"}


def write_rows_csv(rows: list[dict], fields, path, with_mean: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for r in rows:
            writer.writerow([r[f] for f in fields])
        if with_mean and rows:
            mean = summarize(rows, fields)
            writer.writerow(["mean" if f == "seed" else mean[f] for f in fields])
