"""Ablation sweeps over coarse-to-fine settings.

Three variants are compared:

``nonoise``
    observations are inserted without matching noise, no refinement
``norefine``
    noise-matched guidance, no refinement
``refine``
    noise-matched guidance followed by refinement
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError
from .metrics import psnr, ssim
from .sampler import SamplerConfig, c2f_reconstruct

VARIANTS = {
    "nonoise": dict(ksg_noise=False, refine=False),
    "norefine": dict(ksg_noise=True, refine=False),
    "refine": dict(ksg_noise=True, refine=True),
}

CSV_FIELDS = ["variant", "k", "N", "ksg_noise", "refine", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "n_seeds"]


@dataclass(frozen=True)
class Cell:
    variant: str
    k: int
    N: int

    @property
    def flags(self) -> dict:
        return VARIANTS[self.variant]


@dataclass(frozen=True)
class Trial:
    cell: Cell
    seed: int
    psnr: float
    ssim: float


def default_sweep() -> list[Cell]:
    """The 14-cell grid: nonoise at k=40, norefine at k in {8, 40} over
    N in {1, 2, 5, 10}, refine at k in {8, 40} with N=10."""
    Ns = (1, 2, 5, 10)
    cells = [Cell("nonoise", 40, n) for n in Ns]
    cells += [Cell("norefine", k, n) for k in (8, 40) for n in Ns]
    cells += [Cell("refine", k, 10) for k in (8, 40)]
    return cells


def parse_cell(text: str) -> Cell:
    """Parse ``variant:k:N``, e.g. ``refine:8:10``."""
    try:
        variant, k, n = text.split(":")
        cell = Cell(variant, int(k), int(n))
    except ValueError as e:
        raise InvalidArgumentError(f"bad sweep cell {text!r}, expected variant:k:N") from e
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"unknown variant {variant!r}, expected one of {sorted(VARIANTS)}")
    return cell


def run_ablation(x_obs, mask, ground_truth, schedule, denoiser, base: SamplerConfig, cells, seeds,
                 progress=None) -> list[Trial]:
    """Reconstruct every cell for every seed and score against ``ground_truth``.

    The same seed is used for every cell so results are paired across cells.
    """
    if not cells:
        raise InvalidArgumentError("empty sweep")
    trials = []
    for cell in cells:
        for seed in seeds:
            cfg = replace(base, k=cell.k, N=cell.N, seed=int(seed), keep_samples=False, **cell.flags)
            result = c2f_reconstruct(x_obs, mask, schedule, denoiser, cfg)
            trials.append(Trial(cell, int(seed), psnr(ground_truth, result.mean), ssim(ground_truth, result.mean)))
            if progress is not None:
                progress(trials[-1])
    return trials


def summarize(trials) -> list[dict]:
    """One row per cell in first-seen order, with mean and sample std over seeds."""
    groups: dict[Cell, list[Trial]] = {}
    for tr in trials:
        groups.setdefault(tr.cell, []).append(tr)
    rows = []
    for cell, ts in groups.items():
        p = np.array([t.psnr for t in ts])
        s = np.array([t.ssim for t in ts])
        ddof = 1 if len(ts) > 1 else 0
        rows.append({
            "variant": cell.variant,
            "k": cell.k,
            "N": cell.N,
            "ksg_noise": cell.flags["ksg_noise"],
            "refine": cell.flags["refine"],
            "psnr_mean": float(p.mean()),
            "psnr_std": float(p.std(ddof=ddof)),
            "ssim_mean": float(s.mean()),
            "ssim_std": float(s.std(ddof=ddof)),
            "n_seeds": len(ts),
        })
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        for key in ("psnr_mean", "psnr_std", "ssim_mean", "ssim_std"):
            out[key] = repr(float(out[key]))
        out["ksg_noise"] = str(out["ksg_noise"]).lower()
        out["refine"] = str(out["refine"]).lower()
        writer.writerow(out)
    return buf.getvalue()


def paired(trials, a: Cell, b: Cell, metric: str = "psnr"):
    """Per-seed metric pairs ``(a, b)`` for seeds present in both cells."""
    va = {t.seed: getattr(t, metric) for t in trials if t.cell == a}
    vb = {t.seed: getattr(t, metric) for t in trials if t.cell == b}
    common = sorted(set(va) & set(vb))
    return np.array([va[s] for s in common]), np.array([vb[s] for s in common])
