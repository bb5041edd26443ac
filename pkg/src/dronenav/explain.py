"""Per-decision policy explanations over cell-group perturbations.

Two estimators, both producing signed per-cell contribution maps for every
action: a LIME-style local weighted linear surrogate and a permutation-
sampling Shapley estimator. Positive values support the action, negative
values oppose it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .env import Observation
from .policy import PolicyNet, forward_batch, observation_to_input


class RankDeficientError(Exception):
    """Too few distinct masks to fit the surrogate regression."""


@dataclass
class PerturbationScheme:
    """How the window is partitioned and perturbed."""

    groups: np.ndarray          # int group id per cell, same shape as the window
    mask_value: float = 0.0     # substituted for hidden groups (neutral shaping value)
    n_samples: int = 1000
    kernel_width: Optional[float] = None  # LIME locality kernel; default 0.25*sqrt(G)

    @property
    def n_groups(self) -> int:
        return int(self.groups.max()) + 1

    def resolved_kernel_width(self) -> float:
        if self.kernel_width is not None:
            return self.kernel_width
        return 0.25 * float(np.sqrt(self.n_groups))


def block_segmentation(shape: Sequence[int], block: int = 2) -> np.ndarray:
    """Contiguous block groups (2x2 cells by default; cubes in 3D)."""
    grid = np.indices(shape)
    blocks = [axis // block for axis in grid]
    sizes = [int(np.ceil(s / block)) for s in shape]
    ids = blocks[0]
    for axis_blocks, size in zip(blocks[1:], sizes[1:]):
        ids = ids * size + axis_blocks
    _, dense = np.unique(ids, return_inverse=True)
    return dense.reshape(shape)


def default_scheme(values: np.ndarray, n_samples: int = 1000) -> PerturbationScheme:
    return PerturbationScheme(groups=block_segmentation(values.shape), n_samples=n_samples)


@dataclass
class ContributionMap:
    method: str                       # "LIME" | "SHAP"
    per_action: np.ndarray            # (P, *window shape) signed contributions
    n_samples: int
    fidelity: np.ndarray              # per action: LIME weighted R^2, SHAP |efficiency residual|
    greedy_action: int
    probs: np.ndarray                 # model probabilities on the unperturbed input

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "method": self.method,
                "shape": list(self.per_action.shape[1:]),
                "n_samples": self.n_samples,
                "greedy_action": self.greedy_action,
                "probs": [float(p) for p in self.probs],
                "fidelity": [float(f) for f in self.fidelity],
                "per_action": [m.flatten().tolist() for m in self.per_action],
            }
        )


ModelFn = Callable[[np.ndarray], np.ndarray]
"""Maps a batch of observation windows (N, *shape) to action probs (N, P)."""


def policy_model(params: PolicyNet) -> ModelFn:
    def run(batch: np.ndarray) -> np.ndarray:
        inputs = np.stack([observation_to_input(v) for v in batch])
        probs, _ = forward_batch(params, inputs)
        return probs

    return run


def _masked_batch(
    values: np.ndarray, scheme: PerturbationScheme, masks: np.ndarray
) -> np.ndarray:
    """Apply binary group masks: 0 hides the group behind mask_value."""
    cell_keep = masks[:, scheme.groups]  # (N, *shape)
    return np.where(cell_keep.astype(bool), values[None], scheme.mask_value).astype(
        np.float32
    )


def _explain_common(values, model):
    probs = model(values[None])[0]
    return probs, int(np.argmax(probs))


def lime_explain(
    model: ModelFn,
    obs,
    scheme: Optional[PerturbationScheme] = None,
    rng: Optional[np.random.Generator] = None,
) -> ContributionMap:
    """Weighted linear surrogate from random group masks to action probs.

    Sample weights follow an exponential kernel over the Hamming distance
    from the all-on mask; group coefficients are broadcast to their cells.
    """
    values = obs.values if isinstance(obs, Observation) else np.asarray(obs)
    if scheme is None:
        scheme = default_scheme(values)
    if rng is None:
        rng = np.random.default_rng(0)
    g = scheme.n_groups
    if scheme.n_samples < g + 1:
        raise RankDeficientError(
            f"{scheme.n_samples} samples cannot fit {g} coefficients"
        )
    masks = rng.integers(0, 2, size=(scheme.n_samples, g)).astype(np.float64)
    masks[0] = 1.0  # anchor on the unperturbed input
    outputs = model(_masked_batch(values, scheme, masks))   # (N, P)
    hamming = g - masks.sum(axis=1)
    width = scheme.resolved_kernel_width()
    weights = np.exp(-(hamming**2) / (width**2 * g))
    design = np.hstack([np.ones((scheme.n_samples, 1)), masks])
    if np.linalg.matrix_rank(design) < g + 1:
        raise RankDeficientError("perturbation masks are rank deficient")
    w_sqrt = np.sqrt(weights)[:, None]
    coef, *_ = np.linalg.lstsq(design * w_sqrt, outputs * w_sqrt, rcond=None)
    predictions = design @ coef
    residual = outputs - predictions
    mean = np.average(outputs, axis=0, weights=weights)
    ss_res = np.average(residual**2, axis=0, weights=weights)
    ss_tot = np.average((outputs - mean) ** 2, axis=0, weights=weights)
    r2 = np.where(ss_tot > 0, 1.0 - ss_res / np.maximum(ss_tot, 1e-30), 1.0)

    p = outputs.shape[1]
    maps = np.zeros((p,) + values.shape)
    for action in range(p):
        maps[action] = coef[1:, action][scheme.groups]
    probs, greedy = _explain_common(values, model)
    return ContributionMap(
        method="LIME",
        per_action=maps,
        n_samples=scheme.n_samples,
        fidelity=np.asarray(r2),
        greedy_action=greedy,
        probs=probs,
    )


def shap_explain(
    model: ModelFn,
    obs,
    scheme: Optional[PerturbationScheme] = None,
    rng: Optional[np.random.Generator] = None,
) -> ContributionMap:
    """Permutation-sampling Shapley values over cell groups.

    For each sampled permutation, groups are revealed in order; a group's
    marginal contribution is the output change when it is revealed. The
    efficiency residual |sum(contributions) - (f(x) - f(masked))| is
    reported per action, not raised.
    """
    values = obs.values if isinstance(obs, Observation) else np.asarray(obs)
    if scheme is None:
        scheme = default_scheme(values)
    if rng is None:
        rng = np.random.default_rng(0)
    g = scheme.n_groups
    n_perms = max(1, scheme.n_samples // (g + 1))
    probs_full = model(values[None])[0]
    p = len(probs_full)
    base = model(_masked_batch(values, scheme, np.zeros((1, g))))[0]
    totals = np.zeros((g, p))
    for _ in range(n_perms):
        order = rng.permutation(g)
        batch_masks = np.zeros((g + 1, g))
        mask = np.zeros(g)
        for i, group in enumerate(order):
            batch_masks[i] = mask
            mask = mask.copy()
            mask[group] = 1.0
        batch_masks[g] = mask
        outputs = model(_masked_batch(values, scheme, batch_masks))  # (g+1, P)
        marginals = outputs[1:] - outputs[:-1]                       # (g, P)
        totals[order] += marginals
    contributions = totals / n_perms                                  # (g, P)
    residual = np.abs(contributions.sum(axis=0) - (probs_full - base))

    maps = np.zeros((p,) + values.shape)
    for action in range(p):
        maps[action] = contributions[:, action][scheme.groups]
    return ContributionMap(
        method="SHAP",
        per_action=maps,
        n_samples=n_perms * (g + 1),
        fidelity=residual,
        greedy_action=int(np.argmax(probs_full)),
        probs=probs_full,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

LIME_COLORS = {"positive": (0, 200, 0), "negative": (220, 0, 0)}
SHAP_COLORS = {"positive": (255, 105, 180), "negative": (30, 100, 255)}


def render_contributions(contribution: ContributionMap) -> np.ndarray:
    """RGBA overlay per action, alpha proportional to |value| per map.

    Returns an array of shape (P, H, W, 4) uint8 (2D maps only; 3D maps are
    rendered slice-by-slice by the caller).
    """
    colors = LIME_COLORS if contribution.method == "LIME" else SHAP_COLORS
    maps = contribution.per_action
    if maps.ndim == 4:  # (P, X, Y, Z): collapse depth by the strongest cell
        flat_index = np.argmax(np.abs(maps), axis=3)
        maps = np.take_along_axis(maps, flat_index[..., None], axis=3)[..., 0]
    p, h, w = maps.shape
    out = np.zeros((p, h, w, 4), dtype=np.uint8)
    for action in range(p):
        m = maps[action]
        peak = np.abs(m).max()
        if peak <= 0:
            continue
        alpha = np.abs(m) / peak
        positive = m > 0
        for channel in range(3):
            out[action, ..., channel] = np.where(
                positive, colors["positive"][channel], colors["negative"][channel]
            )
        out[action, ..., 3] = np.round(alpha * 255).astype(np.uint8)
        out[action][m == 0] = 0
    return out
