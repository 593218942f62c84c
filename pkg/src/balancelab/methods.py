"""Balancing method hooks for the four adjustment strategies.

Each method intervenes at exactly one point of the training loop:

- objective hooks (``unimodal_blend``, ``cosine``, ``kl_align``) replace the
  plain cross-entropy LossBundle;
- the optimization hook (``gradmod``) rescales encoder gradients;
- feed-forward hooks (``feature_mask``, ``feature_drop``) transform encoder
  outputs before the head, during training only;
- the data hook (``resample``) reweights the batch sampler once per epoch.

Dominance is always judged by the trainer's running modality score (the
exponentially smoothed batch-mean true-class probability of each modality's
partial logits); ties go to the lowest modality index. Every method's
strength parameter has a neutral value at which the trainer short-circuits
to the exact baseline path, except the cosine objective, which has no off
switch (its scale must be positive).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import fusion
from .datagen import Dataset
from .errors import SpecError
from .fusion import ForwardCache, FusionModel
from .metrics import FlopsLedger
from .trainer import LossBundle, assemble_grads, cross_entropy, softmax

METHOD_KINDS = (
    "baseline",
    "unimodal_blend",
    "cosine",
    "kl_align",
    "gradmod",
    "feature_mask",
    "feature_drop",
    "resample",
)

CATEGORY = {
    "baseline": "baseline",
    "unimodal_blend": "objective",
    "cosine": "objective",
    "kl_align": "objective",
    "gradmod": "optimization",
    "feature_mask": "feed-forward",
    "feature_drop": "feed-forward",
    "resample": "data",
}

_COS_EPS = 1e-12


@dataclass(frozen=True)
class MethodSpec:
    """Which balancing method is active, and its hyperparameters.

    Only the parameter belonging to ``kind`` is consumed; the rest keep
    their defaults and are ignored.
    """

    kind: str = "baseline"
    w_uni: float = 1.0       # unimodal_blend: weight of each unimodal loss
    scale: float = 4.0       # cosine: logit scale
    kl_weight: float = 0.5   # kl_align: weight of the symmetric divergence
    alpha: float = 1.0       # gradmod: modulation strength
    rho_mask: float = 0.2    # feature_mask: fraction of coordinates zeroed
    p_max: float = 0.3       # feature_drop: drop probability ceiling
    tau: float = 0.5         # resample: contribution temperature

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise SpecError(f"unknown method kind {self.kind!r}")
        if min(self.w_uni, self.kl_weight, self.alpha) < 0:
            raise SpecError("method weights and strengths must be non-negative")
        if not 0.0 <= self.rho_mask <= 1.0:
            raise SpecError(f"rho_mask must be in [0, 1], got {self.rho_mask}")
        if not 0.0 <= self.p_max <= 1.0:
            raise SpecError(f"p_max must be in [0, 1], got {self.p_max}")
        if self.scale <= 0:
            raise SpecError(f"cosine scale must be positive, got {self.scale}")
        if self.tau <= 0:
            raise SpecError(f"tau must be positive, got {self.tau}")

    @property
    def category(self) -> str:
        return CATEGORY[self.kind]

    def is_neutral(self) -> bool:
        """True when the active parameter sits at its do-nothing value."""
        return {
            "baseline": True,
            "unimodal_blend": self.w_uni == 0.0,
            "cosine": False,
            "kl_align": self.kl_weight == 0.0,
            "gradmod": self.alpha == 0.0,
            "feature_mask": self.rho_mask == 0.0,
            "feature_drop": self.p_max == 0.0,
            "resample": math.isinf(self.tau),
        }[self.kind]


# ---------------------------------------------------------------------------
# objective hooks


def unimodal_blend_loss(
    model: FusionModel,
    cache: ForwardCache,
    labels: np.ndarray,
    w_uni: float,
    ledger: FlopsLedger | None = None,
) -> LossBundle:
    """Multimodal loss plus weighted unimodal losses with a conflict guard.

    The total is ``L_mm + w_uni * sum_i L_uni_i`` where ``L_uni_i`` is
    cross-entropy on modality i's partial logits. If a unimodal term's
    head-block gradient points against the multimodal one (negative Frobenius
    inner product), its component along the multimodal direction is removed
    before the two are summed, so the blended update never undoes the
    multimodal step on that block.
    """
    m = model.num_modalities
    n = cache.logits.shape[0]
    loss, g_mm = cross_entropy(cache.logits, labels)
    if ledger is not None:
        ledger.record("softmax_loss", cache.logits.size)

    head_grads: list[np.ndarray] = []
    feature_grads: list[np.ndarray] = []
    bias_grad = g_mm.sum(axis=0)
    for i in range(m):
        z_i = fusion.partial_logits(model, cache, i)
        loss_i, g_i = cross_entropy(z_i, labels)
        g_i = w_uni * g_i
        loss += w_uni * loss_i

        gw_mm = g_mm.T @ cache.features[i]
        gw_uni = g_i.T @ cache.features[i]
        inner = float(np.vdot(gw_uni, gw_mm))
        if inner < 0.0:
            norm_sq = float(np.vdot(gw_mm, gw_mm))
            if norm_sq > 0.0:
                gw_uni = gw_uni - (inner / norm_sq) * gw_mm
        head_grads.append(gw_mm + gw_uni)
        feature_grads.append((g_mm + g_i) @ model.head_blocks[i])
        bias_grad = bias_grad + g_i.sum(axis=0) / m
        if ledger is not None:
            d = cache.features[i].shape[1]
            h = model.num_classes
            ledger.record("softmax_loss", z_i.size)
            ledger.record("matmul_backward", (n, d, h))  # dW(mm) + dPhi
            ledger.record("matmul", (n, d, h))           # dW(uni), separate for the guard
            ledger.record("elementwise", 4 * d * h)      # inner products + projection
    return LossBundle(loss, head_grads, bias_grad, feature_grads)


def cosine_logits(model: FusionModel, cache: ForwardCache, scale: float) -> np.ndarray:
    """Norm-free logits: ``scale * sum_i cos(angle(W_i[h], phi_i))``.

    Invariant to positive rescaling of any feature vector or head row, which
    strips the magnitude advantage a dominant modality earns; only
    directions compete. The head bias is omitted. Norms below 1e-12 are
    clamped so zero vectors are safe.
    """
    if scale <= 0:
        raise SpecError(f"cosine scale must be positive, got {scale}")
    n = cache.logits.shape[0]
    logits = np.zeros((n, model.num_classes))
    for i in range(model.num_modalities):
        w = model.head_blocks[i]
        phi = cache.features[i]
        wn = np.maximum(np.linalg.norm(w, axis=1), _COS_EPS)
        fn = np.maximum(np.linalg.norm(phi, axis=1), _COS_EPS)
        logits += (phi @ w.T) / (fn[:, None] * wn[None, :])
    return scale * logits


def cosine_objective(
    model: FusionModel,
    cache: ForwardCache,
    labels: np.ndarray,
    scale: float,
    ledger: FlopsLedger | None = None,
) -> LossBundle:
    """Cross-entropy on the cosine logits, with exact gradients.

    The head bias receives no gradient (the cosine logits do not use it);
    weight decay still applies to it in the optimizer.
    """
    m = model.num_modalities
    n, h = cache.logits.shape
    per_mod = []
    logits = np.zeros((n, h))
    for i in range(m):
        w = model.head_blocks[i]
        phi = cache.features[i]
        wnorm = np.linalg.norm(w, axis=1)
        fnorm = np.linalg.norm(phi, axis=1)
        wn = np.maximum(wnorm, _COS_EPS)
        fn = np.maximum(fnorm, _COS_EPS)
        cos = (phi @ w.T) / (fn[:, None] * wn[None, :])
        per_mod.append((w, phi, wn, fn, wnorm > _COS_EPS, fnorm > _COS_EPS, cos))
        logits += cos
    logits *= scale

    loss, g = cross_entropy(logits, labels)
    head_grads = []
    feature_grads = []
    for i in range(m):
        w, phi, wn, fn, w_live, f_live, cos = per_mod[i]
        gc = scale * g                      # dL/dcos for this modality
        a = gc * cos
        g_over_fn = gc / fn[:, None]
        w_over_wn = w / wn[:, None]
        dphi = g_over_fn @ w_over_wn
        self_f = (a.sum(axis=1) / fn**2) * f_live
        dphi -= self_f[:, None] * phi
        dw = (g_over_fn.T @ phi) / wn[:, None]
        self_w = (a.sum(axis=0) / wn**2) * w_live
        dw -= self_w[:, None] * w
        head_grads.append(dw)
        feature_grads.append(dphi)
        if ledger is not None:
            d = phi.shape[1]
            ledger.record("matmul_forward", (n, d, h))      # cos products
            ledger.record("elementwise", n * d + h * d + 3 * n * h)  # norms + scaling
            ledger.record("matmul_backward", (n, d, h))     # dphi + dw products
            ledger.record("elementwise", 2 * (n * d + h * d))  # self terms
    if ledger is not None:
        ledger.record("softmax_loss", logits.size)
    return LossBundle(loss, head_grads, np.zeros(h), feature_grads)


def cosine_deploy(model: FusionModel) -> FusionModel:
    """Deployment form of a cosine-trained model.

    Cosine training constrains directions, not magnitudes, and never uses
    the head bias. Normalizing each head row (and zeroing the bias) bakes
    the learned directions into an ordinary linear head so that standard
    masked evaluation ranks classes the way the cosine objective trained
    them to be ranked.
    """
    out = model.copy()
    for blk in out.head_blocks:
        norms = np.maximum(np.linalg.norm(blk, axis=1, keepdims=True), _COS_EPS)
        blk /= norms
    out.head_bias[:] = 0.0
    return out


def symmetric_kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p||q) + KL(q||p) in nats for two probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    s = np.log(p) - np.log(q)
    return float(np.sum(p * s) - np.sum(q * s))


def kl_align_loss(
    model: FusionModel,
    cache: ForwardCache,
    labels: np.ndarray,
    kl_weight: float,
    ledger: FlopsLedger | None = None,
) -> LossBundle:
    """Cross-entropy plus a symmetric KL alignment of partial predictions.

    The addend is ``kl_weight * mean_batch sum_{i<j} [KL(p_i||p_j) +
    KL(p_j||p_i)]`` with ``p_i`` the softmax of modality i's partial logits;
    gradients flow into both operands of every divergence.
    """
    m = model.num_modalities
    n, h = cache.logits.shape
    loss, g_mm = cross_entropy(cache.logits, labels)
    if ledger is not None:
        ledger.record("softmax_loss", cache.logits.size)

    partials = [fusion.partial_logits(model, cache, i) for i in range(m)]
    logps = []
    probs = []
    for z in partials:
        zs = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
        lp = zs - lse
        logps.append(lp)
        probs.append(np.exp(lp))
        if ledger is not None:
            ledger.record("softmax_loss", z.size)

    dz = [np.zeros((n, h)) for _ in range(m)]
    addend = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            s = logps[i] - logps[j]
            kl_ij = (probs[i] * s).sum(axis=1)
            kl_ji = -(probs[j] * s).sum(axis=1)
            addend += float(kl_ij.mean() + kl_ji.mean())
            dz[i] += probs[i] * (s - kl_ij[:, None]) + (probs[i] - probs[j])
            dz[j] += probs[j] * (-s - kl_ji[:, None]) + (probs[j] - probs[i])
            if ledger is not None:
                ledger.record("elementwise", 10 * n * h)
    scale = kl_weight / n
    partial_grads = [scale * d for d in dz]
    loss += kl_weight * addend

    head_grads, bias_grad, feature_grads = assemble_grads(
        model, cache, g_mm, partial_grads=partial_grads, ledger=ledger
    )
    return LossBundle(loss, head_grads, bias_grad, feature_grads)


# ---------------------------------------------------------------------------
# optimization hook


def grad_modulation(scores, alpha: float) -> np.ndarray:
    """Slow-down coefficients for encoders of better-performing modalities.

    For modality i with score ratio ``rho_i = score_i / mean(others)``, the
    coefficient is ``1 - tanh(alpha * (rho_i - 1))`` when ``rho_i > 1`` and
    1 otherwise. Coefficients lie in (0, 1]: the mathematical value is always
    positive, and a floor of 1e-12 keeps it so where tanh saturates to 1.0 in
    float64. Only encoders are rescaled; the head keeps its full gradient.
    """
    if alpha < 0:
        raise SpecError(f"alpha must be non-negative, got {alpha}")
    s = np.asarray(scores, dtype=np.float64)
    m = s.shape[0]
    kappa = np.ones(m)
    for i in range(m):
        others = (s.sum() - s[i]) / (m - 1)
        rho = s[i] / others
        if rho > 1.0:
            kappa[i] = max(1.0 - math.tanh(alpha * (rho - 1.0)), 1e-12)
    return kappa


# ---------------------------------------------------------------------------
# feed-forward hooks


def feature_mask(
    features: list[np.ndarray], scores, rho_mask: float, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    """Zero a random fraction of the dominant modality's feature coordinates.

    Only the highest-running-score modality is touched; the zeroed subset
    (ceil(rho_mask * d) coordinates) is redrawn per batch from ``rng``.
    Returns the new feature list and per-modality multiplicative factors for
    the backward pass (None means identity).
    """
    if not 0.0 <= rho_mask <= 1.0:
        raise SpecError(f"rho_mask must be in [0, 1], got {rho_mask}")
    factors: list[np.ndarray | None] = [None] * len(features)
    if rho_mask == 0.0:
        return features, factors
    dom = int(np.argmax(scores))
    d = features[dom].shape[1]
    k = int(np.ceil(rho_mask * d))
    coords = rng.choice(d, size=k, replace=False)
    factor = np.ones(d)
    factor[coords] = 0.0
    out = list(features)
    out[dom] = features[dom] * factor
    factors[dom] = factor
    return out, factors


def feature_drop(
    features: list[np.ndarray], scores, p_max: float, rng: np.random.Generator
) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    """Drop the dominant modality's whole feature vector per sample.

    The drop probability is ``p_max * clip(rho - 1, 0, 1)`` with rho the
    dominant modality's score ratio; surviving rows are scaled by 1/(1-p) to
    preserve the expected feature value. A numerically saturated p is capped
    at 0.99 with a warning.
    """
    if not 0.0 <= p_max <= 1.0:
        raise SpecError(f"p_max must be in [0, 1], got {p_max}")
    s = np.asarray(scores, dtype=np.float64)
    factors: list[np.ndarray | None] = [None] * len(features)
    if p_max == 0.0:
        return features, factors
    dom = int(np.argmax(s))
    others = (s.sum() - s[dom]) / (len(features) - 1)
    rho = s[dom] / others
    p = p_max * min(max(rho - 1.0, 0.0), 1.0)
    if p >= 1.0:
        warnings.warn("feature_drop probability saturated; capping at 0.99")
        p = 0.99
    if p == 0.0:
        return features, factors
    n = features[dom].shape[0]
    dropped = rng.random(n) < p
    factor = np.where(dropped, 0.0, 1.0 / (1.0 - p))[:, None]
    out = list(features)
    out[dom] = features[dom] * factor
    factors[dom] = factor
    return out, factors


# ---------------------------------------------------------------------------
# data hook


def resample_weights(
    model: FusionModel,
    data: Dataset,
    tau: float,
    ledger: FlopsLedger | None = None,
) -> np.ndarray:
    """Sampling weights that favor samples where the weak modality is informative.

    One full forward over ``data`` yields each sample's per-modality
    contribution (true-class probability under the partial logits). The
    globally weakest modality is the one with the lowest mean contribution;
    sample k gets weight ``exp(contribution_k_weak / tau)``, normalized to
    mean 1. Larger tau flattens the weighting toward uniform.
    """
    if tau <= 0:
        raise SpecError(f"tau must be positive, got {tau}")
    cache = fusion.forward(model, data.features, ledger=ledger)
    rows = np.arange(data.num_samples)
    contribs = []
    for i in range(model.num_modalities):
        p = softmax(fusion.partial_logits(model, cache, i))
        contribs.append(p[rows, data.labels])
        if ledger is not None:
            ledger.record("softmax_loss", p.size)
    weak = int(np.argmin([c.mean() for c in contribs]))
    w = np.exp(contribs[weak] / tau)
    w /= w.mean()
    if ledger is not None:
        ledger.record("elementwise", 3 * data.num_samples)
    return w
