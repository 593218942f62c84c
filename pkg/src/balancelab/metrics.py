"""Performance, Shapley-based modality contribution, and FLOPs accounting.

The value function v(A) is the masked-evaluation accuracy of the model when
only the modalities in subset A are active; v on the empty set is the
accuracy of the pure bias predictor. Modality contributions phi_i average
the marginal gain v(S + i) - v(S) over all orderings of modality inclusion;
the imbalance index is the mean absolute pairwise difference of the phi
(plain |phi_1 - phi_2| for two modalities). With accuracy-valued v the index
lies in [0, 1], is 0 exactly when contributions are equal, and is invariant
to relabeling modalities.

FLOPs conventions (fixed, so totals are reproducible):

- forward matmul (p, q) x (q, r): ``2pqr`` plus ``pr`` when a bias is added
  (one multiply-add = 2 FLOPs);
- its backward: ``4pqr`` (two matmuls);
- elementwise work: 1 FLOP per element;
- softmax plus cross-entropy: 5 FLOPs per logit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import fusion
from .datagen import Dataset
from .errors import ContractError
from .fusion import FusionModel, ModalityMask


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of predictions equal to the labels."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ContractError(
            f"need equal non-empty prediction/label arrays, got {preds.shape} and {labels.shape}"
        )
    return float(np.mean(preds == labels))


def confusion_matrix(preds: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(H, H) counts with true classes on rows and predictions on columns."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def macro_f1(preds: np.ndarray, labels: np.ndarray, num_classes: int) -> float:
    """Unweighted mean over classes of the per-class F1 score.

    A class with zero precision+recall contributes an F1 of 0.
    """
    if num_classes < 2:
        raise ContractError(f"need at least 2 classes, got {num_classes}")
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError("labels outside 0..H-1")
    cm = confusion_matrix(preds, labels, num_classes)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    f1 = np.zeros(num_classes)
    denom = predicted + actual  # 2*TP + FP + FN
    nz = denom > 0
    f1[nz] = 2.0 * tp[nz] / denom[nz]
    return float(f1.mean())


@dataclass
class PerfReport:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray


def evaluate_performance(model: FusionModel, data: Dataset) -> PerfReport:
    cache = fusion.forward(model, data.features)
    preds = fusion.predict(cache.logits)
    return PerfReport(
        accuracy(preds, data.labels),
        macro_f1(preds, data.labels, data.num_classes),
        confusion_matrix(preds, data.labels, data.num_classes),
    )


def value_function(model: FusionModel, data: Dataset, subset: ModalityMask) -> float:
    """Masked-evaluation accuracy using only the modalities in ``subset``."""
    if data.num_samples == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    if len(subset) != model.num_modalities:
        raise ContractError(
            f"subset length {len(subset)} does not match m={model.num_modalities}"
        )
    cache = fusion.forward(model, data.features, mask=subset)
    return accuracy(fusion.predict(cache.logits), data.labels)


@dataclass
class ShapleyReport:
    """Per-modality contributions, the full subset-value table, and the index."""

    phi: tuple[float, ...]
    subset_values: dict[frozenset[int], float]
    imbalance: float


def imbalance(phi) -> float:
    """Mean absolute pairwise difference of the contributions (2 or 3 of them)."""
    phi = tuple(float(p) for p in phi)
    if len(phi) == 2:
        return abs(phi[0] - phi[1])
    if len(phi) == 3:
        # fsum keeps the value invariant under modality relabeling
        pairs = [abs(phi[0] - phi[1]), abs(phi[0] - phi[2]), abs(phi[1] - phi[2])]
        return math.fsum(pairs) / 3.0
    raise ContractError(f"imbalance is defined for 2 or 3 modalities, got {len(phi)}")


def shapley_from_values(values: dict[frozenset[int], float], m: int) -> tuple[float, ...]:
    """Average marginal contributions over all m! inclusion orderings.

    ``values`` must hold one entry per subset of range(m), including the
    empty set and the full set.
    """
    need = 1 << m
    if len(values) != need:
        raise ContractError(f"need all {need} subset values, got {len(values)}")
    marginals: list[list[float]] = [[] for _ in range(m)]
    for perm in itertools.permutations(range(m)):
        seen: set[int] = set()
        for i in perm:
            before = values[frozenset(seen)]
            seen.add(i)
            after = values[frozenset(seen)]
            marginals[i].append(after - before)
    # fsum makes each phi independent of enumeration order, so relabeling
    # modalities permutes the phi bit for bit
    scale = 1.0 / math.factorial(m)
    return tuple(math.fsum(ms) * scale for ms in marginals)


def shapley(model: FusionModel, data: Dataset) -> ShapleyReport:
    """Modality contributions on ``data`` via exhaustive masked evaluation.

    Evaluates v once per subset (2^m evaluations, memoized) before the
    permutation average, so the cost is 2^m forward passes.
    """
    m = model.num_modalities
    if m not in (2, 3):
        raise ContractError(f"shapley supports 2 or 3 modalities, got {m}")
    values: dict[frozenset[int], float] = {}
    for bits in range(1 << m):
        subset = frozenset(i for i in range(m) if bits >> i & 1)
        mask = tuple(i in subset for i in range(m))
        values[subset] = value_function(model, data, mask)
    phi = shapley_from_values(values, m)
    return ShapleyReport(phi, values, imbalance(phi))


_FLOP_CATEGORIES = ("forward_matmul", "backward_matmul", "elementwise", "softmax_loss")


@dataclass
class FlopsLedger:
    """Monotone counter of floating-point operations by category."""

    forward_matmul: int = 0
    backward_matmul: int = 0
    elementwise: int = 0
    softmax_loss: int = 0

    @property
    def total(self) -> int:
        return self.forward_matmul + self.backward_matmul + self.elementwise + self.softmax_loss

    def record(self, kind: str, shape, bias: bool = False) -> "FlopsLedger":
        """Add one operation's cost.

        * ``matmul_forward`` with shape (p, q, r): 2pqr, plus pr if ``bias``;
        * ``matmul_backward`` with shape (p, q, r): 4pqr;
        * ``matmul`` with shape (p, q, r): 2pqr counted as backward-side work
          when ``bias`` is False (used for extra gradient products);
        * ``elementwise`` with an element count: 1 per element;
        * ``softmax_loss`` with a logit count: 5 per logit.
        """
        if kind == "matmul_forward":
            p, q, r = shape
            self.forward_matmul += 2 * p * q * r
            if bias:
                self.forward_matmul += p * r
        elif kind == "matmul_backward":
            p, q, r = shape
            self.backward_matmul += 4 * p * q * r
        elif kind == "matmul":
            p, q, r = shape
            self.backward_matmul += 2 * p * q * r
        elif kind == "elementwise":
            self.elementwise += int(shape)
        elif kind == "softmax_loss":
            self.softmax_loss += 5 * int(shape)
        else:
            raise ContractError(f"unknown op kind {kind!r}")
        return self

    def snapshot(self) -> dict[str, int]:
        return {
            "forward_matmul": self.forward_matmul,
            "backward_matmul": self.backward_matmul,
            "elementwise": self.elementwise,
            "softmax_loss": self.softmax_loss,
            "total": self.total,
        }


def flops_record(ledger: FlopsLedger, kind: str, shape, bias: bool = False) -> FlopsLedger:
    """Functional alias for :meth:`FlopsLedger.record`."""
    return ledger.record(kind, shape, bias=bias)
