"""Per-pixel land-use classification on feature rasters, with PR evaluation.

A deliberately small classifier family (one 32-wide tanh hidden layer and
a softmax head, trained with the same optimizer machinery as the
autoencoder) is applied to three feature kinds: the learned embeddings,
the raw flattened spectrogram, and a plain activity-count density. Keeping
the classifier fixed across kinds isolates the quality of the features.

Evaluation uses a spatial block holdout: 8x8-tile blocks are hashed into
the test set with probability 0.25, which avoids leakage through spatial
autocorrelation and is fully deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .cae import make_optimizer
from .errors import DataError
from .raster import load_array_raster, save_array_raster
from .tiles import TileGrid

IGNORE_LABEL = 255

FEATURE_KINDS = ("embedding", "raw_dft", "activity_count")


@dataclass
class LabelRaster:
    """Small-integer class labels per grid cell; 255 marks ignored cells."""

    grid: TileGrid
    labels: np.ndarray  # (height, width) uint8
    class_table: dict[int, str]

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != (self.grid.height, self.grid.width):
            raise ValueError("label shape does not match grid")
        present = set(np.unique(self.labels).tolist()) - {IGNORE_LABEL}
        missing = present - set(self.class_table)
        if missing:
            raise ValueError(f"labels {sorted(missing)} missing from class table")


def save_labels(lr: LabelRaster, path) -> None:
    """TEMB container (uint8) plus a JSON sidecar naming the classes."""
    save_array_raster(lr.grid, lr.labels[:, :, np.newaxis], path)
    sidecar = Path(str(path) + ".classes.json")
    sidecar.write_text(
        json.dumps({str(k): v for k, v in sorted(lr.class_table.items())}, indent=0)
        + "\n",
        encoding="utf-8",
    )


def load_labels(path) -> LabelRaster:
    grid, data = load_array_raster(path)
    if data.dtype != np.uint8 or data.shape[2] != 1:
        raise DataError(f"{path}: expected single-channel uint8 labels")
    sidecar = Path(str(path) + ".classes.json")
    if not sidecar.exists():
        raise DataError(f"missing class table sidecar {sidecar}")
    table = {int(k): str(v) for k, v in json.loads(sidecar.read_text()).items()}
    return LabelRaster(grid, data[:, :, 0], table)


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: int = 32
    learning_rate: float = 1e-2
    epochs: int = 80
    batch_size: int = 256
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden, epochs, batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class PixelClassifier:
    feature_kind: str
    classes: list[int]  # label ids, ascending; softmax column order
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    feat_mean: np.ndarray
    feat_std: np.ndarray
    config: ClassifierConfig

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _clf_forward(clf: PixelClassifier, x: np.ndarray) -> np.ndarray:
    z = (x - clf.feat_mean) / clf.feat_std
    h = np.tanh(z @ clf.w1.T + clf.b1)
    return _softmax(h @ clf.w2.T + clf.b2)


def train_pixel_classifier(
    features: np.ndarray,
    labels: LabelRaster,
    config: ClassifierConfig,
    feature_kind: str = "embedding",
    pixel_mask: np.ndarray | None = None,
) -> PixelClassifier:
    """Cross-entropy training on the non-ignore pixels of a feature raster.

    features: (height, width, dim). pixel_mask optionally restricts training
    (the spatial holdout passes the train half). Deterministic per seed.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[:2] != labels.labels.shape:
        raise ValueError("feature raster shape does not match labels")
    usable = labels.labels != IGNORE_LABEL
    if pixel_mask is not None:
        usable &= pixel_mask
    x = feats[usable]
    y_raw = labels.labels[usable].astype(np.int64)
    classes = sorted(np.unique(y_raw).tolist())
    if len(classes) < 2:
        raise ValueError(
            f"need at least 2 classes among training pixels, got {classes}"
        )
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap[v] for v in y_raw], dtype=np.int64)

    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-8)
    xs = (x - mean) / std

    rng = np.random.default_rng(config.seed)
    dim, n_classes = xs.shape[1], len(classes)
    w1 = rng.uniform(-1, 1, size=(config.hidden, dim)) / np.sqrt(dim)
    b1 = np.zeros(config.hidden)
    w2 = rng.uniform(-1, 1, size=(n_classes, config.hidden)) / np.sqrt(config.hidden)
    b2 = np.zeros(n_classes)
    params = [w1, b1, w2, b2]
    opt = make_optimizer(config.optimizer, params, config.learning_rate)

    n = xs.shape[0]
    onehot = np.eye(n_classes)[y]
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb, tb = xs[idx], onehot[idx]
            h = np.tanh(xb @ w1.T + b1)
            p = _softmax(h @ w2.T + b2)
            dlogits = (p - tb) / xb.shape[0]
            gw2 = dlogits.T @ h
            gb2 = dlogits.sum(axis=0)
            dh = dlogits @ w2 * (1.0 - h * h)
            gw1 = dh.T @ xb
            gb1 = dh.sum(axis=0)
            opt.step([gw1, gb1, gw2, gb2])

    return PixelClassifier(
        feature_kind=feature_kind,
        classes=classes,
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        feat_mean=mean,
        feat_std=std,
        config=config,
    )


def predict_scores(clf: PixelClassifier, features: np.ndarray) -> np.ndarray:
    """Softmax class probabilities per pixel: (height, width, n_classes)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[2] != clf.input_dim:
        raise ValueError(
            f"feature raster shape {feats.shape} does not match classifier "
            f"input dim {clf.input_dim}"
        )
    h, w, _ = feats.shape
    probs = _clf_forward(clf, feats.reshape(-1, clf.input_dim))
    return probs.reshape(h, w, len(clf.classes))


@dataclass
class PRCurve:
    """Precision/recall over descending score thresholds, plus trapezoid AUC.

    The first point is the zero-recall anchor at the precision of the
    highest-score group; thresholds[0] is +inf for that anchor. Ties are
    grouped: equal scores move together.
    """

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float


def pr_curve(scores: np.ndarray, labels: np.ndarray) -> PRCurve:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0:
        raise ValueError("no positive labels")
    if n_neg == 0:
        raise ValueError("no negative labels")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    # Last index of each tied group of equal scores.
    last = np.nonzero(np.append(np.diff(s_sorted) != 0, True))[0]
    tp_g, fp_g = tp[last], fp[last]
    precision = tp_g / (tp_g + fp_g)
    recall = tp_g / n_pos

    thresholds = np.concatenate([[np.inf], s_sorted[last]])
    precision = np.concatenate([[precision[0]], precision])
    recall = np.concatenate([[0.0], recall])
    auc = float(np.sum(0.5 * (precision[1:] + precision[:-1]) * np.diff(recall)))
    return PRCurve(thresholds, precision, recall, auc)


def spatial_block_split(
    grid: TileGrid, seed: int, block_size: int = 8, test_fraction: float = 0.25
) -> np.ndarray:
    """Boolean (height, width) test mask from a seeded hash of block coords.

    Whole blocks of block_size x block_size tiles (in absolute tile
    coordinates) go to the same side, so neighboring pixels never straddle
    the split.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    cutoff = int(test_fraction * 2**64)
    rows = (grid.origin.y + np.arange(grid.height)) // block_size
    cols = (grid.origin.x + np.arange(grid.width)) // block_size
    block_rows = np.unique(rows)
    block_cols = np.unique(cols)
    decision: dict[tuple[int, int], bool] = {}
    for by in block_rows:
        for bx in block_cols:
            digest = hashlib.blake2b(
                f"{seed}:{bx}:{by}".encode(), digest_size=8
            ).digest()
            decision[(by, bx)] = int.from_bytes(digest, "little") < cutoff
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    for r in range(grid.height):
        for c in range(grid.width):
            mask[r, c] = decision[(rows[r], cols[c])]
    return mask


@dataclass
class ClassMetrics:
    feature_kind: str
    class_id: int
    class_name: str
    n_test: int
    precision: float
    recall: float
    pr_auc: float


@dataclass
class KindResult:
    classifier: PixelClassifier
    scores: np.ndarray  # (height, width, n_classes)
    curves: dict[int, PRCurve]
    accuracy: float


@dataclass
class EvalReport:
    rows: list[ClassMetrics]
    kinds: dict[str, KindResult]
    test_mask: np.ndarray
    class_table: dict[int, str] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        lines = ["feature_kind,class_id,class_name,test_pixels,precision,recall,pr_auc"]
        for r in self.rows:
            lines.append(
                f"{r.feature_kind},{r.class_id},{r.class_name},{r.n_test},"
                f"{r.precision!r},{r.recall!r},{r.pr_auc!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def summary_text(self) -> str:
        out = []
        for kind in sorted(self.kinds):
            res = self.kinds[kind]
            out.append(f"{kind}: test accuracy {res.accuracy:.4f}")
            for r in self.rows:
                if r.feature_kind == kind:
                    out.append(
                        f"  {r.class_name:<14} precision {r.precision:.4f}  "
                        f"recall {r.recall:.4f}  pr_auc {r.pr_auc:.4f}  "
                        f"(n={r.n_test})"
                    )
        return "\n".join(out) + "\n"


def evaluate_report(
    features: Mapping[str, np.ndarray],
    labels: LabelRaster,
    config: ClassifierConfig,
    split_seed: int = 0,
    block_size: int = 8,
    test_fraction: float = 0.25,
) -> EvalReport:
    """Train one classifier per feature kind on a shared split and compare.

    Per class: one-vs-rest PR-AUC on test pixels plus precision/recall at
    the argmax decision. All kinds share the identical split and seed, so
    identical feature rasters produce identical metrics.
    """
    test_mask = spatial_block_split(grid=labels.grid, seed=split_seed,
                                    block_size=block_size, test_fraction=test_fraction)
    usable = labels.labels != IGNORE_LABEL
    class_ids = sorted(int(c) for c in np.unique(labels.labels[usable]))
    for side, side_mask in (("train", ~test_mask), ("test", test_mask)):
        present = set(np.unique(labels.labels[usable & side_mask]).tolist())
        for cid in class_ids:
            if cid not in present:
                raise DataError(
                    f"class {labels.class_table[cid]!r} has no pixels in the "
                    f"{side} split; adjust the scene or split seed"
                )

    rows: list[ClassMetrics] = []
    kinds: dict[str, KindResult] = {}
    for kind in sorted(features):
        feats = features[kind]
        clf = train_pixel_classifier(
            feats, labels, config, feature_kind=kind, pixel_mask=~test_mask
        )
        scores = predict_scores(clf, feats)
        eval_mask = usable & test_mask
        y_true = labels.labels[eval_mask].astype(np.int64)
        probs = scores[eval_mask]
        pred = np.array(clf.classes, dtype=np.int64)[probs.argmax(axis=1)]
        accuracy = float((pred == y_true).mean())

        curves: dict[int, PRCurve] = {}
        for col, cid in enumerate(clf.classes):
            curve = pr_curve(probs[:, col], y_true == cid)
            curves[cid] = curve
            tp = int(((pred == cid) & (y_true == cid)).sum())
            fp = int(((pred == cid) & (y_true != cid)).sum())
            fn = int(((pred != cid) & (y_true == cid)).sum())
            rows.append(
                ClassMetrics(
                    feature_kind=kind,
                    class_id=cid,
                    class_name=labels.class_table[cid],
                    n_test=int((y_true == cid).sum()),
                    precision=tp / (tp + fp) if tp + fp else 0.0,
                    recall=tp / (tp + fn) if tp + fn else 0.0,
                    pr_auc=curve.auc,
                )
            )
        kinds[kind] = KindResult(clf, scores, curves, accuracy)
    return EvalReport(rows, kinds, test_mask, dict(labels.class_table))


def pr_curve_to_csv(curve: PRCurve, path) -> None:
    lines = ["threshold,precision,recall"]
    for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
        lines.append(f"{t!r},{p!r},{r!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
