import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, ValidationError

from config import ForestConfig
from errors import CorruptModelError, EmptyDataError, MissingFileError, SingleClassError, VersionMismatchError
from models.features import FEATURE_NAMES, N_FEATURES, Label, PassageFeatureVector

logger = logging.getLogger(__name__)

MODEL_FORMAT = "gaze-anchor-forest"
MODEL_VERSION = 1
LEAF = -1


@dataclass(frozen=True)
class DecisionTree:
    """one CART tree stored as parallel node arrays; node 0 is the root.

    Attributes:
        feature (np.ndarray): split feature per node, -1 for leaves
        threshold (np.ndarray): rows with x[feature] <= threshold go left
        left (np.ndarray): left child index, -1 for leaves
        right (np.ndarray): right child index, -1 for leaves
        value (np.ndarray): (n_nodes, 2) weighted class totals [NotAnnotated, Annotated]
        importances (np.ndarray): impurity decrease per feature, normalized when non-zero
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    importances: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int(np.count_nonzero(self.feature != LEAF))

    def leaf_proba(self, X: np.ndarray) -> np.ndarray:
        """probability of Annotated at the leaf each row reaches."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] != LEAF
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] != LEAF
        counts = self.value[node]
        return counts[:, 1] / counts.sum(axis=1)


@dataclass(frozen=True)
class TrainedForest:
    trees: Tuple[DecisionTree, ...]
    feature_importances: np.ndarray
    config: ForestConfig


def to_matrix(rows: Sequence[PassageFeatureVector]) -> Tuple[np.ndarray, np.ndarray]:
    """feature matrix and 0/1 targets; unknown labels map to -1."""
    X = np.array([r.values() for r in rows], dtype=np.float64).reshape(len(rows), N_FEATURES)
    y = np.array(
        [-1 if r.label.as_int is None else r.label.as_int for r in rows], dtype=np.int64
    )
    return X, y


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    features: np.ndarray,
    min_leaf: int,
) -> Optional[Tuple[int, float, float]]:
    """lowest weighted child Gini over the given features.

    returns (feature, threshold, child impurity * node weight) or None when
    no feature has a valid cut. ties keep the lowest feature, then the lowest
    threshold.
    """
    n = len(y)
    features = np.sort(features)
    sub = X[:, features]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    ws = w[order]
    w1 = np.cumsum(ws * y[order], axis=0)[:-1]
    wl = np.cumsum(ws, axis=0)[:-1]
    total, total1 = ws.sum(axis=0), (ws * y[order]).sum(axis=0)
    wr, wr1 = total - wl, total1 - w1

    # weight * gini for a binary node is 2 * w1 * w0 / w
    child = 2.0 * w1 * (wl - w1) / wl + 2.0 * wr1 * (wr - wr1) / wr

    valid = xs[1:] > xs[:-1]
    sizes = np.arange(1, n)
    valid &= ((sizes >= min_leaf) & (n - sizes >= min_leaf))[:, None]
    if not valid.any():
        return None
    child = np.where(valid, child, np.inf)

    best_rows = np.argmin(child, axis=0)
    best_vals = child[best_rows, np.arange(len(features))]
    col = int(np.argmin(best_vals))
    k = int(best_rows[col])
    lo, hi = float(xs[k, col]), float(xs[k + 1, col])
    threshold = (lo + hi) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return int(features[col]), threshold, float(best_vals[col])


def _class_weights(y: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return np.ones(2)
    counts = np.bincount(y, minlength=2).astype(np.float64)
    with np.errstate(divide="ignore"):
        weights = np.where(counts > 0, len(y) / (2.0 * counts), 0.0)
    return weights


def grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, tree_index: int) -> DecisionTree:
    """grow one tree on its own resample, seeded from (cfg.seed, tree_index)."""
    rng = np.random.default_rng([cfg.seed, tree_index])
    if cfg.bootstrap:
        sample = rng.integers(0, len(y), size=len(y))
        Xs, ys = X[sample], y[sample]
    else:
        Xs, ys = X, y
    ws = _class_weights(ys, cfg.class_weighting)[ys]

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[Tuple[float, float]] = []
    importances = np.zeros(N_FEATURES)

    def new_node(idx: np.ndarray) -> int:
        w1 = float(ws[idx][ys[idx] == 1].sum())
        value.append((float(ws[idx].sum()) - w1, w1))
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        return len(feature) - 1

    stack = [(new_node(np.arange(len(ys))), np.arange(len(ys)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        w0, w1 = value[node]
        if w0 == 0 or w1 == 0:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        if len(idx) < 2 * cfg.min_samples_leaf:
            continue

        # sampled features first; fall through to the rest if none can cut
        order = rng.permutation(N_FEATURES)
        k = cfg.features_per_split
        found = _best_split(Xs[idx], ys[idx], ws[idx], order[:k], cfg.min_samples_leaf)
        if found is None and k < N_FEATURES:
            found = _best_split(Xs[idx], ys[idx], ws[idx], order[k:], cfg.min_samples_leaf)
        if found is None:
            continue

        f, thr, child_impurity = found
        importances[f] += max(0.0, 2.0 * w0 * w1 / (w0 + w1) - child_impurity)
        goes_left = Xs[idx, f] <= thr
        left_idx, right_idx = idx[goes_left], idx[~goes_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        stack.append((right[node], right_idx, depth + 1))
        stack.append((left[node], left_idx, depth + 1))

    total = importances.sum()
    if total > 0:
        importances = importances / total

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64).reshape(-1, 2),
        importances=importances,
    )


def _forest_importances(trees: Sequence[DecisionTree]) -> np.ndarray:
    mean = np.mean([t.importances for t in trees], axis=0)
    total = mean.sum()
    if total <= 0:
        return np.full(N_FEATURES, 1.0 / N_FEATURES)
    return mean / total


def train_forest(
    rows: Sequence[PassageFeatureVector], cfg: ForestConfig = ForestConfig()
) -> TrainedForest:
    """bagged Gini trees on labelled feature vectors.

    each tree draws its own generator from (cfg.seed, tree index), so the
    model does not depend on how trees are scheduled across workers.

    Args:
        rows (Sequence[PassageFeatureVector]): rows with Annotated/NotAnnotated labels
        cfg (ForestConfig): forest settings

    Returns:
        TrainedForest: immutable model

    Raises:
        EmptyDataError: no labelled rows
        SingleClassError: only one class present
    """
    rows = [r for r in rows if r.label is not Label.UNKNOWN]
    if not rows:
        raise EmptyDataError("no labelled rows to train on")
    X, y = to_matrix(rows)
    if len(np.unique(y)) < 2:
        raise SingleClassError("training data holds a single class")

    trees = Parallel(n_jobs=cfg.n_jobs)(
        delayed(grow_tree)(X, y, cfg, i) for i in range(cfg.n_trees)
    )
    logger.debug(
        "grew %d trees on %d rows (%d annotated)", len(trees), len(y), int(y.sum())
    )
    return TrainedForest(tuple(trees), _forest_importances(trees), cfg)


def predict_proba(
    model: TrainedForest,
    rows: Union[PassageFeatureVector, Sequence[PassageFeatureVector], np.ndarray],
) -> Union[float, np.ndarray]:
    """mean leaf probability of Annotated over the trees.

    a single PassageFeatureVector gives a float, anything else an array.
    """
    if isinstance(rows, PassageFeatureVector):
        return float(predict_proba(model, np.array([rows.values()], dtype=np.float64))[0])
    if isinstance(rows, np.ndarray):
        X = rows.astype(np.float64, copy=False).reshape(-1, N_FEATURES)
    else:
        X, _ = to_matrix(rows)
    if len(X) == 0:
        return np.zeros(0)
    proba = np.zeros(len(X))
    for tree in model.trees:
        proba += tree.leaf_proba(X)
    return np.clip(proba / len(model.trees), 0.0, 1.0)


def predict_labels(model: TrainedForest, X: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, X) >= threshold).astype(np.int64)


def feature_importance(model: TrainedForest) -> List[Tuple[str, float]]:
    """(feature name, score) pairs, highest first; scores sum to 1."""
    pairs = zip(FEATURE_NAMES, model.feature_importances.tolist())
    return sorted(pairs, key=lambda p: (-p[1], FEATURE_NAMES.index(p[0])))


class _TreeFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    feature: List[int]
    threshold: List[float]
    left: List[int]
    right: List[int]
    value: List[Tuple[float, float]]
    importances: List[float]


class _ModelFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format: Literal["gaze-anchor-forest"]
    version: int
    config: ForestConfig
    feature_names: List[str]
    feature_importances: List[float]
    trees: List[_TreeFile]


def save_model(model: TrainedForest, path: Path) -> None:
    document = _ModelFile(
        format=MODEL_FORMAT,
        version=MODEL_VERSION,
        config=model.config.model_copy(update={"n_jobs": 1}),  # worker count is not part of the model
        feature_names=list(FEATURE_NAMES),
        feature_importances=model.feature_importances.tolist(),
        trees=[
            _TreeFile(
                feature=t.feature.tolist(),
                threshold=t.threshold.tolist(),
                left=t.left.tolist(),
                right=t.right.tolist(),
                value=[tuple(v) for v in t.value.tolist()],
                importances=t.importances.tolist(),
            )
            for t in model.trees
        ],
    )
    Path(path).write_text(document.model_dump_json(indent=1) + "\n")
    logger.info("saved %d-tree model to %s", len(model.trees), path)


def _tree_from_file(tree: _TreeFile, index: int) -> DecisionTree:
    n = len(tree.feature)
    if n == 0 or any(
        len(a) != n for a in (tree.threshold, tree.left, tree.right, tree.value)
    ):
        raise CorruptModelError(f"tree {index}: node arrays disagree in length")
    if len(tree.importances) != N_FEATURES:
        raise CorruptModelError(f"tree {index}: expected {N_FEATURES} importances")

    feature = np.array(tree.feature, dtype=np.int64)
    left = np.array(tree.left, dtype=np.int64)
    right = np.array(tree.right, dtype=np.int64)
    internal = feature != LEAF
    if (feature[internal] >= N_FEATURES).any() or (feature < LEAF).any():
        raise CorruptModelError(f"tree {index}: split feature out of range")
    children = np.concatenate((left[internal], right[internal]))
    if ((children <= 0) | (children >= n)).any():
        raise CorruptModelError(f"tree {index}: child index out of range")

    return DecisionTree(
        feature=feature,
        threshold=np.array(tree.threshold, dtype=np.float64),
        left=left,
        right=right,
        value=np.array(tree.value, dtype=np.float64).reshape(-1, 2),
        importances=np.array(tree.importances, dtype=np.float64),
    )


def load_model(path: Path) -> TrainedForest:
    """read a model written by save_model.

    Raises:
        MissingFileError: no such file
        VersionMismatchError: format version other than 1
        CorruptModelError: truncated or structurally invalid file
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    try:
        raw = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptModelError(f"{path}: {e}") from e

    if not isinstance(raw, dict):
        raise CorruptModelError(f"{path}: not a model document")
    if raw.get("version") != MODEL_VERSION:
        raise VersionMismatchError(
            f"{path}: model version {raw.get('version')!r}, expected {MODEL_VERSION}"
        )

    try:
        document = _ModelFile.model_validate(raw)
    except ValidationError as e:
        raise CorruptModelError(f"{path}: {e}") from e
    if tuple(document.feature_names) != FEATURE_NAMES:
        raise CorruptModelError(f"{path}: feature names do not match")
    if not document.trees:
        raise CorruptModelError(f"{path}: model has no trees")

    trees = tuple(_tree_from_file(t, i) for i, t in enumerate(document.trees))
    return TrainedForest(
        trees=trees,
        feature_importances=np.array(document.feature_importances, dtype=np.float64),
        config=document.config,
    )
