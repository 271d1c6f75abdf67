"""EASE item-item model (closed form) and hard-negative mining."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .corpus import Dataset

MAX_ITEMS = 20_000
_MAGIC = b"EASE"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQd")  # magic, version, n_items, lambda


@dataclass(frozen=True)
class RatingMatrix:
    X: sp.csr_matrix
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=np.float64)
        X.sum_duplicates()
        X.data[:] = 1.0
        X.eliminate_zeros()
        object.__setattr__(self, "X", X)
        if X.shape != (len(self.user_ids), len(self.item_ids)):
            raise ValueError("matrix shape does not match id maps")
        object.__setattr__(self, "user_index", {u: i for i, u in enumerate(self.user_ids)})
        object.__setattr__(self, "item_index", {v: j for j, v in enumerate(self.item_ids)})

    @property
    def n_users(self) -> int:
        return self.X.shape[0]

    @property
    def n_items(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_pairs(cls, pairs, user_ids=None, item_ids=None) -> "RatingMatrix":
        pairs = list(pairs)
        users = tuple(user_ids) if user_ids is not None else tuple(sorted({u for u, _ in pairs}))
        items = tuple(item_ids) if item_ids is not None else tuple(sorted({i for _, i in pairs}))
        ui = {u: k for k, u in enumerate(users)}
        ii = {v: k for k, v in enumerate(items)}
        rows = [ui[u] for u, _ in pairs]
        cols = [ii[i] for _, i in pairs]
        X = sp.csr_matrix((np.ones(len(pairs)), (rows, cols)), shape=(len(users), len(items)))
        return cls(X, users, items)

    @classmethod
    def from_dataset(cls, d: Dataset) -> "RatingMatrix":
        # binary implicit feedback: any review counts as an interaction
        return cls.from_pairs((it.user_id, it.item_id) for it in d.interactions)

    @classmethod
    def from_dense(cls, dense) -> "RatingMatrix":
        dense = np.asarray(dense)
        return cls(sp.csr_matrix(dense != 0, dtype=np.float64),
                   tuple(f"u{i}" for i in range(dense.shape[0])),
                   tuple(f"i{j}" for j in range(dense.shape[1])))

    def row_items(self, user_index: int) -> np.ndarray:
        if not 0 <= user_index < self.n_users:
            raise IndexError(f"user index {user_index} out of range")
        return self.X.indices[self.X.indptr[user_index]:self.X.indptr[user_index + 1]]


@dataclass(frozen=True)
class EaseModel:
    B: np.ndarray
    lam: float


def fit_ease(X: RatingMatrix, lam: float = 100.0, max_items: int = MAX_ITEMS) -> EaseModel:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n = X.n_items
    if n < 1:
        raise ValueError("need at least one item")
    if n > max_items:
        raise MemoryError(f"{n} items exceeds the dense EASE cap of {max_items}")
    G = (X.X.T @ X.X).toarray()
    G[np.diag_indices(n)] += lam
    # G is symmetric positive definite for lam > 0
    P = scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), np.eye(n))
    B = -P / np.diag(P)[None, :]
    np.fill_diagonal(B, 0.0)
    if not np.all(np.isfinite(B)):
        raise ArithmeticError("EASE solve produced non-finite weights")
    return EaseModel(B, float(lam))


def score_user(model: EaseModel, X: RatingMatrix, user_index: int) -> np.ndarray:
    x = np.zeros(X.n_items)
    x[X.row_items(user_index)] = 1.0
    return x @ model.B


def hard_negatives(model: EaseModel, X: RatingMatrix, user_index: int, k: int = 9,
                   exclude=()) -> list[int]:
    """Top-``k`` unseen items by EASE score; ties go to the lower item index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = score_user(model, X, user_index)
    banned = set(X.row_items(user_index).tolist()) | set(exclude)
    candidates = np.array([j for j in range(X.n_items) if j not in banned], dtype=int)
    if candidates.size == 0:
        return []
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]].tolist()


def save_model(model: EaseModel, X: RatingMatrix, path) -> str:
    """Write ``path`` (binary weights) and ``path + '.ids.json'`` (id maps)."""
    n = model.B.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _FORMAT_VERSION, n, model.lam))
        fh.write(np.ascontiguousarray(model.B, dtype="<f8").tobytes(order="C"))
    ids_path = f"{path}.ids.json"
    with open(ids_path, "w", encoding="utf-8") as fh:
        json.dump({"users": list(X.user_ids), "items": list(X.item_ids)}, fh, sort_keys=True)
    return ids_path


def load_model(path) -> tuple[EaseModel, dict]:
    with open(path, "rb") as fh:
        magic, version, n, lam = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != _FORMAT_VERSION:
            raise ValueError(f"{path}: not an EASE v{_FORMAT_VERSION} file")
        B = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
    with open(f"{path}.ids.json", encoding="utf-8") as fh:
        ids = json.load(fh)
    return EaseModel(B, lam), ids
