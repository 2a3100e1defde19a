"""Shared test fixtures and independent oracles.

Oracles here are deliberately naive (enumeration, recursion, finite
differences) and share no code with the library paths they check.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
import pytest


def numeric_grad(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. array x, in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative disagreement between two gradients."""
    na = np.linalg.norm(a.ravel())
    nb = np.linalg.norm(b.ravel())
    denom = max(na, nb, 1e-12)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def collapse_naive(path, blank):
    """Independent collapse rule: merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return tuple(out)


@lru_cache(maxsize=None)
def ctc_path_table(t_len: int, n_classes: int):
    """All frame paths for a (T, K) grid, grouped by collapsed labeling.

    blank is class ``n_classes - 1``. Returns (paths array [P, T],
    {labeling: path row indices}).
    """
    blank = n_classes - 1
    paths = np.array(list(itertools.product(range(n_classes), repeat=t_len)), dtype=np.int64)
    groups: dict[tuple, list[int]] = {}
    for row, path in enumerate(paths):
        lab = collapse_naive(path, blank)
        groups.setdefault(lab, []).append(row)
    groups = {lab: np.array(rows) for lab, rows in groups.items()}
    return paths, groups


def ctc_label_logprob(log_probs: np.ndarray, label: tuple) -> float:
    """Oracle: -inf if no frame path collapses to ``label``."""
    t_len, n_classes = log_probs.shape
    paths, groups = ctc_path_table(t_len, n_classes)
    rows = groups.get(tuple(label))
    if rows is None:
        return -np.inf
    path_lp = log_probs[np.arange(t_len)[None, :], paths[rows]].sum(axis=1)
    m = path_lp.max()
    return float(m + np.log(np.exp(path_lp - m).sum()))


@pytest.fixture(scope="session")
def charset():
    from emgtype.charset import default_charset

    return default_charset()


@pytest.fixture(scope="session")
def fingermap():
    from emgtype.charset import default_fingermap

    return default_fingermap()
