"""Absorbing multi-way fixed effects by alternating projections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from mpwedge.errors import ConvergenceError, InvalidInputError


@dataclass
class Absorber:
    """Projection onto the orthogonal complement of several fixed-effect sets.

    Builds one sparse indicator matrix per set up front so that repeated
    demeaning of many columns (permutations, Monte Carlo draws) is cheap.
    """

    codes: list[np.ndarray]
    weights: np.ndarray | None = None
    tol: float = 1e-10
    max_iter: int = 10_000

    def __post_init__(self):
        if not self.codes:
            raise InvalidInputError("at least one fixed-effect set is required")
        n = len(self.codes[0])
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        self._w = w
        self._ind = []
        self._inv_mass = []
        self.n_groups = []
        singleton = np.zeros(n, dtype=bool)
        for c in self.codes:
            c = np.asarray(c, dtype=np.int64)
            if len(c) != n:
                raise InvalidInputError("fixed-effect code arrays differ in length")
            g = int(c.max()) + 1 if n else 0
            ind = sparse.csr_matrix((np.ones(n), (np.arange(n), c)), shape=(n, g))
            mass = np.bincount(c, weights=w, minlength=g)
            counts = np.bincount(c, minlength=g)
            singleton |= counts[c] == 1
            self._ind.append(ind)
            self._inv_mass.append(np.where(mass > 0, 1.0 / np.where(mass > 0, mass, 1.0), 0.0))
            self.n_groups.append(g)
        self.singleton = singleton
        self.iterations = 0

    @property
    def n_singletons(self) -> int:
        return int(self.singleton.sum())

    def group_means(self, k: int, x: np.ndarray) -> np.ndarray:
        ind = self._ind[k]
        wx = x * self._w[:, None] if x.ndim == 2 else x * self._w
        sums = ind.T @ wx
        inv = self._inv_mass[k]
        return sums * (inv[:, None] if x.ndim == 2 else inv)

    def _project_out(self, k: int, x: np.ndarray) -> np.ndarray:
        return x - self._ind[k] @ self.group_means(k, x)

    def demean(self, x: np.ndarray) -> np.ndarray:
        """Return ``x`` with all fixed-effect sets partialled out."""
        x = np.array(x, dtype=float, copy=True)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[:, None]
        if len(self._ind) == 1:
            self.iterations = 1
            out = self._project_out(0, x)
            return out[:, 0] if squeeze else out
        change = np.inf
        for it in range(1, self.max_iter + 1):
            prev = x
            for k in range(len(self._ind)):
                x = self._project_out(k, x)
            change = float(np.max(np.abs(x - prev))) if x.size else 0.0
            if change < self.tol:
                self.iterations = it
                return x[:, 0] if squeeze else x
        self.iterations = self.max_iter
        raise ConvergenceError(
            f"alternating projections did not converge in {self.max_iter} sweeps "
            f"(last max change {change:.3e})", trace=[change])

    def recover_effects(self, resid: np.ndarray) -> list[np.ndarray]:
        """Solve for fixed-effect values whose sum best fits ``resid``.

        Values are determined only up to the usual normalizations across sets;
        callers that need a particular normalization must impose it.
        """
        r = np.asarray(resid, dtype=float)
        effects = [np.zeros(g) for g in self.n_groups]
        total = np.zeros_like(r)
        for it in range(1, self.max_iter + 1):
            change = 0.0
            for k in range(len(self._ind)):
                own = self._ind[k] @ effects[k]
                partial = r - (total - own)
                new = self.group_means(k, partial)
                change = max(change, float(np.max(np.abs(new - effects[k]))) if new.size else 0.0)
                total = total - own + self._ind[k] @ new
                effects[k] = new
            if change < self.tol:
                self.iterations = it
                return effects
        raise ConvergenceError(
            f"fixed-effect recovery did not converge in {self.max_iter} sweeps "
            f"(last max change {change:.3e})", trace=[change])


def demean(x: np.ndarray, codes: list[np.ndarray], weights: np.ndarray | None = None,
           tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Partial the fixed effects identified by ``codes`` out of ``x``."""
    return Absorber(list(codes), weights, tol, max_iter).demean(x)


def demean_fe(data, fe_sets: list[str], columns: list[str] | None = None,
              tol: float = 1e-10, max_iter: int = 10_000):
    """Demean panel columns by the fixed-effect keys in ``fe_sets``.

    Returns ``(frame, absorber)``: a DataFrame of demeaned columns (all numeric
    non-key columns by default, ``a:b`` products allowed) and the fitted
    :class:`Absorber`, whose ``singleton`` mask and ``iterations`` count serve
    as diagnostics.
    """
    import pandas as pd

    if not fe_sets:
        raise InvalidInputError("fe_sets must be non-empty")
    if columns is None:
        skip = set(data.keys) | {data.cluster, data.weight}
        columns = [c for c in data.frame.columns
                   if c not in skip and pd.api.types.is_numeric_dtype(data.frame[c])]
    absorber = Absorber([data.key_codes(k) for k in fe_sets], data.weights(), tol, max_iter)
    mat = np.column_stack([data.column(c) for c in columns]) if columns else np.empty((len(data), 0))
    out = absorber.demean(mat)
    return pd.DataFrame(out, columns=columns, index=data.frame.index), absorber
