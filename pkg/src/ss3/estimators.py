"""Base low-rank estimators, tangent extraction, and tangent-constrained refits.

Three observation models are supported: noisy individual entries
(matrix completion), full noisy replicates of the matrix, and scalar
linear functionals y = <A, L> + noise. Four estimator families cover
them: nuclear-norm proximal gradient (entrywise), alternating ridge
least squares over a factored parameterization (entrywise or linear),
truncated SVD of the replicate mean, and PCA of the empirical second
moment for column-space problems.

Every estimator is a pure function of (observations, config), so runs
over data subsets may execute in any order or in parallel; callers that
aggregate results must do so in a fixed order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .linalg import DEFAULT_RANK_TOL, Subspace, TangentSpace

__all__ = [
    "ObservationSet",
    "EstimatorConfig",
    "svt_complete",
    "als_complete",
    "spectral_denoise",
    "pca_column",
    "extract_tangent",
    "refit",
    "point_estimate",
    "estimate_tangent",
    "estimate_column",
]

_MODELS = ("entrywise", "replicate", "linear")
_KINDS = ("svt", "als", "spectral", "pca_column")


@dataclass(frozen=True)
class ObservationSet:
    """Observations of a p1 x p2 matrix under one of three models.

    entrywise: `entries` is an (m, 3) array of rows (i, j, y) with
    unique in-range integer index pairs.
    replicate: `replicates` is an (n, p1, p2) array of noisy copies.
    linear: `functionals` is a pair (mats, vals) with mats of shape
    (n, p1, p2) and vals of shape (n,), one scalar per sensing matrix.
    """

    model: str
    p1: int
    p2: int
    entries: np.ndarray | None = None
    replicates: np.ndarray | None = None
    functionals: tuple | None = None

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ValueError(f"unknown observation model {self.model!r}")
        if self.p1 < 1 or self.p2 < 1:
            raise ValueError("matrix dimensions must be positive")
        if self.model == "entrywise":
            if self.entries is None:
                raise ValueError("entrywise model requires entries")
            e = np.asarray(self.entries, dtype=float)
            if e.ndim != 2 or e.shape[1] != 3 or e.shape[0] < 1:
                raise ValueError("entries must be a nonempty (m, 3) array")
            if not np.all(np.isfinite(e)):
                raise ValueError("entries contain non-finite values")
            ii, jj = e[:, 0], e[:, 1]
            if np.any(ii != np.rint(ii)) or np.any(jj != np.rint(jj)):
                raise ValueError("entry indices must be integers")
            if np.any(ii < 0) or np.any(ii >= self.p1):
                raise ValueError("row index out of range")
            if np.any(jj < 0) or np.any(jj >= self.p2):
                raise ValueError("column index out of range")
            keys = ii.astype(np.int64) * self.p2 + jj.astype(np.int64)
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate entry indices")
            object.__setattr__(self, "entries", e)
        elif self.model == "replicate":
            if self.replicates is None:
                raise ValueError("replicate model requires replicates")
            r = np.asarray(self.replicates, dtype=float)
            if r.ndim != 3 or r.shape[0] < 1:
                raise ValueError("replicates must be a nonempty (n, p1, p2) array")
            if r.shape[1:] != (self.p1, self.p2):
                raise ValueError(
                    f"replicate shape {r.shape[1:]} does not match "
                    f"({self.p1}, {self.p2})"
                )
            if not np.all(np.isfinite(r)):
                raise ValueError("replicates contain non-finite values")
            object.__setattr__(self, "replicates", r)
        else:
            if self.functionals is None:
                raise ValueError("linear model requires functionals")
            mats, vals = self.functionals
            mats = np.asarray(mats, dtype=float)
            vals = np.asarray(vals, dtype=float)
            if mats.ndim != 3 or mats.shape[0] < 1:
                raise ValueError("sensing matrices must be a nonempty 3-d array")
            if mats.shape[1:] != (self.p1, self.p2):
                raise ValueError(
                    f"sensing shape {mats.shape[1:]} does not match "
                    f"({self.p1}, {self.p2})"
                )
            if vals.shape != (mats.shape[0],):
                raise ValueError("one measurement per sensing matrix required")
            if not (np.all(np.isfinite(mats)) and np.all(np.isfinite(vals))):
                raise ValueError("functionals contain non-finite values")
            object.__setattr__(self, "functionals", (mats, vals))

    @classmethod
    def entrywise(cls, p1, p2, ii, jj, values) -> "ObservationSet":
        e = np.column_stack(
            [
                np.asarray(ii, dtype=float),
                np.asarray(jj, dtype=float),
                np.asarray(values, dtype=float),
            ]
        )
        return cls(model="entrywise", p1=p1, p2=p2, entries=e)

    @classmethod
    def replicate(cls, mats) -> "ObservationSet":
        mats = np.asarray(mats, dtype=float)
        return cls(
            model="replicate", p1=mats.shape[1], p2=mats.shape[2], replicates=mats
        )

    @classmethod
    def linear(cls, mats, values) -> "ObservationSet":
        mats = np.asarray(mats, dtype=float)
        return cls(
            model="linear",
            p1=mats.shape[1],
            p2=mats.shape[2],
            functionals=(mats, values),
        )

    @property
    def n_obs(self) -> int:
        if self.model == "entrywise":
            return self.entries.shape[0]
        if self.model == "replicate":
            return self.replicates.shape[0]
        return self.functionals[0].shape[0]

    def subset(self, indices) -> "ObservationSet":
        """Restriction to a subset of observations (a bag)."""
        idx = np.asarray(indices, dtype=int)
        if self.model == "entrywise":
            return ObservationSet(
                model="entrywise", p1=self.p1, p2=self.p2, entries=self.entries[idx]
            )
        if self.model == "replicate":
            return ObservationSet(
                model="replicate",
                p1=self.p1,
                p2=self.p2,
                replicates=self.replicates[idx],
            )
        mats, vals = self.functionals
        return ObservationSet(
            model="linear",
            p1=self.p1,
            p2=self.p2,
            functionals=(mats[idx], vals[idx]),
        )

    def index_arrays(self):
        """(row indices, column indices, values) for the entrywise model."""
        if self.model != "entrywise":
            raise ValueError("index_arrays is only defined for entrywise data")
        e = self.entries
        return e[:, 0].astype(np.intp), e[:, 1].astype(np.intp), e[:, 2].copy()


@dataclass(frozen=True)
class EstimatorConfig:
    """Configuration shared by all base estimators.

    kind selects the estimator. lam is the nuclear-norm weight for svt
    and the ridge weight for als; k caps the factorization / truncation
    rank for als, spectral, and pca_column. rank_tol is the relative
    singular-value cutoff used when a tangent space is extracted from
    the estimate.
    """

    kind: str = "svt"
    lam: float = 0.0
    k: int = 1
    max_iters: int = 500
    conv_tol: float = 1e-8
    rank_tol: float = DEFAULT_RANK_TOL
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.conv_tol <= 0:
            raise ValueError("conv_tol must be positive")
        if self.rank_tol <= 0:
            raise ValueError("rank_tol must be positive")


def _soft_threshold_svd(Z: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Singular-value soft-thresholding; returns (matrix, kept values)."""
    u, s, vt = np.linalg.svd(Z, full_matrices=False)
    s = s - t
    keep = s > 0
    if not np.any(keep):
        return np.zeros_like(Z), s[:0]
    s = s[keep]
    return (u[:, keep] * s) @ vt[keep], s


def svt_complete(
    obs: ObservationSet,
    cfg: EstimatorConfig,
    L0: np.ndarray | None = None,
    callback=None,
) -> np.ndarray:
    """Nuclear-norm regularized completion via proximal gradient.

    Minimizes sum_{(i,j) observed} (L - Y)_{ij}^2 + lam * ||L||_*. The
    sampled squared loss has a 2-Lipschitz gradient, so the gradient
    step size is 1/2 and each iteration soft-thresholds the singular
    values at lam/2. Iteration stops when the relative objective change
    drops below conv_tol; hitting max_iters warns and returns the last
    iterate.

    callback(iteration, L, objective) is invoked after every iteration.
    """
    if obs.model != "entrywise":
        raise ValueError("svt_complete requires entrywise observations")
    if cfg.lam <= 0:
        raise ValueError("svt_complete requires lam > 0")
    ii, jj, y = obs.index_arrays()

    if L0 is None:
        L = np.zeros((obs.p1, obs.p2))
        obj = float(y @ y)
    else:
        L = np.asarray(L0, dtype=float).copy()
        if L.shape != (obs.p1, obs.p2):
            raise ValueError("warm start has the wrong shape")
        resid = L[ii, jj] - y
        obj = float(resid @ resid) + cfg.lam * float(
            np.linalg.svd(L, compute_uv=False).sum()
        )

    for it in range(cfg.max_iters):
        # gradient step lands exactly on Y over the observed entries
        Z = L.copy()
        Z[ii, jj] = y
        L, kept = _soft_threshold_svd(Z, cfg.lam / 2.0)
        resid = L[ii, jj] - y
        new_obj = float(resid @ resid) + cfg.lam * float(kept.sum())
        if callback is not None:
            callback(it, L, new_obj)
        if abs(obj - new_obj) <= cfg.conv_tol * max(abs(obj), 1e-30):
            return L
        obj = new_obj
    warnings.warn("svt_complete: max_iters reached before convergence")
    return L


def _als_objective_entrywise(U, V, ii, jj, y, lam):
    resid = np.einsum("ik,ik->i", U[ii], V[jj]) - y
    return float(resid @ resid) + lam * (
        float(np.sum(U * U)) + float(np.sum(V * V))
    )


def _als_objective_linear(U, V, mats, y, lam):
    resid = np.einsum("nij,ik,jk->n", mats, U, V) - y
    return float(resid @ resid) + lam * (
        float(np.sum(U * U)) + float(np.sum(V * V))
    )


def _ridge_solve(G, b, lam, state):
    """Solve (G + lam I) x = b; pseudo-inverse fallback when singular."""
    A = G + lam * np.eye(G.shape[0])
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        if not state["degenerate"]:
            state["degenerate"] = True
            warnings.warn(
                "als_complete: singular normal system, using pseudo-inverse"
            )
        return np.linalg.lstsq(A, b, rcond=None)[0]


def als_complete(
    obs: ObservationSet, cfg: EstimatorConfig, callback=None
) -> tuple[np.ndarray, np.ndarray]:
    """Alternating ridge least squares for the factored model L = U V'.

    Each sweep solves the two exact block ridge problems (U given V,
    then V given U), so the regularized objective is non-increasing
    sweep to sweep. Initialization is i.i.d. N(0, 1/k) from cfg.seed.
    Stops on relative objective change below conv_tol or after
    max_iters sweeps.

    callback(sweep, U, V, objective) is invoked after every sweep.
    """
    if obs.model not in ("entrywise", "linear"):
        raise ValueError("als_complete requires entrywise or linear observations")
    k = cfg.k
    rng = np.random.default_rng(cfg.seed)
    U = rng.standard_normal((obs.p1, k)) / np.sqrt(k)
    V = rng.standard_normal((obs.p2, k)) / np.sqrt(k)
    state = {"degenerate": False}

    if obs.model == "entrywise":
        ii, jj, y = obs.index_arrays()
        by_row = [np.flatnonzero(ii == i) for i in range(obs.p1)]
        by_col = [np.flatnonzero(jj == j) for j in range(obs.p2)]
        obj = _als_objective_entrywise(U, V, ii, jj, y, cfg.lam)
        for sweep in range(cfg.max_iters):
            for i, rows in enumerate(by_row):
                Vi = V[jj[rows]]
                U[i] = _ridge_solve(Vi.T @ Vi, Vi.T @ y[rows], cfg.lam, state)
            for j, cols in enumerate(by_col):
                Uj = U[ii[cols]]
                V[j] = _ridge_solve(Uj.T @ Uj, Uj.T @ y[cols], cfg.lam, state)
            new_obj = _als_objective_entrywise(U, V, ii, jj, y, cfg.lam)
            if callback is not None:
                callback(sweep, U, V, new_obj)
            if abs(obj - new_obj) <= cfg.conv_tol * max(abs(obj), 1e-30):
                return U, V
            obj = new_obj
    else:
        mats, y = obs.functionals
        matsT = mats.transpose(0, 2, 1)
        obj = _als_objective_linear(U, V, mats, y, cfg.lam)
        for sweep in range(cfg.max_iters):
            # <A, U V'> = <vec(U), vec(A V)> so U solves a (p1 k) system
            X = (mats @ V).reshape(obs.n_obs, -1)
            U = _ridge_solve(X.T @ X, X.T @ y, cfg.lam, state).reshape(obs.p1, k)
            X = (matsT @ U).reshape(obs.n_obs, -1)
            V = _ridge_solve(X.T @ X, X.T @ y, cfg.lam, state).reshape(obs.p2, k)
            new_obj = _als_objective_linear(U, V, mats, y, cfg.lam)
            if callback is not None:
                callback(sweep, U, V, new_obj)
            if abs(obj - new_obj) <= cfg.conv_tol * max(abs(obj), 1e-30):
                return U, V
            obj = new_obj
    warnings.warn("als_complete: max_iters reached before convergence")
    return U, V


def spectral_denoise(obs: ObservationSet, k: int) -> np.ndarray:
    """Best rank-k approximation of the replicate mean."""
    if obs.model != "replicate":
        raise ValueError("spectral_denoise requires replicate observations")
    if k < 1:
        raise ValueError("k must be at least 1")
    full = min(obs.p1, obs.p2)
    if k > full:
        warnings.warn(f"spectral_denoise: k={k} clamped to {full}")
        k = full
    mean = obs.replicates.mean(axis=0)
    u, s, vt = np.linalg.svd(mean, full_matrices=False)
    return (u[:, :k] * s[:k]) @ vt[:k]


def pca_column(obs: ObservationSet, k: int) -> Subspace:
    """Top-k eigenvectors of the empirical second-moment matrix.

    Observations are p x 1 replicate vectors; the output spans the
    leading eigenspace of (1/n) sum_i x_i x_i'.
    """
    if obs.model != "replicate" or obs.p2 != 1:
        raise ValueError("pca_column requires replicate observations of p x 1 vectors")
    if not 1 <= k <= obs.p1:
        raise ValueError(f"need 1 <= k <= {obs.p1}, got {k}")
    X = obs.replicates[:, :, 0]
    second_moment = X.T @ X / X.shape[0]
    _, vecs = np.linalg.eigh(second_moment)
    return Subspace(vecs[:, ::-1][:, :k])


def extract_tangent(L: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> TangentSpace:
    """Tangent space at L: column/row spans of its numerically nonzero part.

    The rank is the number of singular values above rank_tol * sigma_1;
    a zero matrix yields the zero tangent space.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2:
        raise ValueError("L must be a matrix")
    if not np.all(np.isfinite(L)):
        raise ValueError("L contains non-finite entries")
    p1, p2 = L.shape
    u, s, vt = np.linalg.svd(L, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        r = 0
    else:
        r = int(np.count_nonzero(s > rank_tol * s[0]))
    return TangentSpace(Subspace(u[:, :r]), Subspace(vt[:r].T))


def refit(T: TangentSpace, obs: ObservationSet) -> np.ndarray:
    """Least-squares refit of the bilinear model L = U_C M U_R' over M.

    Replicate data uses the closed form M = U_C' Ybar U_R; entrywise and
    linear data solve the r^2-unknown normal equations with a 1e-10
    ridge for conditioning.
    """
    if (T.p1, T.p2) != (obs.p1, obs.p2):
        raise ValueError("tangent space and observations have different shapes")
    r = T.rank
    if r == 0:
        return np.zeros((obs.p1, obs.p2))
    Uc, Ur = T.col.basis, T.row.basis
    if obs.model == "replicate":
        M = Uc.T @ obs.replicates.mean(axis=0) @ Ur
        return Uc @ M @ Ur.T
    if obs.model == "entrywise":
        ii, jj, y = obs.index_arrays()
        X = np.einsum("na,nb->nab", Uc[ii], Ur[jj]).reshape(y.size, r * r)
    else:
        mats, y = obs.functionals
        X = np.einsum("ia,nij,jb->nab", Uc, mats, Ur).reshape(y.size, r * r)
    G = X.T @ X + 1e-10 * np.eye(r * r)
    M = np.linalg.solve(G, X.T @ y).reshape(r, r)
    return Uc @ M @ Ur.T


def point_estimate(obs: ObservationSet, cfg: EstimatorConfig, warm=None) -> np.ndarray:
    """Run the configured base estimator and return its matrix estimate.

    warm seeds the svt iteration and is ignored by the closed-form
    estimators. pca_column has no matrix estimate.
    """
    if cfg.kind == "svt":
        return svt_complete(obs, cfg, L0=warm)
    if cfg.kind == "als":
        U, V = als_complete(obs, cfg)
        return U @ V.T
    if cfg.kind == "spectral":
        return spectral_denoise(obs, cfg.k)
    raise ValueError(
        "pca_column estimates a column space, not a matrix; use pca_column"
    )


def estimate_tangent(obs: ObservationSet, cfg: EstimatorConfig) -> TangentSpace:
    """Run the configured base estimator and extract its tangent space."""
    if cfg.kind == "svt":
        return extract_tangent(svt_complete(obs, cfg), cfg.rank_tol)
    if cfg.kind == "als":
        U, V = als_complete(obs, cfg)
        return extract_tangent(U @ V.T, cfg.rank_tol)
    if cfg.kind == "spectral":
        return extract_tangent(spectral_denoise(obs, cfg.k), cfg.rank_tol)
    raise ValueError(
        "pca_column estimates a column space, not a tangent space; "
        "use estimate_column"
    )


def estimate_column(obs: ObservationSet, cfg: EstimatorConfig) -> Subspace:
    """Run the configured base estimator and return a column-space estimate."""
    if cfg.kind == "pca_column":
        return pca_column(obs, cfg.k)
    if cfg.kind == "spectral":
        return extract_tangent(spectral_denoise(obs, cfg.k), cfg.rank_tol).col
    return estimate_tangent(obs, cfg).col


def with_lambda(cfg: EstimatorConfig, lam: float) -> EstimatorConfig:
    """Copy of cfg with a different regularization weight."""
    return replace(cfg, lam=lam)
