"""
Label-free global covariance estimation
Shrinkage (Ledoit-Wolf) and block-Toeplitz estimators, SPD repair and solves
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, List, Optional, Tuple

import numpy as np
from scipy import linalg
from sklearn.covariance import ledoit_wolf_shrinkage

from .errors import (
    ArgumentOutOfRange,
    EmptyPool,
    InsufficientData,
    NotPositiveDefinite,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

# eigenvalue floor relative to the average variance trace(S)/D
REPAIR_RELATIVE_FLOOR = 1e-10


class CovarianceKind(str, Enum):
    SHRINKAGE = "shrinkage"
    BLOCK_TOEPLITZ = "toeplitz"


class CovarianceScope(str, Enum):
    CURRENT_TRIAL = "trial"
    POOLED_ALL = "all"


class Centering(str, Enum):
    GRAND = "grand"
    PER_TRIAL = "per_trial"


class EpochPool:
    """
    Growable collection of flattened epochs, kept per trial so that
    per-trial centering stays possible. Single writer.
    """

    def __init__(self, channels: int, samples: int, blocks: Optional[List[np.ndarray]] = None):
        self.channels = int(channels)
        self.samples = int(samples)
        self.blocks: List[np.ndarray] = []
        for block in blocks or []:
            self.append(block)

    @property
    def dimension(self) -> int:
        return self.channels * self.samples

    def __len__(self) -> int:
        return sum(block.shape[0] for block in self.blocks)

    def append(self, features: np.ndarray):
        """Add one trial's (n, D) time-major features"""
        block = np.array(np.atleast_2d(features), dtype=float)
        if block.shape[1] != self.dimension:
            raise ShapeMismatch(
                f"epoch dimension {block.shape[1]} != {self.samples} samples x {self.channels} channels"
            )
        block.flags.writeable = False
        self.blocks.append(block)

    def replace(self, features: np.ndarray):
        self.blocks = []
        self.append(features)

    def copy(self) -> "EpochPool":
        pool = EpochPool(self.channels, self.samples)
        pool.blocks = list(self.blocks)
        return pool

    def matrix(self, centering: Centering = Centering.GRAND) -> np.ndarray:
        """All pooled epochs as (n, D); per-trial centering subtracts each block's own mean"""
        if not self.blocks:
            raise EmptyPool("epoch pool is empty")
        if Centering(centering) is Centering.PER_TRIAL:
            return np.concatenate([block - block.mean(axis=0) for block in self.blocks])
        return np.concatenate(self.blocks)


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Regularized SPD covariance with its Cholesky factor"""
    matrix: np.ndarray
    factor: Tuple[np.ndarray, bool]
    estimator_kind: CovarianceKind
    scope: CovarianceScope = CovarianceScope.CURRENT_TRIAL
    shrinkage: float = 0.0
    taper_bandwidth: Optional[int] = None
    channels: Optional[int] = None
    samples: Optional[int] = None
    n_epochs: int = 0

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, estimator_kind: CovarianceKind = CovarianceKind.SHRINKAGE,
                    **kwargs: Any) -> "CovarianceModel":
        """Factorize an SPD matrix; raises NotPositiveDefinite"""
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ShapeMismatch(f"covariance must be square, got {matrix.shape}")
        try:
            factor = linalg.cho_factor(matrix, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError) as e:
            raise NotPositiveDefinite(f"Cholesky factorization failed: {e}") from e
        matrix.flags.writeable = False
        return cls(matrix=matrix, factor=factor, estimator_kind=CovarianceKind(estimator_kind), **kwargs)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def scaled(self, alpha: float) -> "CovarianceModel":
        """Same model with matrix alpha * Sigma"""
        return CovarianceModel.from_matrix(
            alpha * self.matrix,
            self.estimator_kind,
            scope=self.scope,
            shrinkage=self.shrinkage,
            taper_bandwidth=self.taper_bandwidth,
            channels=self.channels,
            samples=self.samples,
            n_epochs=self.n_epochs,
        )

    def inverse(self) -> np.ndarray:
        """Explicit inverse, only on request"""
        return spd_solve(self, np.eye(self.dimension))


def sample_covariance(pool: EpochPool, centering: Centering = Centering.GRAND) -> np.ndarray:
    """Biased (divide-by-n) sample covariance of all pooled epochs, ignoring classes"""
    X = pool.matrix(centering)
    n = X.shape[0]
    if Centering(centering) is Centering.GRAND:
        X = X - X.mean(axis=0)
    S = (X.T @ X) / n
    return (S + S.T) / 2.0


def spd_repair(matrix: np.ndarray, preserve_structure: bool = False) -> np.ndarray:
    """
    Guarantee smallest eigenvalue >= eps = 1e-10 * trace/D.
    Default clips eigenvalues; preserve_structure loads the diagonal instead,
    which keeps any block-Toeplitz structure bit-exact.
    """
    matrix = (matrix + matrix.T) / 2.0
    D = matrix.shape[0]
    eps = REPAIR_RELATIVE_FLOOR * np.trace(matrix) / D
    if not np.isfinite(eps) or eps <= 0:
        raise NotPositiveDefinite(f"covariance has non-positive trace {np.trace(matrix)}")

    try:
        linalg.cholesky(matrix - eps * np.eye(D), lower=True)
        return matrix
    except linalg.LinAlgError:
        pass

    if preserve_structure:
        smallest = linalg.eigh(matrix, eigvals_only=True, subset_by_index=[0, 0])[0]
        load = 2.0 * eps - smallest
        logger.warning(f"SPD repair: loading diagonal by {load:.3e} (smallest eigenvalue {smallest:.3e})")
        repaired = matrix.copy()
        repaired[np.diag_indices(D)] += load
        return repaired

    values, vectors = linalg.eigh(matrix)
    clipped = int(np.sum(values < eps))
    logger.warning(f"SPD repair: clipping {clipped} eigenvalues to {eps:.3e}")
    repaired = (vectors * np.maximum(values, eps)) @ vectors.T
    return (repaired + repaired.T) / 2.0


def _shrunk_matrix(pool: EpochPool, shrinkage: Optional[float], centering: Centering) -> Tuple[np.ndarray, float]:
    if len(pool) == 0:
        raise EmptyPool("epoch pool is empty")
    if len(pool) < 2:
        raise InsufficientData(f"shrinkage covariance needs at least 2 epochs, pool has {len(pool)}")

    S = sample_covariance(pool, centering)
    if shrinkage is None:
        X = pool.matrix(centering)
        gamma = float(ledoit_wolf_shrinkage(X, assume_centered=Centering(centering) is Centering.PER_TRIAL))
    else:
        gamma = float(shrinkage)
        if not 0.0 <= gamma <= 1.0:
            raise ArgumentOutOfRange(f"shrinkage intensity must lie in [0, 1], got {gamma}")
    gamma = min(max(gamma, 0.0), 1.0)

    D = S.shape[0]
    nu = np.trace(S) / D
    shrunk = (1.0 - gamma) * S
    shrunk[np.diag_indices(D)] += gamma * nu
    return shrunk, gamma


def shrinkage_covariance(
    pool: EpochPool,
    shrinkage: Optional[float] = None,
    centering: Centering = Centering.GRAND,
    scope: CovarianceScope = CovarianceScope.CURRENT_TRIAL,
) -> CovarianceModel:
    """Ledoit-Wolf shrinkage toward nu*I with nu = trace(S)/D"""
    shrunk, gamma = _shrunk_matrix(pool, shrinkage, centering)
    return CovarianceModel.from_matrix(
        spd_repair(shrunk),
        CovarianceKind.SHRINKAGE,
        scope=CovarianceScope(scope),
        shrinkage=gamma,
        channels=pool.channels,
        samples=pool.samples,
        n_epochs=len(pool),
    )


def lag_blocks(matrix: np.ndarray, channels: int, samples: int,
               taper_bandwidth: Optional[int] = None) -> np.ndarray:
    """
    Average the C x C blocks of a time-major covariance along each block diagonal.
    Returns W of shape (T, C, C) where W[l] is the lag-l spatial cross-covariance.
    """
    C, T = channels, samples
    if matrix.shape != (T * C, T * C):
        raise ShapeMismatch(f"matrix of shape {matrix.shape} is not {T} x {T} blocks of size {C}")
    blocks = matrix.reshape(T, C, T, C).transpose(0, 2, 1, 3)
    W = np.empty((T, C, C))
    for lag in range(T):
        i = np.arange(T - lag)
        lower = blocks[i + lag, i]
        upper_t = blocks[i, i + lag].transpose(0, 2, 1)
        W[lag] = ((lower + upper_t) / 2.0).mean(axis=0)
        if taper_bandwidth is not None and lag > 0:
            W[lag] *= max(0.0, 1.0 - lag / taper_bandwidth)
    return W


def assemble_block_toeplitz(W: np.ndarray) -> np.ndarray:
    """Block (i, j) = W[i-j] for i >= j and W[j-i].T otherwise"""
    T, C, _ = W.shape
    lag = np.subtract.outer(np.arange(T), np.arange(T))
    by_lag = W[np.abs(lag)]
    blocks = np.where((lag >= 0)[:, :, None, None], by_lag, by_lag.transpose(0, 1, 3, 2))
    return blocks.transpose(0, 2, 1, 3).reshape(T * C, T * C)


def block_toeplitz_covariance(
    pool: EpochPool,
    taper_bandwidth: Optional[int] = None,
    shrinkage: Optional[float] = None,
    centering: Centering = Centering.GRAND,
    scope: CovarianceScope = CovarianceScope.CURRENT_TRIAL,
) -> CovarianceModel:
    """Shrinkage estimate projected onto symmetric block-Toeplitz structure, optionally tapered"""
    if taper_bandwidth is not None and taper_bandwidth < 1:
        raise ArgumentOutOfRange(f"taper bandwidth must be >= 1, got {taper_bandwidth}")
    shrunk, gamma = _shrunk_matrix(pool, shrinkage, centering)
    sigma_s = spd_repair(shrunk)
    W = lag_blocks(sigma_s, pool.channels, pool.samples, taper_bandwidth)
    sigma_t = spd_repair(assemble_block_toeplitz(W), preserve_structure=True)
    return CovarianceModel.from_matrix(
        sigma_t,
        CovarianceKind.BLOCK_TOEPLITZ,
        scope=CovarianceScope(scope),
        shrinkage=gamma,
        taper_bandwidth=taper_bandwidth,
        channels=pool.channels,
        samples=pool.samples,
        n_epochs=len(pool),
    )


def spd_solve(model: CovarianceModel, v: np.ndarray) -> np.ndarray:
    """
    Sigma^-1 v through the stored Cholesky factor.
    v is a D-vector or an (n, D) matrix of row vectors; output has the same shape.
    """
    v = np.asarray(v, dtype=float)
    D = model.dimension
    if v.ndim == 1:
        if v.shape[0] != D:
            raise ShapeMismatch(f"vector of length {v.shape[0]} against {D}-dimensional covariance")
        return linalg.cho_solve(model.factor, v)
    if v.ndim != 2 or v.shape[1] != D:
        raise ShapeMismatch(f"rows of shape {v.shape} against {D}-dimensional covariance")
    return linalg.cho_solve(model.factor, v.T).T


def update_scope(config: Any, pool: EpochPool, new_trial_features: np.ndarray) -> EpochPool:
    """Replace (current-trial scope) or extend (pooled scope) the pool with a new trial"""
    if CovarianceScope(config.covariance_scope) is CovarianceScope.CURRENT_TRIAL:
        pool.replace(new_trial_features)
    else:
        pool.append(new_trial_features)
    return pool


def estimate_covariance(config: Any, pool: EpochPool) -> CovarianceModel:
    """Estimator dispatch on config.covariance_kind"""
    kind = CovarianceKind(config.covariance_kind)
    scope = CovarianceScope(config.covariance_scope)
    if kind is CovarianceKind.BLOCK_TOEPLITZ:
        return block_toeplitz_covariance(
            pool,
            taper_bandwidth=config.taper_bandwidth,
            shrinkage=config.shrinkage,
            centering=config.centering,
            scope=scope,
        )
    return shrinkage_covariance(pool, shrinkage=config.shrinkage, centering=config.centering, scope=scope)
