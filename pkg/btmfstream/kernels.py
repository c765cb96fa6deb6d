"""
Random variates for every distribution the Gibbs sampler draws from.

All samplers are pure given their parameters and a :class:`RandomSource`; the same
seed, stream path and call sequence reproduce bit-identical draws.
"""
import logging
import math
from typing import Tuple

import numpy as np
import scipy.linalg as linalg

from . import DecompositionError, InvalidParameter

logger = logging.getLogger(__name__)

JITTER_STEPS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
SYMMETRY_TOLERANCE = 1e-8
TINY = np.finfo(np.float64).tiny


class RandomSource:
    """
    Seedable, splittable random stream.

    ``RandomSource(seed, stream_id)`` owns a numpy ``Generator`` seeded from
    ``SeedSequence(seed, spawn_key=key + (stream_id,))``. Distinct stream paths are
    statistically independent; :meth:`child` derives them without touching this stream.
    """

    __slots__ = ("seed", "stream_id", "key", "_generator")

    def __init__(self, seed: int, stream_id: int = 0, *, key: Tuple[int, ...] = ()):
        assert isinstance(seed, (int, np.integer)) and seed >= 0, "seed must be a non-negative int"
        assert isinstance(stream_id, (int, np.integer)) and stream_id >= 0
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id)
        self.key = tuple(int(item) for item in key)
        self._generator = None

    @property
    def spawn_key(self) -> Tuple[int, ...]:
        return self.key + (self.stream_id,)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
            self._generator = np.random.Generator(np.random.PCG64(sequence))
        return self._generator

    def child(self, *stream_ids: int) -> "RandomSource":
        assert stream_ids, "child() needs at least one stream id"
        path = self.spawn_key + tuple(stream_ids[:-1])
        return self.__class__(self.seed, stream_ids[-1], key=path)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream_id={self.stream_id}, key={self.key})"


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _check_symmetric(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DecompositionError(f"{name} must be square, got shape {matrix.shape}", matrix=name)
    if not np.all(np.isfinite(matrix)):
        raise DecompositionError(f"{name} has non-finite entries", matrix=name)
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    if matrix.size and float(np.max(np.abs(matrix - matrix.T))) > SYMMETRY_TOLERANCE * scale:
        raise DecompositionError(f"{name} is not symmetric", matrix=name)
    return symmetrize(matrix)


def cholesky(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    """
    Lower Cholesky factor of a symmetric PSD matrix.

    On failure, ``eps * trace / K * I`` is added with ``eps`` escalating through
    ``JITTER_STEPS``; the last failure raises :class:`DecompositionError` naming ``name``.
    """
    matrix = _check_symmetric(matrix, name)
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    size = matrix.shape[0]
    scale = float(np.trace(matrix)) / size
    if not scale > 0:
        scale = 1.0
    for step, eps in enumerate(JITTER_STEPS, 1):
        jitter = eps * scale
        try:
            factor = linalg.cholesky(
                matrix + jitter * np.eye(size), lower=True, check_finite=False
            )
        except np.linalg.LinAlgError:
            continue
        logger.debug(
            f"Jittered {name} by {jitter:.3g}",
            extra={
                "data": {"event": "kernels.jitter", "matrix": name, "jitter": jitter, "step": step}
            },
        )
        return factor
    raise DecompositionError(
        f"{name} is not positive definite after {len(JITTER_STEPS)} jitter escalations",
        matrix=name,
    )


def _psd_factor(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.any(matrix):
        # degenerate covariance: the draw collapses onto the mean
        return np.zeros_like(matrix)
    return cholesky(matrix, name)


def spd_inverse(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    factor = cholesky(matrix, name)
    identity = np.eye(factor.shape[0])
    inverse = linalg.cho_solve((factor, True), identity, check_finite=False)
    return symmetrize(inverse)


def sample_mvn(mean, covariance, rng: RandomSource) -> np.ndarray:
    """Draw from N(mean, covariance)."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    covariance = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
    if covariance.shape != (mean.size, mean.size):
        raise DecompositionError(
            f"covariance shape {covariance.shape} does not match mean of length {mean.size}",
            matrix="covariance",
        )
    factor = _psd_factor(covariance, "covariance")
    return mean + factor @ rng.standard_normal(mean.size)


def sample_mvn_precision(mean, precision, rng: RandomSource, name: str = "precision") -> np.ndarray:
    """Draw from N(mean, precision^-1) through the Cholesky factor of the precision."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    factor = cholesky(np.atleast_2d(precision), name)
    noise = linalg.solve_triangular(
        factor, rng.standard_normal(mean.size), lower=True, trans="T", check_finite=False
    )
    return mean + noise


def sample_wishart(scale, dof: float, rng: RandomSource, name: str = "scale") -> np.ndarray:
    """
    Draw from W(scale, dof) by Bartlett decomposition.

    ``W = L B B^T L^T`` where ``L`` is the Cholesky factor of ``scale`` and ``B`` is lower
    triangular with ``sqrt(chi2(dof - i))`` on the diagonal and standard normals below it.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
    size = scale.shape[0]
    if not dof > size - 1:
        raise InvalidParameter(f"Wishart dof ({dof}) must exceed K - 1 = {size - 1}")
    factor = cholesky(scale, name)
    generator = rng.generator
    bartlett = np.zeros((size, size))
    bartlett[np.diag_indices(size)] = np.sqrt(generator.chisquare(dof - np.arange(size)))
    lower = np.tril_indices(size, k=-1)
    bartlett[lower] = generator.standard_normal(len(lower[0]))
    root = factor @ bartlett
    return symmetrize(root @ root.T)


def sample_inverse_wishart(scale, dof: float, rng: RandomSource, name: str = "scale") -> np.ndarray:
    """Draw Sigma with Sigma^-1 ~ W(scale^-1, dof)."""
    precision = sample_wishart(spd_inverse(scale, name), dof, rng, name=f"{name}^-1")
    return spd_inverse(precision, f"wishart draw of {name}^-1")


def sample_matrix_normal(mean, row_cov, col_cov, rng: RandomSource) -> np.ndarray:
    """Draw from MN(mean, row_cov, col_cov) as ``mean + L_r Z L_c^T``."""
    mean = np.atleast_2d(np.asarray(mean, dtype=np.float64))
    rows, cols = mean.shape
    row_cov = np.atleast_2d(row_cov)
    col_cov = np.atleast_2d(col_cov)
    if row_cov.shape != (rows, rows) or col_cov.shape != (cols, cols):
        raise DecompositionError(
            f"covariance factors {row_cov.shape}, {col_cov.shape} do not match mean {mean.shape}",
            matrix="row_cov" if row_cov.shape != (rows, rows) else "col_cov",
        )
    row_factor = _psd_factor(row_cov, "row_cov")
    col_factor = _psd_factor(col_cov, "col_cov")
    noise = rng.standard_normal((rows, cols))
    return mean + row_factor @ noise @ col_factor.T


def sample_gamma(shape: float, rate: float, rng: RandomSource) -> float:
    """
    Draw from Gamma(shape, rate) (mean ``shape / rate``).

    numpy's standard gamma is the Marsaglia-Tsang squeeze for ``shape >= 1``; smaller shapes
    are boosted (``G(a) = G(a + 1) * U^(1/a)``) in log space so that the 1e-6 prior shape
    still yields a finite positive value.
    """
    if not (shape > 0 and rate > 0) or math.isinf(shape) or math.isinf(rate):
        raise InvalidParameter(f"Gamma parameters must be positive, got shape={shape}, rate={rate}")
    generator = rng.generator
    if shape >= 1.0:
        draw = generator.standard_gamma(shape) / rate
    else:
        boosted = generator.standard_gamma(shape + 1.0)
        uniform = 1.0 - generator.random()  # (0, 1]
        log_draw = math.log(boosted) + math.log(uniform) / shape - math.log(rate)
        draw = math.exp(min(log_draw, 700.0))
    return float(min(max(draw, TINY), np.finfo(np.float64).max))

