"""
Conditional posteriors of the Bayesian temporal factorization and the imputation chain.

Every ``*_posterior`` function is a pure computation of the conditional's parameters;
the matching ``sample_*`` function draws from it. Time indices are 0-based.
"""
import collections
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as linalg

from . import DEFAULT_THREADS, BTMFError, InsufficientHistory, InvalidParameter
from .kernels import (
    RandomSource,
    cholesky,
    sample_gamma,
    sample_inverse_wishart,
    sample_matrix_normal,
    sample_mvn_precision,
    sample_wishart,
    spd_inverse,
    symmetrize,
)
from .model import (
    ARModel,
    FactorState,
    Kind,
    ObservationSet,
    PriorConfig,
    RunningMoments,
    SpatialHyperState,
    lagged_design,
)

logger = logging.getLogger(__name__)

INIT_SCALE = 0.1

# stream ids below one window
INIT_STREAM = 0
CHAIN_STREAM = 1
FORECAST_STREAM = 2

# stream ids below one sweep
SPATIAL_HYPER_STREAM = 0
SPATIAL_STREAM = 1
TEMPORAL_HYPER_STREAM = 2
TEMPORAL_STREAM = 3
PRECISION_STREAM = 4


class ChainConfig(
    collections.namedtuple(
        "ChainConfig",
        [
            "n_iters_impute",
            "burn_in_impute",
            "n_iters_forecast",
            "burn_in_forecast",
            "seed",
            "threads",
            "log_every",
        ],
    )
):
    __slots__ = ()

    def __new__(
        cls,
        n_iters_impute=200,
        burn_in_impute=100,
        n_iters_forecast=20,
        burn_in_forecast=10,
        seed=0,
        threads=None,
        log_every=50,
    ):
        for n_iters, burn_in, label in (
            (n_iters_impute, burn_in_impute, "impute"),
            (n_iters_forecast, burn_in_forecast, "forecast"),
        ):
            if not 0 <= burn_in < n_iters:
                raise InvalidParameter(
                    f"{label} chain needs 0 <= burn_in < n_iters, got {burn_in}, {n_iters}"
                )
        threads = DEFAULT_THREADS if threads is None else max(int(threads), 1)
        return super().__new__(
            cls,
            int(n_iters_impute),
            int(burn_in_impute),
            int(n_iters_forecast),
            int(burn_in_forecast),
            int(seed),
            threads,
            int(log_every),
        )


GaussianWishart = collections.namedtuple("GaussianWishart", ["mu", "beta", "W_inv", "dof"])
Gaussian = collections.namedtuple("Gaussian", ["mean", "precision"])
MatrixNormalInverseWishart = collections.namedtuple(
    "MatrixNormalInverseWishart", ["Lambda", "V", "Psi", "dof"]
)
GammaParams = collections.namedtuple("GammaParams", ["shape", "rate"])


def initialize_factors(
    rank: int, n_channels: int, n_columns: int, rng: RandomSource, tau_eps: float = 1.0
) -> FactorState:
    """U and X columns drawn i.i.d. from ``INIT_SCALE * N(0, I)``."""
    U = INIT_SCALE * rng.standard_normal((rank, n_channels))
    X = INIT_SCALE * rng.standard_normal((rank, n_columns))
    return FactorState(U, X, tau_eps)


def spatial_hyper_posterior(U: np.ndarray, prior: PriorConfig) -> GaussianWishart:
    """Gaussian-Wishart posterior over (mu_u, Lambda_u) given the M spatial factors."""
    count = U.shape[1]
    u_bar = U.mean(axis=1)
    centered = U - u_bar[:, None]
    scatter = centered @ centered.T / count
    beta = prior.beta0 + count
    mu = (prior.beta0 * prior.mu0 + count * u_bar) / beta
    offset = prior.mu0 - u_bar
    W_inv = (
        spd_inverse(prior.W0, "W0")
        + count * scatter
        + (prior.beta0 * count / beta) * np.outer(offset, offset)
    )
    return GaussianWishart(mu, beta, symmetrize(W_inv), prior.v0 + count)


def sample_spatial_hyperparams(
    U: np.ndarray, prior: PriorConfig, rng: RandomSource
) -> SpatialHyperState:
    posterior = spatial_hyper_posterior(U, prior)
    Lambda_u = sample_wishart(spd_inverse(posterior.W_inv, "W0*^-1"), posterior.dof, rng, "W0*")
    mu_u = sample_mvn_precision(posterior.mu, posterior.beta * Lambda_u, rng, "beta0* Lambda_u")
    return SpatialHyperState(mu_u, Lambda_u)


def spatial_factor_posterior(
    i: int, obs: ObservationSet, X: np.ndarray, hyper: SpatialHyperState, tau_eps: float
) -> Gaussian:
    """Gaussian conditional of ``u_i``; the data sums run over the observed stamps of row ``i``."""
    observed = obs.mask[i]
    X_obs = X[:, observed]
    y_obs = obs.values[i, observed]
    precision = hyper.Lambda_u + tau_eps * (X_obs @ X_obs.T)
    rhs = tau_eps * (X_obs @ y_obs) + hyper.Lambda_u @ hyper.mu_u
    factor = cholesky(precision, f"Lambda_u* (channel {i})")
    mean = linalg.cho_solve((factor, True), rhs, check_finite=False)
    return Gaussian(mean, symmetrize(precision))


def sample_spatial_factor(
    i: int,
    obs: ObservationSet,
    X: np.ndarray,
    hyper: SpatialHyperState,
    tau_eps: float,
    rng: RandomSource,
) -> np.ndarray:
    posterior = spatial_factor_posterior(i, obs, X, hyper, tau_eps)
    name = f"Lambda_u* (channel {i})"
    return sample_mvn_precision(posterior.mean, posterior.precision, rng, name)


def sample_spatial_factors(
    obs: ObservationSet,
    X: np.ndarray,
    hyper: SpatialHyperState,
    tau_eps: float,
    rng: RandomSource,
    threads: int = 1,
) -> np.ndarray:
    """All ``u_i``; channel ``i`` draws from ``rng.child(i)`` so the thread count never matters."""
    channels = range(obs.n_channels)

    def draw(i):
        return sample_spatial_factor(i, obs, X, hyper, tau_eps, rng.child(i))

    if threads > 1 and obs.n_channels > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            columns = list(pool.map(draw, channels))
    else:
        columns = [draw(i) for i in channels]
    return np.column_stack(columns)


def temporal_hyper_posterior(
    X: np.ndarray, lags: Sequence[int], prior: PriorConfig
) -> MatrixNormalInverseWishart:
    """Matrix-Normal-Inverse-Wishart posterior over (A, Sigma) from the lagged regression."""
    P, Q = lagged_design(X, lags)
    V0_inv = spd_inverse(prior.V0, "V0")
    V_inv = symmetrize(V0_inv + Q.T @ Q)
    V = spd_inverse(V_inv, "V0*^-1")
    Lambda = V @ (V0_inv @ prior.Lambda0 + Q.T @ P)
    Psi = (
        prior.Psi0
        + P.T @ P
        + prior.Lambda0.T @ V0_inv @ prior.Lambda0
        - Lambda.T @ V_inv @ Lambda
    )
    return MatrixNormalInverseWishart(Lambda, V, symmetrize(Psi), prior.v0 + X.shape[1] - lags[-1])


def sample_temporal_hyperparams(
    X: np.ndarray, lags: Sequence[int], prior: PriorConfig, rng: RandomSource
) -> ARModel:
    posterior = temporal_hyper_posterior(X, lags, prior)
    Sigma = sample_inverse_wishart(posterior.Psi, posterior.dof, rng, "Psi0*")
    A = sample_matrix_normal(posterior.Lambda, posterior.V, Sigma, rng)
    return ARModel(lags, A, Sigma)


class TemporalTerms:
    """
    Pieces of the ``x_t`` conditional that do not depend on the current ``X``.

    Precision of ``x_t`` is ``tau sum_i u_i u_i^T + C_t + D_t`` (observed ``i`` only); ``C_t``
    collects the forward AR couplings ``A_j Sigma^-1 A_j^T`` for the lags with
    ``l_d <= t + l_j < T`` and ``D_t`` is ``I`` for ``t < l_d`` else ``Sigma^-1``.
    """

    def __init__(self, obs: ObservationSet, U: np.ndarray, ar: ARModel, tau_eps: float):
        self.ar = ar
        self.columns = columns = obs.n_columns
        rank = ar.K
        max_lag = ar.max_lag
        self.Sigma_inv = Sigma_inv = spd_inverse(ar.Sigma, "Sigma")
        self.blocks = [ar.block(j) for j in range(ar.order)]
        self.weighted = [block @ Sigma_inv for block in self.blocks]

        mask = obs.mask.astype(np.float64)
        gram = tau_eps * np.einsum("it,ki,li->tkl", mask, U, U)
        self.rhs = tau_eps * (U @ obs.observed())

        t = np.arange(columns)
        self.forward = [
            (t + lag >= max_lag) & (t + lag < columns) for lag in ar.lags
        ]  # per lag, which t receive a forward coupling
        coupling = np.zeros((columns, rank, rank))
        for valid, weighted, block in zip(self.forward, self.weighted, self.blocks):
            coupling[valid] += weighted @ block.T
        backward = np.where((t < max_lag)[:, None, None], np.eye(rank), Sigma_inv)
        self.precision = gram + coupling + backward

    def posterior(self, t: int, X: np.ndarray) -> Gaussian:
        ar = self.ar
        rhs = self.rhs[:, t].copy()
        for valid, weighted, block, lag in zip(self.forward, self.weighted, self.blocks, ar.lags):
            if not valid[t]:
                continue
            s = t + lag
            # phi_s = x_s - sum_{p != j} A_p^T x_{s - l_p}
            z_s = np.concatenate([X[:, s - other] for other in ar.lags])
            phi = X[:, s] - ar.A.T @ z_s + block.T @ X[:, t]
            rhs += weighted @ phi
        if t >= ar.max_lag:
            z = np.concatenate([X[:, t - lag] for lag in ar.lags])
            rhs += self.Sigma_inv @ (ar.A.T @ z)
        precision = self.precision[t]
        factor = cholesky(precision, f"Sigma_x* (t={t})")
        mean = linalg.cho_solve((factor, True), rhs, check_finite=False)
        return Gaussian(mean, symmetrize(precision))


def temporal_factor_posterior(
    t: int, obs: ObservationSet, U: np.ndarray, X: np.ndarray, ar: ARModel, tau_eps: float
) -> Gaussian:
    """Gaussian conditional of ``x_t`` (0-based ``t``) given every other column of ``X``."""
    if not 0 <= t < obs.n_columns:
        raise InvalidParameter(f"time {t} outside 0..{obs.n_columns - 1}")
    return TemporalTerms(obs, U, ar, tau_eps).posterior(t, X)


def sample_temporal_factor(
    t: int,
    obs: ObservationSet,
    U: np.ndarray,
    X: np.ndarray,
    ar: ARModel,
    tau_eps: float,
    rng: RandomSource,
) -> np.ndarray:
    posterior = temporal_factor_posterior(t, obs, U, X, ar, tau_eps)
    return sample_mvn_precision(posterior.mean, posterior.precision, rng, f"Sigma_x* (t={t})")


def sample_temporal_factors(
    obs: ObservationSet,
    U: np.ndarray,
    X: np.ndarray,
    ar: ARModel,
    tau_eps: float,
    rng: RandomSource,
) -> np.ndarray:
    """Sequential sweep over ``t = 0 .. T-1``; each draw sees the columns already updated."""
    terms = TemporalTerms(obs, U, ar, tau_eps)
    X = X.copy()
    for t in range(obs.n_columns):
        posterior = terms.posterior(t, X)
        name = f"Sigma_x* (t={t})"
        X[:, t] = sample_mvn_precision(posterior.mean, posterior.precision, rng, name)
    return X


def masked_precision_posterior(
    values: np.ndarray, mask: np.ndarray, U: np.ndarray, X: np.ndarray, prior: PriorConfig
) -> GammaParams:
    residual = np.where(mask, np.where(mask, values, 0.0) - U.T @ X, 0.0)
    return GammaParams(
        prior.a0 + 0.5 * int(mask.sum()), prior.b0 + 0.5 * float(np.sum(residual * residual))
    )


def precision_posterior(
    obs: ObservationSet, U: np.ndarray, X: np.ndarray, prior: PriorConfig
) -> GammaParams:
    """Gamma posterior of ``tau_eps``; residuals are summed over observed entries only."""
    return masked_precision_posterior(obs.values, obs.mask, U, X, prior)


def sample_precision(
    obs: ObservationSet, U: np.ndarray, X: np.ndarray, prior: PriorConfig, rng: RandomSource
) -> float:
    posterior = precision_posterior(obs, U, X, prior)
    return sample_gamma(posterior.shape, posterior.rate, rng)


def observed_rmse(obs: ObservationSet, estimate: np.ndarray) -> float:
    if not obs.n_observed:
        return float("nan")
    residual = (obs.values - estimate)[obs.mask]
    return float(np.sqrt(np.mean(residual * residual)))


ChainOutcome = collections.namedtuple("ChainOutcome", ["factors", "ar", "prediction"])


def run_imputation_chain(
    obs: ObservationSet,
    init: FactorState,
    ar_lags: Sequence[int],
    prior: PriorConfig,
    chain: ChainConfig,
    rng: RandomSource,
    *,
    context: Optional[dict] = None,
) -> ChainOutcome:
    """
    Gibbs chain over one window.

    Each sweep draws, in order: spatial hyperparameters, every ``u_i``, (A, Sigma), every
    ``x_t`` in increasing ``t``, then ``tau_eps``. From iteration ``burn_in_impute`` on
    (0-based) the reconstruction ``U^T X`` is folded into running moments.
    """
    init.check(obs)
    ar_lags = tuple(ar_lags)
    if obs.n_columns <= ar_lags[-1]:
        raise InsufficientHistory(
            f"window of {obs.n_columns} columns is too short for max lag {ar_lags[-1]}"
        )
    data = dict(context or {})
    U, X, tau_eps = init.U.copy(), init.X.copy(), init.tau_eps
    moments = RunningMoments(obs.shape)
    ar = None
    for iteration in range(chain.n_iters_impute):
        sweep = rng.child(iteration)
        try:
            hyper = sample_spatial_hyperparams(U, prior, sweep.child(SPATIAL_HYPER_STREAM))
            U = sample_spatial_factors(
                obs, X, hyper, tau_eps, sweep.child(SPATIAL_STREAM), chain.threads
            )
            ar = sample_temporal_hyperparams(X, ar_lags, prior, sweep.child(TEMPORAL_HYPER_STREAM))
            X = sample_temporal_factors(obs, U, X, ar, tau_eps, sweep.child(TEMPORAL_STREAM))
            tau_eps = sample_precision(obs, U, X, prior, sweep.child(PRECISION_STREAM))
        except BTMFError as e:
            raise e.annotate(f"iteration {iteration}") from e
        estimate = U.T @ X
        if iteration >= chain.burn_in_impute:
            moments.push(estimate)
        report = _should_report(iteration, chain)
        if report or logger.isEnabledFor(logging.DEBUG):
            rmse = observed_rmse(obs, estimate)
            data.update(iteration=iteration, tau_eps=tau_eps, rmse=rmse)
            logger.debug(
                f"iteration {iteration}: rmse={rmse:.6g} tau={tau_eps:.6g}",
                extra={"data": dict(data, event="chain.iteration")},
            )
            if report:
                logger.info(
                    f"Imputation chain {iteration + 1}/{chain.n_iters_impute}, "
                    f"observed rmse {rmse:.6g}",
                    extra={"data": dict(data, event="chain.progress")},
                )
    factors = FactorState(U, X, tau_eps)
    prediction = moments.result(Kind.IMPUTATION, obs.time_index)
    return ChainOutcome(factors, ar, prediction)


def _should_report(iteration: int, chain: ChainConfig) -> bool:
    last = iteration + 1 == chain.n_iters_impute
    return last or (chain.log_every > 0 and (iteration + 1) % chain.log_every == 0)


def impute(
    obs: ObservationSet,
    rank: int,
    ar_lags: Sequence[int],
    chain: ChainConfig,
    prior: Optional[PriorConfig] = None,
    rng: Optional[RandomSource] = None,
) -> ChainOutcome:
    """
    Cold-start chain over ``obs``.

    Uses the same stream layout as the first window of the incremental scheduler, so both
    produce identical output for the same seed.
    """
    rng = (rng or RandomSource(chain.seed)).child(0)
    prior = prior or PriorConfig.default(rank, len(ar_lags))
    init = initialize_factors(rank, obs.n_channels, obs.n_columns, rng.child(INIT_STREAM))
    return run_imputation_chain(obs, init, ar_lags, prior, chain, rng.child(CHAIN_STREAM))
