"""MCMC quality metrics: ESS, split R-hat, MCSE, relative error and JSON summaries."""

from __future__ import annotations

import hashlib
import json
import warnings

import numpy as np

SCHEMA_VERSION = 1


class DiagnosticWarning(UserWarning):
    """Raised (as a warning) when a statistic is undefined for the given input."""


def _autocorr(x):
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    return acov / acov[0]


def ess(samples):
    """Effective sample size by Geyer's initial monotone sequence estimator.

    A constant series has no defined autocorrelation; 0 is returned and a
    :class:`DiagnosticWarning` is issued.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ValueError("ESS needs at least 10 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if np.ptp(x) == 0 or x.var() <= 1e-300 * max(1.0, float(np.abs(x).max()) ** 2):
        warnings.warn("constant series: ESS set to 0", DiagnosticWarning, stacklevel=2)
        return 0.0
    rho = _autocorr(x)
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    # initial positive sequence, then force it to be non-increasing
    neg = np.nonzero(pairs <= 0)[0]
    pairs = pairs[: neg[0]] if neg.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(min(n / max(tau, 1e-12), n))


def mcse(samples):
    """Monte Carlo standard error of the mean, sd / sqrt(ESS)."""
    x = np.asarray(samples, dtype=float).ravel()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiagnosticWarning)
        e = ess(x)
    if e == 0:
        return 0.0
    return float(x.std(ddof=1) / np.sqrt(e))


def _as_collection(chains):
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("chains must be shaped (chains, iterations[, parameters])")
    return arr


def psrf(chains, parameter=0):
    """Split potential scale reduction factor for one parameter.

    ``chains`` is (chains, iterations) or (chains, iterations, parameters).
    Each chain is halved before the usual between/within comparison.
    Returns nan with a :class:`DiagnosticWarning` when every split chain has
    zero variance.
    """
    arr = _as_collection(chains)
    if arr.shape[0] < 2:
        raise ValueError("PSRF needs at least two chains")
    if arr.shape[1] < 4:
        raise ValueError("PSRF needs chains of length at least 4")
    x = arr[:, :, parameter]
    half = x.shape[1] // 2
    split = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    n = split.shape[1]
    W = split.var(axis=1, ddof=1).mean()
    B_over_n = split.mean(axis=1).var(ddof=1)
    if W <= 0:
        warnings.warn("zero within-chain variance: PSRF undefined", DiagnosticWarning, stacklevel=2)
        return float("nan")
    var_plus = (n - 1) / n * W + B_over_n
    return float(np.sqrt(var_plus / W))


def relative_error(means, truth):
    """Per-parameter |mean - truth| / truth and its average."""
    means = np.asarray(means, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if means.shape != truth.shape:
        raise ValueError("means and truth differ in shape")
    if np.any(truth <= 0):
        raise ValueError("true parameters must be positive")
    rel = np.abs(means - truth) / truth
    return rel, float(rel.mean())


def iterations_to_converge(chains, threshold=1.1, step=1, start=4):
    """Smallest prefix length at which every parameter's PSRF drops below ``threshold``.

    Returns None if the full chains do not reach it.
    """
    arr = _as_collection(chains)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiagnosticWarning)
        for n in range(start, arr.shape[1] + 1, step):
            r = [psrf(arr[:, :n], p) for p in range(arr.shape[2])]
            if all(np.isfinite(v) and v < threshold for v in r):
                return n
    return None


def config_digest(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def summarize(chains, names=None, wall_minutes=None, seed=None, config=None, extra=None):
    """JSON-ready summary of a (chains, iterations, parameters) sample array."""
    arr = _as_collection(chains)
    n_params = arr.shape[2]
    names = names or [f"theta_{i}" for i in range(n_params)]
    params = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiagnosticWarning)
        for p in range(n_params):
            pooled = arr[:, :, p].ravel()
            e = sum(ess(c) for c in arr[:, :, p]) if arr.shape[1] >= 10 else float("nan")
            q = np.quantile(pooled, [0.025, 0.5, 0.975])
            r = psrf(arr, p) if arr.shape[0] >= 2 and arr.shape[1] >= 4 else None
            params[names[p]] = {
                "mean": float(pooled.mean()),
                "sd": float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
                "q2.5": float(q[0]), "q50": float(q[1]), "q97.5": float(q[2]),
                "ess": float(e),
                "ess_per_min": float(e / wall_minutes) if wall_minutes else None,
                "psrf": None if r is None or not np.isfinite(r) else float(r),
            }
    out = {
        "schema_version": SCHEMA_VERSION,
        "n_chains": int(arr.shape[0]),
        "n_samples": int(arr.shape[1]),
        "parameters": params,
        "metadata": {
            "seed": seed,
            "config_digest": config_digest(config) if config is not None else None,
            "wall_minutes": wall_minutes,
        },
    }
    if extra:
        out["metadata"].update(extra)
    return out
