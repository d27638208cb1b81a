"""Convergence diagnostics: split-chain R-hat and autocorrelation-based ESS."""
from __future__ import annotations

import numpy as np


def gelman_rubin(chains) -> float:
    """Split-chain potential scale reduction factor.

    chains: (M, S) draws, one row per chain (a single chain is split too).
    Returns nan when the draws are constant, where the statistic is
    undefined.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    n = chains.shape[1]
    half = n // 2
    if half < 2:
        return float("nan")
    splits = np.concatenate([chains[:, :half], chains[:, n - half:]])
    within = splits.var(axis=1, ddof=1).mean()
    if within == 0 or not np.isfinite(within):
        return float("nan")
    between = half * splits.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariances (lag 0..n-1) via FFT."""
    n = x.size
    centered = x - x.mean()
    width = 1 << (2 * n - 1).bit_length()
    freq = np.fft.rfft(centered, width)
    return np.fft.irfft(freq * np.conj(freq), width)[:n] / n


def effective_sample_size(chains) -> float:
    """Multi-chain ESS with Geyer truncation.

    Combined autocorrelations are summed in pairs and the sum stops at the
    first negative paired term.  A constant series gives nan.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float("nan")
    acov = np.stack([_autocov(c) for c in chains])
    within = (acov[:, 0] * n / (n - 1)).mean()
    var_plus = within * (n - 1) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if within == 0 or var_plus == 0 or not np.isfinite(var_plus):
        return float("nan")
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    tau = -1.0
    for k in range(n // 2):
        paired = rho[2 * k] + rho[2 * k + 1]
        if k > 0 and paired < 0:
            break
        tau += 2.0 * paired
    tau = max(tau, 1.0 / np.log10(max(m * n, 10)))
    return float(m * n / tau)
