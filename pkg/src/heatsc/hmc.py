"""Hamiltonian Monte Carlo with leapfrog integration and dual averaging.

A self-contained fixed-trajectory-length sampler for smooth unconstrained
targets. Chains run on independent, deterministic random substreams
derived from one seed, so results are reproducible and independent of
how chains are scheduled. Step sizes adapt during warmup by
Nesterov-style dual averaging toward a target acceptance rate; a
diagonal mass matrix is estimated per chain from mid-warmup draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HeatscError, NonFiniteDensityError

# dual-averaging constants (standard choices)
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75
# energy error beyond which a trajectory is declared divergent
MAX_DELTA_H = 1000.0


def leapfrog(
    q: np.ndarray,
    p: np.ndarray,
    step,
    n_steps: int,
    grad_logp,
    inv_mass=1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate Hamilton's equations for ``n_steps`` leapfrog steps.

    Parameters
    ----------
    q, p : ndarray, shape (C, D)
        Positions and momenta, one row per chain.
    step : float or ndarray (C,)
        Step size(s).
    grad_logp : callable
        Maps positions (C, D) to the gradient of log density (C, D).
    inv_mass : float or ndarray broadcastable to (C, D)
        Inverse mass matrix diagonal.

    Returns
    -------
    (q_new, p_new) after the trajectory. The integrator is reversible:
    running it again from (q_new, -p_new) returns the start point.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    step = np.asarray(step, dtype=float)
    if step.ndim == 1:
        step = step[:, None]
    p = p + 0.5 * step * grad_logp(q)
    for i in range(n_steps):
        q = q + step * inv_mass * p
        g = grad_logp(q)
        if i < n_steps - 1:
            p = p + step * g
        else:
            p = p + 0.5 * step * g
    return q, p


@dataclass
class HmcResult:
    """Post-warmup draws plus sampler health indicators."""

    draws: np.ndarray = field(repr=False)   # (chains, kept, dim)
    accept_rate: np.ndarray                 # (chains,)
    divergences: int
    step_size: np.ndarray                   # (chains,)
    inv_mass: np.ndarray = field(repr=False)  # (chains, dim)


def _reasonable_step(logp_grad, x: np.ndarray, rng: np.random.Generator) -> float:
    """Crude initial step size: double/halve until acceptance crosses 0.5."""
    d = x.size
    eps = 0.1 / max(1.0, d) ** 0.25
    p0 = rng.standard_normal(d)
    lp0, _ = logp_grad(x[None, :])

    def accept_prob(e: float) -> float:
        q1, p1 = leapfrog(
            x[None, :], p0[None, :], np.array([e]), 1,
            lambda qq: logp_grad(qq)[1],
        )
        lp1, _ = logp_grad(q1)
        dh = (lp1[0] - 0.5 * float(p1 @ p1.T)) - (lp0[0] - 0.5 * float(p0 @ p0))
        return float(np.exp(min(0.0, dh))) if np.isfinite(dh) else 0.0

    a = accept_prob(eps)
    direction = 1.0 if a > 0.5 else -1.0
    for _ in range(50):
        eps *= 2.0**direction
        a = accept_prob(eps)
        if (direction > 0 and a <= 0.5) or (direction < 0 and a >= 0.5):
            break
    return eps


def sample_hmc(
    logp_and_grad,
    x0: np.ndarray,
    chains: int = 4,
    iters: int = 1500,
    warmup: int = 500,
    leapfrog_steps: int = 32,
    seed: int = 0,
    target_accept: float = 0.8,
    jitter: float = 0.1,
) -> HmcResult:
    """Run fixed-length HMC chains and return post-warmup draws.

    Parameters
    ----------
    logp_and_grad : callable
        Vectorized target: maps (C, D) positions to a (C,) log density
        and its (C, D) gradient.
    x0 : ndarray, shape (D,)
        Starting point; chains are jittered around it.
    iters : int
        Total iterations per chain, warmup included.
    warmup : int
        Adaptation iterations discarded from the output.
    """
    if chains < 1:
        raise HeatscError("need at least one chain")
    if not 0 <= warmup < iters:
        raise HeatscError("need 0 <= warmup < iters")
    x0 = np.asarray(x0, dtype=float).ravel()
    dim = x0.size
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(chains)]

    q = np.empty((chains, dim))
    for c, rng in enumerate(rngs):
        q[c] = x0 + jitter * rng.standard_normal(dim)
    lp, _ = logp_and_grad(q)
    if not np.all(np.isfinite(lp)):
        raise NonFiniteDensityError("log density not finite at the initial point")

    grad_only = lambda qq: logp_and_grad(qq)[1]  # noqa: E731

    eps = np.array([_reasonable_step(logp_and_grad, q[c], rngs[c]) for c in range(chains)])
    inv_mass = np.ones((chains, dim))

    # dual-averaging state, reset when the mass matrix changes
    mu = np.log(10.0 * eps)
    log_eps_bar = np.log(eps)
    h_bar = np.zeros(chains)
    da_iter = np.zeros(chains)

    stage1 = max(1, int(0.15 * warmup)) if warmup else 0
    mass_end = max(stage1 + 1, int(0.8 * warmup)) if warmup else 0
    window: list[np.ndarray] = []

    kept = np.empty((chains, iters - warmup, dim))
    n_accept = np.zeros(chains)
    divergences = 0

    p = np.empty_like(q)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(iters):
            for c, rng in enumerate(rngs):
                p[c] = rng.standard_normal(dim) / np.sqrt(inv_mass[c])
            lp0, _ = logp_and_grad(q)
            h0 = -lp0 + 0.5 * np.sum(p * p * inv_mass, axis=1)
            q_new, p_new = leapfrog(q, p, eps, leapfrog_steps, grad_only, inv_mass)
            lp1, _ = logp_and_grad(q_new)
            h1 = -lp1 + 0.5 * np.sum(p_new * p_new * inv_mass, axis=1)
            delta_h = h1 - h0
            delta_h = np.where(np.isfinite(delta_h), delta_h, np.inf)
            divergent = delta_h > MAX_DELTA_H
            accept_p = np.where(divergent, 0.0, np.exp(np.minimum(0.0, -delta_h)))

            u = np.array([rngs[c].uniform() for c in range(chains)])
            accepted = (u < accept_p) & ~divergent
            q[accepted] = q_new[accepted]

            if it >= warmup:
                kept[:, it - warmup, :] = q
                n_accept += accepted
                divergences += int(divergent.sum())
            else:
                # dual averaging toward the target acceptance rate
                da_iter += 1.0
                eta = 1.0 / (da_iter + _DA_T0)
                h_bar = (1.0 - eta) * h_bar + eta * (target_accept - accept_p)
                log_eps = mu - np.sqrt(da_iter) / _DA_GAMMA * h_bar
                w = da_iter ** (-_DA_KAPPA)
                log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar
                eps = np.exp(log_eps)
                if stage1 <= it < mass_end:
                    window.append(q.copy())
                if it == mass_end - 1 and len(window) >= 10:
                    draws = np.stack(window, axis=1)  # (chains, n, dim)
                    var = draws.var(axis=1, ddof=1)
                    n = draws.shape[1]
                    inv_mass = n / (n + 5.0) * var + 5.0 / (n + 5.0) * 1e-3
                    inv_mass = np.maximum(inv_mass, 1e-10)
                    # restart step adaptation around the current step size
                    eps = np.exp(log_eps_bar)
                    mu = np.log(10.0 * eps)
                    log_eps_bar = np.log(eps)
                    h_bar = np.zeros(chains)
                    da_iter = np.zeros(chains)
                if it == warmup - 1:
                    eps = np.exp(log_eps_bar)

    return HmcResult(
        draws=kept,
        accept_rate=n_accept / max(1, iters - warmup),
        divergences=divergences,
        step_size=eps,
        inv_mass=inv_mass,
    )


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------

def split_rhat(draws: np.ndarray) -> float:
    """Split-chain potential scale reduction factor for one scalar parameter.

    ``draws`` has shape (chains, n). Each chain is split in half, so two
    chains yield four sequences.
    """
    draws = np.asarray(draws, dtype=float)
    chains, n = draws.shape
    half = n // 2
    if half < 2:
        return float("nan")
    seqs = np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)
    w = seqs.var(axis=1, ddof=1).mean()
    b = half * seqs.mean(axis=1).var(ddof=1)
    if w <= 0.0:
        return 1.0
    var_hat = (half - 1.0) / half * w + b / half
    return float(np.sqrt(var_hat / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a 1-d sequence via FFT."""
    n = x.size
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    return np.fft.irfft(f * np.conj(f), m)[:n].real / n


def ess_bulk(draws: np.ndarray) -> float:
    """Effective sample size with Geyer's initial monotone sequence.

    ``draws`` has shape (chains, n); chains are split in half first.
    """
    draws = np.asarray(draws, dtype=float)
    chains, n = draws.shape
    half = n // 2
    if half < 4:
        return float("nan")
    seqs = np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)
    m = seqs.shape[0]
    chain_var = seqs.var(axis=1, ddof=1)
    w = chain_var.mean()
    b = half * seqs.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_hat = (half - 1.0) / half * w + b / half
    if var_hat <= 0.0:
        return 0.0
    acov = np.stack([_autocov(seqs[i]) for i in range(m)])
    rho = 1.0 - (w - acov.mean(axis=0)) / var_hat
    rho[0] = 1.0
    # Geyer pairs: truncate at the first negative pair, enforce monotonicity
    max_pairs = half // 2
    tau = 0.0
    prev = np.inf
    for k in range(max_pairs):
        pair = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < half else 0.0)
        if pair < 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
    tau = max(2.0 * tau - 1.0, 1.0 / np.log10(m * half + 10.0))
    ess = m * half / tau
    return float(min(ess, m * half))
