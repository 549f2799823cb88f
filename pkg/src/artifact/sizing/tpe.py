"""Tree-structured Parzen estimator for maximisation.

Parameters are sampled on a unit axis per range (log-transformed for
log-scale ranges). After the random start-up phase the history is split
at the gamma quantile; good and bad trials each get a truncated Gaussian
mixture with one kernel per trial plus a wide prior kernel. Candidates
are drawn from the good mixture and the one maximising l(x)/g(x) wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import _kernels
from .params import ParamSpace

GAMMA = 0.25
N_CANDIDATES = 24
DEFAULT_STARTUP = 10
STATUSES = ("ok", "sim_fail", "bias_fail")


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    bias: float | None = None
    objective: float = float("nan")
    metrics: dict = field(default_factory=dict)
    status: str = "ok"

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown trial status {self.status!r}")
        finite = self.objective is not None and math.isfinite(self.objective)
        if finite != (self.status == "ok"):
            raise ValueError("objective must be finite exactly when status is ok")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {"trial_id": self.trial_id, "params": self.params, "bias": self.bias,
                "objective": self.objective if self.ok else None, "metrics": self.metrics, "status": self.status}


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_uniform(space: ParamSpace, rng) -> dict:
    rng = _rng(rng)
    return {r.name: r.from_unit(float(rng.random())) for r in space.ranges}


def penalised_objectives(history: Sequence[TrialRecord]) -> np.ndarray:
    """Objectives with failures replaced by worst - 3 * spread of the ok ones."""
    ok = np.array([t.objective for t in history if t.ok], float)
    if ok.size:
        penalty = ok.min() - 3.0 * (ok.max() - ok.min()) - 1e-12
    else:
        penalty = 0.0
    return np.array([t.objective if t.ok else penalty for t in history], float)


BANDWIDTH_SCALE = 0.2


def _bandwidth(points: np.ndarray) -> np.ndarray:
    """Scott's n^(-1/(d+4)) rate with a fixed spread of 0.2 on the unit axis.

    The sample spread of the good set shrinks as trials cluster, and a
    bandwidth built from it freezes the search around an early optimum.
    """
    n, d = points.shape
    return np.full(d, BANDWIDTH_SCALE * n ** (-1.0 / (d + 4)))


@dataclass
class Parzen:
    """Truncated Gaussian mixture on [0, 1]^d."""

    centers: np.ndarray  # (k, d)
    sigmas: np.ndarray  # (k, d)
    log_weights: np.ndarray  # (k,)

    @classmethod
    def fit(cls, points: np.ndarray, prior_weight: float = 1.0) -> "Parzen":
        n, d = points.shape
        sig = _bandwidth(points)
        centers = np.vstack([points, np.full((1, d), 0.5)])
        sigmas = np.vstack([np.tile(sig, (n, 1)), np.ones((1, d))])
        w = np.append(np.ones(n), prior_weight)
        return cls(centers, sigmas, np.log(w / w.sum()))

    def logpdf(self, x: np.ndarray, multivariate: bool = True) -> np.ndarray:
        d = x.shape[1]
        low, high = np.zeros(d), np.ones(d)
        if multivariate:
            return _kernels.parzen_logpdf(x, self.centers, self.sigmas, self.log_weights, low, high)
        # independent marginals: product of per-dimension mixtures
        return sum(_kernels.parzen_logpdf(x[:, j:j + 1], self.centers[:, j:j + 1], self.sigmas[:, j:j + 1],
                                          self.log_weights, low[:1], high[:1]) for j in range(d))

    def sample(self, rng: np.random.Generator, m: int, multivariate: bool = True) -> np.ndarray:
        k, d = self.centers.shape
        p = np.exp(self.log_weights)
        p /= p.sum()
        comp = rng.choice(k, size=m, p=p) if multivariate else rng.choice(k, size=(m, d), p=p)
        if multivariate:
            mu, sd = self.centers[comp], self.sigmas[comp]
        else:
            cols = np.arange(d)[None, :]
            mu, sd = self.centers[comp, cols], self.sigmas[comp, cols]
        out = mu + sd * rng.standard_normal((m, d))
        # redraw anything outside the box, then clip as a last resort
        for _ in range(100):
            bad = (out < 0) | (out > 1)
            if not bad.any():
                break
            out[bad] = mu[bad] + sd[bad] * rng.standard_normal(int(bad.sum()))
        return np.clip(out, 0.0, 1.0)


def tpe_suggest(history: Sequence[TrialRecord], space: ParamSpace, rng_seed=None, n_startup: int = DEFAULT_STARTUP,
                gamma: float = GAMMA, n_candidates: int = N_CANDIDATES, multivariate: bool = True) -> dict:
    """Next parameter set to evaluate (maximising ``objective``)."""
    rng = _rng(rng_seed)
    if len(history) < max(n_startup, 2) or not any(t.ok for t in history):
        return sample_uniform(space, rng)
    names = space.names
    x = np.array([[space.range(n).to_unit(float(t.params[n])) for n in names] for t in history], float)
    y = penalised_objectives(history)
    order = np.argsort(-y, kind="stable")
    n_good = max(1, min(len(y) - 1, math.ceil(gamma * len(y))))
    good, bad = x[order[:n_good]], x[order[n_good:]]
    l_dens, g_dens = Parzen.fit(good), Parzen.fit(bad)
    cand = l_dens.sample(rng, n_candidates, multivariate)
    score = l_dens.logpdf(cand, multivariate) - g_dens.logpdf(cand, multivariate)
    best = cand[int(np.argmax(score))]
    return {n: space.range(n).from_unit(float(u)) for n, u in zip(names, best)}
