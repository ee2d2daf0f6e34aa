"""Coarse-to-fine search for (lambda, mu) on a multiplicative 3x3 grid."""

import math
from dataclasses import dataclass, field


@dataclass
class TuneConfig:
    lmbda: float = 1.0
    mu: float = 1.0
    gamma_lambda: float = 4.0
    gamma_mu: float = 4.0
    zeta: float = 0.5
    threshold: float = 1.01
    max_evals: int = 1000

    def __post_init__(self):
        if self.gamma_lambda <= 1 or self.gamma_mu <= 1:
            raise ValueError("grid factors must exceed 1")
        if self.threshold <= 1:
            raise ValueError("threshold must exceed 1")
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")


@dataclass
class TuneResult:
    lmbda: float
    mu: float
    score: float
    evaluations: int
    history: list = field(default_factory=list)  # (lambda, mu, score) in evaluation order


# axis neighbours before corners, so ties keep as many coordinates centred as possible
_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def _key(a, b):
    # grid points reached along different paths differ by rounding only
    return (round(math.log(a), 9), round(math.log(b), 9))


def tune(score_fn, cfg=None, log=None):
    """Maximise ``score_fn(lambda, mu)``.

    Each round scores the grid ``{l / g_l, l, l * g_l} x {m / g_m, m, m * g_m}``.
    If the best point keeps the current lambda, ``g_l`` shrinks to ``g_l ** zeta``;
    otherwise lambda moves to the best value.  The same rule applies to mu.
    Stops once both factors drop below the threshold.  Pairs are scored at
    most once; non-finite scores count as -inf and ties favour the centre.
    """
    cfg = cfg or TuneConfig()
    lam, mu = cfg.lmbda, cfg.mu
    g_lam, g_mu = cfg.gamma_lambda, cfg.gamma_mu
    cache, history = {}, []

    def score(a, b):
        key = _key(a, b)
        if key not in cache:
            if len(cache) >= cfg.max_evals:
                raise RuntimeError(f"tuner exceeded {cfg.max_evals} evaluations")
            s = float(score_fn(a, b))
            cache[key] = s if math.isfinite(s) else -math.inf
            history.append((a, b, cache[key]))
            if log is not None:
                log(a, b, cache[key])
        return cache[key]

    while g_lam >= cfg.threshold or g_mu >= cfg.threshold:
        best = (score(lam, mu), 0, 0)
        for i, j in _NEIGHBOURS:
            s = score(lam * g_lam ** i, mu * g_mu ** j)
            if s > best[0]:
                best = (s, i, j)
        _, i, j = best
        if i == 0:
            g_lam = g_lam ** cfg.zeta
        else:
            lam = lam * g_lam ** i
        if j == 0:
            g_mu = g_mu ** cfg.zeta
        else:
            mu = mu * g_mu ** j
    return TuneResult(lam, mu, cache[_key(lam, mu)], len(cache), history)
