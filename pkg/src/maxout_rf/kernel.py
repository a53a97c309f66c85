"""Expected kernel of random maxout units.

The expected kernel of one unit factors as ``sigma2(q) * <x, z> * kappa_q(rho)``
where ``kappa_q`` is the probability that ``x`` and ``z`` select the same
projection.  ``kappa_q`` is available three ways: a Monte-Carlo collision
estimate, a three-term power series in ``rho``, and (for ``q = 2``) an exact
closed form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import log_ndtr

from .errors import InvalidArgumentError

SERIES_RHO_LIMIT = 0.5
METHODS = ("series", "mc", "closed_form_q2")
_MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class EstimationSettings:
    """How moments of the Gaussian maximum are computed.

    Gauss-Legendre quadrature on ``[lower, upper]`` is the primary route; if
    the quadrature fails to integrate the density of the maximum to one within
    ``mass_tol``, a Monte-Carlo estimate with ``mc_samples`` draws is used.
    """

    nodes: int = 200
    lower: float = -12.0
    upper: float = 12.0
    mass_tol: float = 1e-8
    mc_samples: int = 1_000_000
    seed: int = 0


DEFAULT_SETTINGS = EstimationSettings()


def _check_q(q):
    if isinstance(q, bool) or not isinstance(q, (int, np.integer)) or q < 1:
        raise InvalidArgumentError(f"q must be a positive integer, got {q!r}")


def _max_moments(q, settings):
    """Return ``(E[M], E[M^2], meta)`` for the max ``M`` of ``q`` standard normals."""
    t, w = leggauss(settings.nodes)
    half = 0.5 * (settings.upper - settings.lower)
    t = half * t + 0.5 * (settings.upper + settings.lower)
    w = half * w
    log_density = (math.log(q) - 0.5 * t * t - 0.5 * math.log(2 * math.pi)
                   + (q - 1) * log_ndtr(t))
    f = w * np.exp(log_density)
    mass = f.sum()
    if abs(mass - 1.0) <= settings.mass_tol:
        meta = {"method": "gauss_legendre", "nodes": settings.nodes,
                "interval": (settings.lower, settings.upper), "mass_error": float(mass - 1.0)}
        return float(f @ t), float(f @ (t * t)), meta

    rng = np.random.Generator(np.random.Philox(settings.seed))
    s1 = s2 = 0.0
    remaining = settings.mc_samples
    while remaining:
        n = min(remaining, _MC_CHUNK)
        mx = rng.standard_normal((n, q)).max(axis=1)
        s1 += mx.sum()
        s2 += (mx * mx).sum()
        remaining -= n
    meta = {"method": "monte_carlo", "samples": settings.mc_samples, "seed": settings.seed,
            "quadrature_mass_error": float(mass - 1.0)}
    return s1 / settings.mc_samples, s2 / settings.mc_samples, meta


def sigma2(q: int, settings: EstimationSettings = DEFAULT_SETTINGS) -> float:
    """Second moment of the maximum of ``q`` i.i.d. standard normals."""
    _check_q(q)
    if q == 1:
        return 1.0
    return _max_moments(q, settings)[1]


def hermite_moment(i: int, q: int, settings: EstimationSettings = DEFAULT_SETTINGS) -> float:
    """``E[phi_i(M_q)]`` for the unit-norm Hermite polynomials ``phi_1, phi_2``.

    ``phi_1(t) = t`` and ``phi_2(t) = (t^2 - 1) / sqrt(2)``.
    """
    if i not in (1, 2):
        raise InvalidArgumentError(f"only Hermite orders 1 and 2 are supported, got {i!r}")
    _check_q(q)
    if q == 1:
        return 0.0
    m1, m2, _ = _max_moments(q, settings)
    return m1 if i == 1 else (m2 - 1.0) / math.sqrt(2.0)


def series_coefficients(q: int, settings: EstimationSettings = DEFAULT_SETTINGS):
    """First three power-series coefficients ``(a0, a1, a2)`` of ``kappa_q``."""
    _check_q(q)
    if q == 1:
        return 1.0, 0.0, 0.0
    a0 = 1.0 / q
    a1 = hermite_moment(1, q, settings) ** 2 / (q - 1)
    a2 = 0.0 if q == 2 else q * hermite_moment(2, q, settings) ** 2 / ((q - 1) * (q - 2))
    return a0, a1, a2


@dataclass(frozen=True)
class KernelModel:
    """Cached constants of the maxout kernel for one pool size."""

    q: int
    sigma2: float
    h1: float
    h2: float
    a0: float
    a1: float
    a2: float
    settings: EstimationSettings = DEFAULT_SETTINGS
    estimation_meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, q: int, settings: EstimationSettings = DEFAULT_SETTINGS) -> "KernelModel":
        _check_q(q)
        if q == 1:
            meta = {"method": "analytic"}
            return cls(q, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, settings, meta)
        m1, m2, meta = _max_moments(q, settings)
        h1 = m1
        h2 = (m2 - 1.0) / math.sqrt(2.0)
        a0, a1, a2 = series_coefficients(q, settings)
        meta = dict(meta, settings=asdict(settings))
        return cls(q, m2, h1, h2, a0, a1, a2, settings, meta)

    def kappa_series(self, rho: float) -> float:
        return self.a0 + self.a1 * rho + self.a2 * rho * rho


def _check_rho(rho):
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise InvalidArgumentError(f"rho must lie in [-1, 1], got {rho}")
    return rho


def kappa_mc(q: int, rho: float, n_samples: int, seed: int = 0):
    """Monte-Carlo estimate of the collision probability ``kappa_q(rho)``.

    Each sample draws ``q`` pairs ``(g_j, rho*g_j + sqrt(1-rho^2)*h_j)`` and
    checks whether both coordinates peak at the same ``j``.  Returns
    ``(estimate, binomial standard error)``.
    """
    _check_q(q)
    rho = _check_rho(rho)
    if isinstance(n_samples, bool) or int(n_samples) < 1:
        raise InvalidArgumentError(f"n_samples must be >= 1, got {n_samples!r}")
    n_samples = int(n_samples)
    if q == 1:
        return 1.0, 0.0
    rng = np.random.Generator(np.random.Philox(seed))
    c = math.sqrt(1.0 - rho * rho)
    hits = 0
    remaining = n_samples
    while remaining:
        n = min(remaining, _MC_CHUNK)
        g = rng.standard_normal((n, q))
        h = rng.standard_normal((n, q))
        gz = rho * g + c * h
        hits += int(np.count_nonzero(g.argmax(axis=1) == gz.argmax(axis=1)))
        remaining -= n
    p = hits / n_samples
    return p, math.sqrt(p * (1.0 - p) / n_samples)


def kappa_closed_form_q2(rho: float) -> float:
    """Exact collision probability for two projections: ``1 - arccos(rho)/pi``."""
    rho = _check_rho(rho)
    return 1.0 - math.acos(rho) / math.pi


def product_moment_mc(q: int, rho: float, n_samples: int, seed: int = 0):
    """Monte-Carlo estimate of ``E[h(x) h(z)]`` for unit vectors at cosine ``rho``.

    This averages the product of the two maxima directly, without the
    collision factorization, and serves as a ground-truth check on it.
    Returns ``(estimate, standard error)``.
    """
    _check_q(q)
    rho = _check_rho(rho)
    rng = np.random.Generator(np.random.Philox(seed))
    c = math.sqrt(1.0 - rho * rho)
    s1 = s2 = 0.0
    remaining = int(n_samples)
    while remaining:
        n = min(remaining, _MC_CHUNK)
        g = rng.standard_normal((n, q))
        gz = rho * g + c * rng.standard_normal((n, q))
        prod = g.max(axis=1) * gz.max(axis=1)
        s1 += prod.sum()
        s2 += (prod * prod).sum()
        remaining -= n
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0)
    return mean, math.sqrt(var / n_samples)


class KernelValue(NamedTuple):
    value: float
    method: str
    kappa: float
    rho: float
    # True when the truncated series is used outside |rho| <= SERIES_RHO_LIMIT.
    extrapolated: bool = False


def expected_kernel(model: KernelModel, x, z, method: str = "series",
                    n_samples: int | None = None, seed: int | None = None) -> KernelValue:
    """``sigma2(q) * <x, z> * kappa`` with ``kappa`` from the requested method."""
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}; expected one of {METHODS}")
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape or x.ndim != 1:
        raise InvalidArgumentError(f"x and z must be vectors of equal length, got {x.shape} and {z.shape}")
    if method == "closed_form_q2" and model.q != 2:
        raise InvalidArgumentError(f"closed_form_q2 requires q=2, model has q={model.q}")
    dot = float(x @ z)
    nx, nz = float(np.linalg.norm(x)), float(np.linalg.norm(z))
    if nx == 0.0 or nz == 0.0:
        if method == "series":
            raise InvalidArgumentError("series evaluation needs nonzero vectors to define rho")
        return KernelValue(0.0, method, float("nan"), float("nan"))
    rho = min(1.0, max(-1.0, dot / (nx * nz)))

    extrapolated = False
    if method == "series":
        kappa = model.kappa_series(rho)
        extrapolated = abs(rho) > SERIES_RHO_LIMIT
    elif method == "closed_form_q2":
        kappa = kappa_closed_form_q2(rho)
    elif rho == 1.0:
        kappa = 1.0
    else:
        n = n_samples or model.settings.mc_samples
        kappa, _ = kappa_mc(model.q, rho, n, model.settings.seed if seed is None else seed)
    return KernelValue(model.sigma2 * dot * kappa, method, kappa, rho, extrapolated)


def expected_distance2(model: KernelModel, rho: float, n_samples: int | None = None,
                       seed: int | None = None) -> float:
    """Expected squared embedded distance ``sigma2 * (2 - 2*rho*kappa(rho))`` for unit vectors."""
    rho = _check_rho(rho)
    if rho == 1.0:
        return 0.0
    n = n_samples or model.settings.mc_samples
    kappa, _ = kappa_mc(model.q, rho, n, model.settings.seed if seed is None else seed)
    return model.sigma2 * (2.0 - 2.0 * rho * kappa)
