"""Outage probability of the beamformed link under position uncertainty.

The complementary outage region (the set of true positions whose received
SNR meets a target under a fixed beam) is approximated by an ellipse built
from a second-order expansion of the beam pattern around the beam center.
The outage probability of a Gaussian position is then an erf integral over
that ellipse, evaluated with Gauss-Legendre quadrature along the x axis.

A Monte Carlo routine using the exact array response (sidelobes included)
serves as the reference throughout the tests.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erf as _erf

from .config import ScenarioConfig
from .ekf import planning_posterior, position_marginal

_SQRT2PI = math.sqrt(2.0 * math.pi)
_MC_BLOCK = 1 << 16
_UINT64_MASK = (1 << 64) - 1

# coverage-mass quadrature: absolute tolerance and the panel-split budget
_QUAD_TOL = 1e-11
_QUAD_MAX_PANELS = 512

_gl_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _gl_cache:
        _gl_cache[n] = np.polynomial.legendre.leggauss(n)
    return _gl_cache[n]


@dataclass
class PositionGaussian:
    mean: np.ndarray   # (2,)
    cov: np.ndarray    # (2, 2), symmetric positive semidefinite


@dataclass
class SnrTargets:
    gamma_pred: float
    gamma_est: float


# ----------------------------------------------------------------------
# array response
# ----------------------------------------------------------------------

def taylor_m(n_tx: int) -> float:
    """Curvature of the broadside beam pattern peak in the cosine offset."""
    return n_tx * math.pi ** 2 * (n_tx ** 2 - 1) / 24.0


def kappa(true_pos, beam_pos):
    """Cosine offset between beam direction and true direction.

    Accepts arrays of true positions with shape (..., 2).
    """
    tp = np.asarray(true_pos, float)
    bx, by = float(beam_pos[0]), float(beam_pos[1])
    rb = math.hypot(bx, by)
    x, y = tp[..., 0], tp[..., 1]
    r = np.hypot(x, y)
    return bx / rb - x / r


def beam_gain_kappa(kap, n_tx: int):
    """Exact magnitude of the ULA response inner product at cosine offset kap."""
    kap = np.asarray(kap, float)
    denom = np.sin(math.pi * kap / 2.0)
    num = np.sin(n_tx * math.pi * kap / 2.0)
    near_peak = np.abs(denom) < 1e-9
    safe = np.where(near_peak, 1.0, denom)
    gain = np.where(near_peak, float(n_tx), np.abs(num / safe))
    return gain if gain.shape else float(gain)


def beam_gain(theta_true, theta_beam: float, n_tx: int):
    """Beam gain toward angle(s) theta_true with the beam steered at theta_beam."""
    kap = math.cos(theta_beam) - np.cos(np.asarray(theta_true, float))
    return beam_gain_kappa(kap, n_tx)


def snr_at(true_pos, beam_pos, cfg: ScenarioConfig) -> float:
    """Realized downlink SNR at an exact position, exact array response."""
    x, y = float(true_pos[0]), float(true_pos[1])
    r = math.hypot(x, y)
    if r < 1e-12:
        return 0.0
    gain = beam_gain_kappa(kappa((x, y), beam_pos), cfg.n_tx)
    return cfg.p_tilde * float(gain) / (r * r + cfg.altitude_m ** 2)


# ----------------------------------------------------------------------
# elliptical complementary region
# ----------------------------------------------------------------------

@dataclass
class AcorQuadratic:
    """Quadratic form in the position deviation; negative values = SNR target met."""

    hessian: np.ndarray    # (2, 2)
    gradient: np.ndarray   # (2,)
    constant: float

    def evaluate(self, dev):
        d = np.asarray(dev, float)
        dx, dy = d[..., 0], d[..., 1]
        h, g = self.hessian, self.gradient
        return (0.5 * (h[0, 0] * dx * dx + 2.0 * h[0, 1] * dx * dy + h[1, 1] * dy * dy)
                + g[0] * dx + g[1] * dy + self.constant)


@dataclass
class AcorBounds:
    """Closed-form x-extent and y-section bounds of the elliptical region."""

    beam_x: float
    beam_y: float
    y0: float       # tilt of the ellipse center line
    y1: float       # squared y half-width at x = 0 (ground coordinates)
    y2: float       # always negative; fixes the x extent
    x_lower: float  # deviation coordinates
    x_upper: float
    empty: bool

    def y_upper(self, dev_x):
        gx = np.asarray(dev_x, float) + self.beam_x
        rad = np.maximum(self.y1 + self.y2 * gx * gx, 0.0)
        return -self.beam_y + self.y0 * gx + np.sqrt(rad)

    def y_lower(self, dev_x):
        gx = np.asarray(dev_x, float) + self.beam_x
        rad = np.maximum(self.y1 + self.y2 * gx * gx, 0.0)
        return -self.beam_y + self.y0 * gx - np.sqrt(rad)


def acor_quadratic(beam_pos, gamma: float, cfg: ScenarioConfig) -> AcorQuadratic:
    """Second-order expansion of the outage condition around the beam center."""
    bx, by = float(beam_pos[0]), float(beam_pos[1])
    r2 = bx * bx + by * by
    r6 = r2 ** 3
    m = taylor_m(cfg.n_tx)
    g = gamma / (m * cfg.p_tilde)
    xi20 = by ** 4 / r6 + g
    xi11 = -2.0 * bx * by ** 3 / r6
    xi02 = bx * bx * by * by / r6 + g
    hess = np.array([[2.0 * xi20, xi11], [xi11, 2.0 * xi02]])
    grad = np.array([2.0 * g * bx, 2.0 * g * by])
    const = (r2 + cfg.altitude_m ** 2) * g - cfg.n_tx / m
    return AcorQuadratic(hessian=hess, gradient=grad, constant=const)


def acor_bounds(beam_pos, gamma: float, cfg: ScenarioConfig) -> AcorBounds:
    bx, by = float(beam_pos[0]), float(beam_pos[1])
    r2 = bx * bx + by * by
    pm = cfg.p_tilde * taylor_m(cfg.n_tx)
    denom = r2 ** 3 * gamma + bx * bx * by * by * pm
    y0 = bx * by ** 3 * pm / denom
    y1 = (cfg.p_tilde * cfg.n_tx - cfg.altitude_m ** 2 * gamma) * r2 ** 3 / denom
    y2 = -r2 ** 4 * (r2 ** 2 * gamma * gamma + pm * by * by * gamma) / denom ** 2
    if y1 <= 0.0:
        return AcorBounds(bx, by, y0, y1, y2, math.nan, math.nan, empty=True)
    half = math.sqrt(-y1 / y2)
    return AcorBounds(bx, by, y0, y1, y2, -bx - half, -bx + half, empty=False)


# ----------------------------------------------------------------------
# outage probability
# ----------------------------------------------------------------------

def approx_op(beam_pos, gamma: float, pos: PositionGaussian, cfg: ScenarioConfig,
              nodes: int | None = None) -> float:
    """Elliptical-region outage probability of a Gaussian position.

    The Gaussian mean normally coincides with the beam center; an offset mean
    shifts the deviation distribution accordingly.
    """
    if gamma <= 0.0:
        return 0.0
    bounds = acor_bounds(beam_pos, gamma, cfg)
    if bounds.empty:
        return 1.0

    cov = np.asarray(pos.cov, float)
    var_x = cov[0, 0]
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    dx0 = float(pos.mean[0]) - bounds.beam_x
    dy0 = float(pos.mean[1]) - bounds.beam_y
    if det <= 1e-24:
        quad = acor_quadratic(beam_pos, gamma, cfg)
        return 0.0 if quad.evaluate((dx0, dy0)) < 0.0 else 1.0

    sigma_x = math.sqrt(var_x)
    lo = max(bounds.x_lower, dx0 - 8.0 * sigma_x)
    hi = min(bounds.x_upper, dx0 + 8.0 * sigma_x)
    if lo >= hi:
        return 1.0

    if nodes is None:
        nodes = cfg.optimizer.quad_nodes
    u_fine, w_fine = _gl_nodes(nodes)
    u_coarse, w_coarse = _gl_nodes(max(nodes // 3, 12))
    denom = math.sqrt(2.0 * det / var_x)
    slope = cov[0, 1] / var_x

    def mass(a: float, b: float, u: np.ndarray, wts: np.ndarray) -> float:
        mid, halfspan = 0.5 * (b + a), 0.5 * (b - a)
        t = mid + halfspan * u
        section = 0.5 * (_erf((bounds.y_upper(t) - dy0 - slope * (t - dx0)) / denom)
                         - _erf((bounds.y_lower(t) - dy0 - slope * (t - dx0)) / denom))
        pdf = np.exp(-0.5 * (t - dx0) ** 2 / var_x) / (_SQRT2PI * sigma_x)
        return halfspan * float(np.dot(wts, section * pdf))

    # bisect panels until coarse and fine rules agree to the panel's share of
    # the tolerance; a near-degenerate Gaussian turns the section factor into
    # a knife-edge in t that a single fixed rule cannot resolve
    inside = 0.0
    panels = 0
    stack = [(lo, hi)]
    while stack:
        a, b = stack.pop()
        fine = mass(a, b, u_fine, w_fine)
        panels += 1
        if panels >= _QUAD_MAX_PANELS:
            inside += fine
            continue
        coarse = mass(a, b, u_coarse, w_coarse)
        if abs(fine - coarse) <= _QUAD_TOL * max((b - a) / (hi - lo), 1e-3):
            inside += fine
        else:
            m = 0.5 * (a + b)
            stack.append((a, m))
            stack.append((m, b))
    return min(max(1.0 - inside, 0.0), 1.0)


def mc_op(beam_pos, gamma: float, pos: PositionGaussian, cfg: ScenarioConfig,
          n_trials: int, seed: int, workers: int = 1) -> float:
    """Monte Carlo outage probability with the exact array response.

    Trials are drawn in fixed-size blocks, each from its own counter-based
    stream, so the result depends only on (inputs, n_trials, seed), never on
    the worker count.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    chol = np.linalg.cholesky(np.asarray(pos.cov, float))
    mean = np.asarray(pos.mean, float)
    bx, by = float(beam_pos[0]), float(beam_pos[1])
    cos_beam = bx / math.hypot(bx, by)
    h2 = cfg.altitude_m ** 2
    p_tilde, n_tx = cfg.p_tilde, cfg.n_tx

    def _count(block: int) -> int:
        lo = block * _MC_BLOCK
        m = min(_MC_BLOCK, n_trials - lo)
        key = np.array([seed & _UINT64_MASK, block], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        pts = rng.standard_normal((m, 2)) @ chol.T + mean
        x, y = pts[:, 0], pts[:, 1]
        r2 = x * x + y * y
        r = np.sqrt(r2)
        degenerate = r < 1e-12
        kap = cos_beam - np.divide(x, r, out=np.zeros_like(x), where=~degenerate)
        gain = beam_gain_kappa(kap, n_tx)
        snr = p_tilde * gain / (r2 + h2)
        return int(np.count_nonzero((snr < gamma) | degenerate))

    blocks = range((n_trials + _MC_BLOCK - 1) // _MC_BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            total = sum(pool.map(_count, blocks))
    else:
        total = sum(_count(b) for b in blocks)
    return total / n_trials


# ----------------------------------------------------------------------
# per-slot constraint assembled from both stages
# ----------------------------------------------------------------------

def outage_capacity(targets: SnrTargets, w: float) -> float:
    """Slot capacity: sensing fraction at the predicted-beam SNR target, rest at the refined one."""
    return (w * math.log2(1.0 + targets.gamma_pred)
            + (1.0 - w) * math.log2(1.0 + targets.gamma_est))


def stage_ops(beam_pos, w: float, targets: SnrTargets, prior_mse: np.ndarray,
              cfg: ScenarioConfig, nodes: int | None = None) -> tuple[float, float]:
    """Approximate OP of the prediction stage and of the estimation stage."""
    lam_pred = position_marginal(prior_mse)
    op_pred = approx_op(beam_pos, targets.gamma_pred,
                        PositionGaussian(np.asarray(beam_pos, float), lam_pred),
                        cfg, nodes)
    lam_est = position_marginal(planning_posterior(beam_pos, w, prior_mse, cfg))
    op_est = approx_op(beam_pos, targets.gamma_est,
                       PositionGaussian(np.asarray(beam_pos, float), lam_est),
                       cfg, nodes)
    return op_pred, op_est


def max_op_constraint(beam_pos, w: float, targets: SnrTargets, prior_mse: np.ndarray,
                      cfg: ScenarioConfig, nodes: int | None = None) -> float:
    """Constraint value max(stage OPs) - budget; feasible decisions are negative."""
    op_pred, op_est = stage_ops(beam_pos, w, targets, prior_mse, cfg, nodes)
    return max(op_pred, op_est) - cfg.outage_threshold
