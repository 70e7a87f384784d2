"""The strictly 1-stable limit law Z.

Z has characteristic function ``exp(-(pi/2)|t| - i SKEW t log|t|)``.  With
``SKEW = -1`` it is skewed to the left: this is the limit of the centred
``tau``, ``L`` and ``E + 1``.  The V-walk ``(S_n - n log n)/n`` converges to
the reflection ``-Z`` instead (see :meth:`StableLaw.walk_cdf`).

CDF and density come from Gil-Pelaez inversion on a cached grid over
``[-GRID_HALF_WIDTH, GRID_HALF_WIDTH]``.  Beyond the grid on the heavy side
they come from the non-oscillatory Zolotarev integral; on the light side the
mass is below 1e-300.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import integrate, interpolate

from bscoal.errors import DomainError, QuadratureError

HALF_PI = 0.5 * math.pi

#: Sign of the ``i t log|t|`` term in ``-log E exp(itZ)``.  -1 makes Z
#: skewed to the left.  Calibrated in tests/test_stable.py against both the
#: block-counting chain and the V-walk.
SKEW = -1.0
#: ``(S_n - n log n)/n`` converges to ``WALK_SIGN * Z``.
WALK_SIGN = -1.0
# direction of the heavy (power-law) tail
HEAVY = SKEW

# exp(-(pi/2) t) < 1e-10 beyond this
THETA_MAX = 10.0 * math.log(10.0) / HALF_PI
GRID_HALF_WIDTH = 30.0
GRID_STEP = 0.005
TAIL_GRID_MAX = 1e8
TAIL_NODES = 100
ABS_TOL = 1e-6


def characteristic_exponent(theta):
    """``Psi(t) = -log E exp(itZ) = (pi/2)|t| + i SKEW t log|t|``, with Psi(0) = 0."""
    t = np.asarray(theta, dtype=np.float64)
    a = np.abs(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        tlog = np.where(a > 0, t * np.log(np.where(a > 0, a, 1.0)), 0.0)
    psi = HALF_PI * a + 1j * SKEW * tlog
    return psi if psi.ndim else complex(psi)


def cf(theta):
    """``E exp(i theta Z)``."""
    out = np.exp(-np.asarray(characteristic_exponent(theta)))
    return out if out.ndim else complex(out)


def _gp_cdf_integrand(t, x):
    # Im[exp(-itx) cf(t)] / t = -exp(-pi t/2) sin(t (x + SKEW log t)) / t
    if t == 0.0:
        return 0.0 if np.ndim(x) == 0 else np.zeros_like(x)
    return np.exp(-HALF_PI * t) * np.sin(t * (x + SKEW * math.log(t))) / t


def _gp_pdf_integrand(t, x):
    if t == 0.0:
        return 1.0 if np.ndim(x) == 0 else np.ones_like(x)
    return np.exp(-HALF_PI * t) * np.cos(t * (x + SKEW * math.log(t)))


_BREAKS = [1e-8, 1e-5, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0]


def gil_pelaez_cdf(x: float, tol: float = 1e-10) -> float:
    """``1/2 - (1/pi) int_0^inf Im[exp(-itx) cf(t)]/t dt``, evaluated pointwise."""
    v, err = integrate.quad(_gp_cdf_integrand, 0.0, THETA_MAX, args=(float(x),),
                            points=_BREAKS, limit=4000, epsabs=tol, epsrel=0.0)
    if not err < 100 * tol:
        raise QuadratureError(f"cdf({x}): error estimate {err:.3g} above {100 * tol:.3g}")
    return 0.5 + v / math.pi


def gil_pelaez_pdf(x: float, tol: float = 1e-10) -> float:
    v, err = integrate.quad(_gp_pdf_integrand, 0.0, THETA_MAX, args=(float(x),),
                            points=_BREAKS, limit=4000, epsabs=tol, epsrel=0.0)
    if not err < 100 * tol:
        raise QuadratureError(f"pdf({x}): error estimate {err:.3g} above {100 * tol:.3g}")
    return v / math.pi


def _log_g(s):
    # log g(phi) at phi = pi/2 - s, s in (0, pi)
    a = math.pi - s
    if a <= 0.0:
        return -math.inf
    return math.log(a) - math.log(math.sin(s)) + a * math.cos(s) / math.sin(s)


def _zolotarev_value(log_g, x, which):
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        cg = np.exp(log_g - x)
        v = -np.expm1(-cg) if which == "sf" else cg * np.exp(-cg)
    return np.nan_to_num(v, nan=0.0)


def _zolotarev_center(x, which):
    # t = log(pi/2 - phi); the integrand varies on O(1) scales in t for moderate x
    def f(t):
        s = math.exp(t)
        return s * _zolotarev_value(_log_g(s), x, which)

    v, _ = integrate.quad_vec(f, -45.0, math.log(math.pi), epsabs=1e-15, epsrel=1e-11,
                              limit=4000, points=np.arange(-44.0, 1.0))
    return v / math.pi


def _zolotarev_tail(x, which):
    # y = pi/(pi/2 - phi); log g ~ y - 1 + log y, so the integrand peaks
    # near y = x + 1 - log x with O(1) width
    def v(y):
        return float(_zolotarev_value(_log_g(math.pi / y), x, which))

    peak = x + 1.0 - math.log(x)
    a, b = max(1.0, peak - 60.0), peak + 60.0
    total = 0.0
    if a > 1.0:
        total += integrate.quad(lambda y: v(y) / (y * y), 1.0, a,
                                epsabs=1e-18, epsrel=1e-11, limit=400)[0]
    total += integrate.quad(lambda y: v(y) / (y * y), a, b,
                            epsabs=1e-18, epsrel=1e-11, limit=400)[0]
    # u = 1/y on the far segment
    total += integrate.quad(lambda u: v(1.0 / u) if u > 0 else float(which == "sf"),
                            0.0, 1.0 / b, epsabs=1e-18, epsrel=1e-11, limit=400)[0]
    return total


def _zolotarev(x, which):
    """Heavy tail ``P(HEAVY * Z > x)`` or the density of ``HEAVY * Z`` via
    the non-oscillatory integral ``F(x) = (1/pi) int exp(-exp(-x) g(phi)) dphi``
    over ``(-pi/2, pi/2)``, ``g(phi) = (pi/2 + phi)/cos(phi) exp((pi/2 + phi) tan(phi))``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty_like(x)
    mid = x < 10.0
    if np.any(mid):
        out[mid] = _zolotarev_center(x[mid], which)
    for i in np.flatnonzero(~mid):
        out[i] = _zolotarev_tail(float(x[i]), which)
    return out


def zolotarev_sf(x):
    """Heavy-tail mass ``P(HEAVY * Z > x)`` from the integral representation."""
    return _zolotarev(x, "sf")


def zolotarev_pdf(x):
    """Density of ``Z`` at ``HEAVY * x``."""
    return _zolotarev(x, "pdf")


class StableLaw:
    """Cached numerics for Z.  Immutable once built; safe for shared reads."""

    def __init__(self, half_width: float = GRID_HALF_WIDTH, step: float = GRID_STEP):
        self.half_width = float(half_width)
        self.step = float(step)
        m = int(round(2 * self.half_width / self.step))
        x = np.linspace(-self.half_width, self.half_width, m + 1)
        cdf_int, cdf_err = integrate.quad_vec(
            lambda t: _gp_cdf_integrand(t, x), 0.0, THETA_MAX,
            epsabs=1e-10, epsrel=1e-10, limit=8000, points=_BREAKS)
        pdf_int, pdf_err = integrate.quad_vec(
            lambda t: _gp_pdf_integrand(t, x), 0.0, THETA_MAX,
            epsabs=1e-10, epsrel=1e-10, limit=8000, points=_BREAKS)
        if max(cdf_err, pdf_err) > ABS_TOL:
            raise QuadratureError(
                f"grid inversion error estimates {cdf_err:.3g}, {pdf_err:.3g} exceed {ABS_TOL}")
        F = np.clip(0.5 + cdf_int / math.pi, 0.0, 1.0)
        self.x_grid = x
        self.cdf_grid = np.maximum.accumulate(F)
        self.pdf_grid = np.maximum(pdf_int / math.pi, 0.0)
        for arr in (self.x_grid, self.cdf_grid, self.pdf_grid):
            arr.flags.writeable = False
        # heavy tail on a log grid; x * P(HEAVY Z > x) is smooth and tends to 1
        lt = np.linspace(math.log(self.half_width), math.log(TAIL_GRID_MAX), TAIL_NODES)
        xt = np.exp(lt)
        self._tail_sf = interpolate.CubicSpline(lt, xt * zolotarev_sf(xt))
        self._tail_pdf = interpolate.CubicSpline(lt, xt**2 * zolotarev_pdf(xt))

    def _tail(self, spline, x, power):
        # beyond TAIL_GRID_MAX: x*sf and x^2*pdf are 1 up to O(log x / x)
        lx = np.log(x)
        scaled = np.where(lx <= spline.x[-1], spline(np.minimum(lx, spline.x[-1])), 1.0)
        return scaled / x**power

    def _split(self, x):
        # (heavy mask, light mask, distance into the heavy tail)
        hx = HEAVY * x
        heavy = hx > self.half_width
        light = hx < -self.half_width
        return heavy, light, np.where(heavy, hx, 2 * self.half_width)

    def _lower(self, x):
        # P(Z <= x) if lower else P(Z > x), no cancellation in the heavy tail
        x = np.asarray(x, dtype=np.float64)
        heavy, light, hx = self._split(x)
        F = np.interp(x, self.x_grid, self.cdf_grid)
        T = self._tail(self._tail_sf, hx, 1) if np.any(heavy) else 0.0
        if HEAVY > 0:
            cdf = np.where(light, 0.0, np.where(heavy, 1.0 - T, F))
            sf = np.where(light, 1.0, np.where(heavy, T, 1.0 - F))
        else:
            cdf = np.where(light, 1.0, np.where(heavy, T, F))
            sf = np.where(light, 0.0, np.where(heavy, 1.0 - T, 1.0 - F))
        return np.clip(cdf, 0.0, 1.0), np.clip(sf, 0.0, 1.0)

    def cdf(self, x):
        """``P(Z <= x)``; vectorised."""
        out = self._lower(x)[0]
        return out if out.ndim else float(out)

    def sf(self, x):
        """``P(Z > x)``."""
        out = self._lower(x)[1]
        return out if out.ndim else float(out)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        heavy, light, hx = self._split(x)
        out = np.interp(x, self.x_grid, self.pdf_grid)
        out = np.where(light, 0.0, out)
        if np.any(heavy):
            out = np.where(heavy, self._tail(self._tail_pdf, hx, 2), out)
        return out if out.ndim else float(out)

    def walk_cdf(self, x):
        """CDF of the V-walk limit ``WALK_SIGN * Z``."""
        x = np.asarray(x, dtype=np.float64)
        out = self.cdf(x) if WALK_SIGN > 0 else self.sf(-x)
        return out

    def quantile(self, p, tol: float = 1e-12):
        """Inverse CDF by bisection; vectorised over ``p``."""
        p = np.asarray(p, dtype=np.float64)
        if np.any(~((p > 0) & (p < 1))):
            raise DomainError("quantile needs 0 < p < 1")
        lo = np.full(p.shape, -self.half_width)
        hi = np.full(p.shape, self.half_width)
        # widen the brackets through the heavy tail, where the mass beyond x is ~ 1/|x|
        while True:
            short = self.cdf(hi) < p
            if not np.any(short):
                break
            lo = np.where(short, hi, lo)
            hi = np.where(short, hi * 4.0, hi)
        while True:
            over = self.cdf(lo) >= p
            if not np.any(over):
                break
            hi = np.where(over, lo, hi)
            lo = np.where(over, lo * 4.0, lo)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
                break
        out = 0.5 * (lo + hi)
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size=None):
        return sample_z(rng, size)


def sample_z(rng: np.random.Generator, size=None):
    """Chambers-Mallows-Stuck draw for index 1 and skewness ``SKEW``.

    With ``W`` uniform on ``(-pi/2, pi/2)`` and ``E`` standard exponential,
    ``(pi/2 + bW) tan W - b log(E cos W / (pi/2 + bW))`` has scale ``pi/2``
    and no drift in the parametrisation of :func:`characteristic_exponent`.
    """
    u = rng.random(size)
    # u = 0 would put W on the boundary where pi/2 + W vanishes
    u = np.where(u == 0.0, 0.5, u)
    w = HALF_PI * (2.0 * u - 1.0)
    e = rng.standard_exponential(size)
    a = HALF_PI + SKEW * w
    z = a * np.tan(w) - SKEW * np.log(e * np.cos(w) / a)
    return float(z) if size is None else z


@functools.lru_cache(maxsize=None)
def default_law() -> StableLaw:
    """Process-wide cached law with default grid settings."""
    return StableLaw()
