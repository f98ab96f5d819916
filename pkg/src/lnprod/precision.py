"""Extended-precision building blocks shared by the rest of the package.

Everything downstream (orthogonal-polynomial coefficients, moment fits,
quadratures) works with quantities whose magnitudes span hundreds of
orders of magnitude, e.g. lognormal moments nu_i = exp(i*mu + i^2*s2/2)
with i up to 32 and s2 up to ~8.  Double precision overflows long before
accuracy becomes the problem, so the package computes in two dovetailed
representations:

* arbitrary-precision floats (mpmath ``mpf``), whose exponent range is
  unbounded, for sums and quadratures;
* :class:`SignedLogReal`, a sign plus natural-log magnitude, for products
  and powers where only the log is ever formed analytically.

The working precision is a parameter (bits of mantissa), defaulting to
256.  All public functions restore the global mpmath context on exit.

Special functions implemented here: log-gamma and polygamma (delegated
to mpmath), the confluent hypergeometric function 1F1(-k/2, b, z) for
nonnegative integer k, its derivative with respect to the first
parameter at 0, generalized Gauss-Laguerre quadrature rules, and Gaussian
binomial (q-binomial) coefficients evaluated in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from mpmath import mp, mpf

__all__ = [
    "DEFAULT_BITS",
    "NumericalError",
    "PrecisionConfig",
    "SignedLogReal",
    "slr_sum",
    "log_gamma",
    "polygamma",
    "hyp1f1_neg_half",
    "hyp1f1_da0",
    "gauss_laguerre",
    "gauss_legendre",
    "q_binomial",
    "q_binomial_log",
]

DEFAULT_BITS = 256

# Extra mantissa bits carried internally so results are fully accurate
# at the caller's requested precision.
_GUARD = 32


class NumericalError(ArithmeticError):
    """Raised when a computation cannot certify its own accuracy.

    Typical causes: a series failing to converge within its iteration
    budget, catastrophic cancellation detected in a quantity that must be
    positive, or a quadrature that does not stabilize under refinement.
    The fix is usually a higher ``working_bits`` or more quadrature nodes.
    """


@dataclass(frozen=True)
class PrecisionConfig:
    """Numerical effort knobs threaded through the pipeline.

    Attributes:
        working_bits: mantissa bits for extended-precision arithmetic.
            Must be at least 64; the default 256 leaves a wide margin for
            every parameter regime exercised by the test suite.
        quadrature_nodes: starting node count for Gauss-Laguerre rules.
            Integrals double the count until stable, so this is a floor,
            not a guarantee of effort.
    """

    working_bits: int = DEFAULT_BITS
    quadrature_nodes: int = 64

    def __post_init__(self) -> None:
        if self.working_bits < 64:
            raise ValueError(f"working_bits must be >= 64, got {self.working_bits}")
        if self.quadrature_nodes < 1:
            raise ValueError(f"quadrature_nodes must be >= 1, got {self.quadrature_nodes}")


def _carried_bits(*vals) -> int:
    """Highest mantissa bit count carried by the given mpf values."""
    bits = 53
    for v in vals:
        bits = max(bits, v._mpf_[3])
    return bits


@dataclass(frozen=True)
class SignedLogReal:
    """A real number stored as (sign, log of absolute value).

    ``sign`` is -1, 0 or +1; ``log_mag`` is an mpf holding log|x| (and 0
    by convention when sign == 0).  The representation never overflows
    and keeps relative accuracy for quantities like exp(1200) whose logs
    are cheap to form exactly.  Products, quotients and integer powers
    are exact log-domain arithmetic; addition goes through the linear
    domain, which mpf's unbounded exponent makes safe.

    Arithmetic does not trust the ambient mpmath precision: each
    operation runs at the precision its operands actually carry (plus
    guard bits, and never below the ambient setting), so values built at
    256 bits stay accurate even when combined outside a ``workprec``
    block.  Only :meth:`to_mpf` and :meth:`from_mpf` round at the ambient
    precision, since they exist to enter and leave the linear domain.

    Use :func:`slr_sum` rather than repeated ``+`` for sums of many
    terms; it shifts to the linear domain once and accumulates with
    ``mp.fsum``.
    """

    sign: int
    log_mag: mpf

    def __post_init__(self) -> None:
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign}")

    # -- constructors ---------------------------------------------------

    @classmethod
    def zero(cls) -> "SignedLogReal":
        return cls(0, mpf(0))

    @classmethod
    def one(cls) -> "SignedLogReal":
        return cls(1, mpf(0))

    @classmethod
    def from_log(cls, sign: int, log_mag) -> "SignedLogReal":
        if sign == 0:
            return cls.zero()
        # keep an mpf untouched: mpf(mpf) would re-round it to the
        # ambient precision, silently discarding bits
        if not isinstance(log_mag, mpf):
            log_mag = mpf(log_mag)
        return cls(sign, log_mag)

    @classmethod
    def from_mpf(cls, x) -> "SignedLogReal":
        if not isinstance(x, mpf):
            x = mpf(x)
        if x == 0:
            return cls.zero()
        return cls(1 if x > 0 else -1, mp.log(abs(x)))

    @classmethod
    def from_float(cls, x: float) -> "SignedLogReal":
        if math.isnan(x) or math.isinf(x):
            raise ValueError(f"cannot encode non-finite value {x!r}")
        return cls.from_mpf(x)

    # -- conversions ----------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    def to_mpf(self) -> mpf:
        if self.sign == 0:
            return mpf(0)
        return self.sign * mp.exp(self.log_mag)

    def __float__(self) -> float:
        if self.sign == 0:
            return 0.0
        try:
            return float(self.to_mpf())
        except OverflowError:
            return math.inf * self.sign

    # -- arithmetic -----------------------------------------------------

    def __neg__(self) -> "SignedLogReal":
        return SignedLogReal(-self.sign, self.log_mag)

    def __abs__(self) -> "SignedLogReal":
        return SignedLogReal(abs(self.sign), self.log_mag)

    def __mul__(self, other: "SignedLogReal") -> "SignedLogReal":
        s = self.sign * other.sign
        if s == 0:
            return SignedLogReal.zero()
        with mp.workprec(max(mp.prec, _carried_bits(self.log_mag, other.log_mag)) + 16):
            return SignedLogReal(s, self.log_mag + other.log_mag)

    def __truediv__(self, other: "SignedLogReal") -> "SignedLogReal":
        if other.sign == 0:
            raise ZeroDivisionError("SignedLogReal division by zero")
        if self.sign == 0:
            return SignedLogReal.zero()
        with mp.workprec(max(mp.prec, _carried_bits(self.log_mag, other.log_mag)) + 16):
            return SignedLogReal(self.sign * other.sign, self.log_mag - other.log_mag)

    def __pow__(self, k: int) -> "SignedLogReal":
        if not isinstance(k, int):
            raise TypeError("only integer powers are supported")
        if self.sign == 0:
            if k <= 0:
                raise ZeroDivisionError("0 ** nonpositive power")
            return SignedLogReal.zero()
        sign = 1 if (self.sign > 0 or k % 2 == 0) else -1
        with mp.workprec(max(mp.prec, _carried_bits(self.log_mag)) + 16):
            return SignedLogReal(sign, self.log_mag * k)

    def __add__(self, other: "SignedLogReal") -> "SignedLogReal":
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        # order so that a holds the larger magnitude
        a, b = self, other
        if b.log_mag > a.log_mag:
            a, b = b, a
        with mp.workprec(max(mp.prec, _carried_bits(a.log_mag, b.log_mag)) + 16):
            d = b.log_mag - a.log_mag  # <= 0
            r = mp.exp(d)
            if a.sign == b.sign:
                return SignedLogReal(a.sign, a.log_mag + mp.log1p(r))
            if r == 1:
                return SignedLogReal.zero()
            return SignedLogReal(a.sign, a.log_mag + mp.log1p(-r))

    def __sub__(self, other: "SignedLogReal") -> "SignedLogReal":
        return self + (-other)


def slr_sum(terms: Iterable[SignedLogReal]) -> SignedLogReal:
    """Sum SignedLogReal terms via a single shift to the linear domain.

    The largest log-magnitude is factored out, the remaining ratios are
    exponentiated (all <= 1 in magnitude, so no overflow) and accumulated
    with ``mp.fsum``.  Runs at the precision the operands carry, or the
    ambient precision if that is higher.
    """
    terms = [t for t in terms if t.sign != 0]
    if not terms:
        return SignedLogReal.zero()
    with mp.workprec(max(mp.prec, _carried_bits(*(t.log_mag for t in terms))) + 16):
        peak = max(t.log_mag for t in terms)
        total = mp.fsum(t.sign * mp.exp(t.log_mag - peak) for t in terms)
        if total == 0:
            return SignedLogReal.zero()
        return SignedLogReal(1 if total > 0 else -1, peak + mp.log(abs(total)))


# ---------------------------------------------------------------------------
# gamma-family special functions
# ---------------------------------------------------------------------------


def log_gamma(x, bits: int = DEFAULT_BITS) -> mpf:
    """log Gamma(x) for x > 0 at the requested precision."""
    with mp.workprec(bits + _GUARD):
        x = mpf(x)
        if not x > 0:
            raise ValueError(f"log_gamma requires x > 0, got {x}")
        return mp.loggamma(x)


def polygamma(order: int, x, bits: int = DEFAULT_BITS) -> mpf:
    """Polygamma function psi_order(x) for x > 0, order in {0, 1}.

    Order 0 is the digamma function, order 1 the trigamma function; these
    are the only orders the moment fits need.
    """
    if order not in (0, 1):
        raise ValueError(f"polygamma order must be 0 or 1, got {order}")
    with mp.workprec(bits + _GUARD):
        x = mpf(x)
        if not x > 0:
            raise ValueError(f"polygamma requires x > 0, got {x}")
        return mp.psi(order, x)


# ---------------------------------------------------------------------------
# confluent hypergeometric machinery
# ---------------------------------------------------------------------------
#
# The moment integrands need 1F1(a, b, z) only for a = -k/2 (k a
# nonnegative integer) with b > 0, plus d/da 1F1(a, b, z) at a = 0.  For
# z <= 0 the direct power series alternates and cancels like exp(|z|),
# so both functions are evaluated through Kummer's transformation
#
#     1F1(a, b, z) = exp(z) * 1F1(b - a, b, -z),
#
# whose series has nonnegative terms in every case needed here.  No
# precision escalation with |z| is required; the iteration count grows
# roughly like |z| + O(sqrt(|z|)).


def _kummer_series(c, b, y, bits: int) -> mpf:
    """sum_{n>=0} (c)_n / (b)_n * y^n / n! for y >= 0 with positive terms."""
    tol = mpf(2) ** (-(bits + 8))
    term = mpf(1)
    total = mpf(1)
    n = 0
    cap = int(4 * y + 40 * math.sqrt(float(y) + 1) + 10 * bits + 100)
    while True:
        term = term * (c + n) / (b + n) * y / (n + 1)
        total += term
        n += 1
        if term < tol * total and n > y:
            return total
        if n > cap:
            raise NumericalError(
                f"1F1 series failed to converge within {cap} terms (b={b}, y={y})"
            )


def hyp1f1_neg_half(k: int, b, z, bits: int = DEFAULT_BITS) -> mpf:
    """Confluent hypergeometric 1F1(-k/2, b, z) for integer k >= 0, b > 0.

    Even k gives a terminating polynomial of degree k/2 (summed directly;
    for z <= 0 its terms are all nonnegative).  Odd k is evaluated through
    Kummer's transformation so the infinite series never alternates.

    Args:
        k: twice the negated first parameter; must be a nonnegative integer.
        b: second parameter, positive.
        z: argument, any finite real (the product-moment integrands use
            z <= 0).
        bits: working precision in bits.

    Returns:
        mpf value of the function at the working precision.
    """
    if k < 0 or not isinstance(k, int):
        raise ValueError(f"k must be a nonnegative integer, got {k!r}")
    with mp.workprec(bits + _GUARD + k):
        b = mpf(b)
        if not b > 0:
            raise ValueError(f"second parameter must be positive, got {b}")
        z = mpf(z)
        if k == 0 or z == 0:
            return mpf(1)
        a = -mpf(k) / 2
        if k % 2 == 0:
            # terminating sum, k/2 + 1 terms
            term = mpf(1)
            total = mpf(1)
            for n in range(k // 2):
                term = term * (a + n) / (b + n) * z / (n + 1)
                total += term
            return total
        if z < 0:
            return mp.exp(z) * _kummer_series(b - a, b, -z, bits + k)
        # z > 0: direct series; signs settle after ~k/2 terms, guard bits
        # added above absorb the initial cancellation.
        tol = mpf(2) ** (-(bits + 8))
        term = mpf(1)
        total = mpf(1)
        n = 0
        cap = int(4 * z + 40 * math.sqrt(float(z) + 1) + 10 * bits + 100)
        while True:
            term = term * (a + n) / (b + n) * z / (n + 1)
            total += term
            n += 1
            if abs(term) < tol * abs(total) and n > z and n > k:
                return total
            if n > cap:
                raise NumericalError(
                    f"1F1 series failed to converge within {cap} terms (k={k}, b={b}, z={z})"
                )


def hyp1f1_da0(b, z, bits: int = DEFAULT_BITS) -> mpf:
    """Derivative of 1F1(a, b, z) with respect to a, evaluated at a = 0.

    Direct form: sum_{n>=1} z^n / (n (b)_n), which alternates for z < 0.
    Differentiating Kummer's transformation instead gives

        d/da 1F1(a, b, z)|_{a=0} = -exp(z) * sum_{n>=1} y^n/n! * H_n(b)

    with y = -z and H_n(b) = sum_{j=0}^{n-1} 1/(b+j).  Every term of that
    series is nonnegative, so for z < 0 it is evaluated without any
    cancellation.  For z > 0 the direct series already has positive terms.

    Args:
        b: second parameter, positive.
        z: argument, any finite real.
        bits: working precision in bits.

    Returns:
        mpf value; negative for z < 0, positive for z > 0, zero at z = 0.
    """
    with mp.workprec(bits + _GUARD):
        b = mpf(b)
        if not b > 0:
            raise ValueError(f"second parameter must be positive, got {b}")
        z = mpf(z)
        if z == 0:
            return mpf(0)
        tol = mpf(2) ** (-(bits + 8))
        if z > 0:
            pock = mpf(1)  # z^n / (b)_n
            total = mpf(0)
            n = 0
            cap = int(4 * z + 40 * math.sqrt(float(z) + 1) + 10 * bits + 100)
            while True:
                pock = pock * z / (b + n)
                n += 1
                term = pock / n
                total += term
                if term < tol * total and n > z:
                    return total
                if n > cap:
                    raise NumericalError(
                        f"1F1 parameter-derivative series stalled (b={b}, z={z})"
                    )
        y = -z
        u = mpf(1)  # y^n / n!
        harm = mpf(0)  # H_n(b)
        total = mpf(0)
        n = 0
        cap = int(4 * y + 40 * math.sqrt(float(y) + 1) + 10 * bits + 100)
        while True:
            u = u * y / (n + 1)
            harm += 1 / (b + n)
            n += 1
            term = u * harm
            total += term
            if term < tol * total and n > y:
                return -mp.exp(z) * total
            if n > cap:
                raise NumericalError(
                    f"1F1 parameter-derivative series stalled (b={b}, z={z})"
                )


# ---------------------------------------------------------------------------
# quadrature rules
# ---------------------------------------------------------------------------

_rule_cache: dict = {}


def _laguerre_eval(n: int, alpha, x):
    """(L_n^(alpha)(x), L_{n-1}^(alpha)(x)) by upward recurrence."""
    prev = mpf(1)
    if n == 0:
        return prev, mpf(0)
    cur = 1 + alpha - x
    for j in range(1, n):
        prev, cur = cur, ((2 * j + 1 + alpha - x) * cur - (j + alpha) * prev) / (j + 1)
    return cur, prev


def gauss_laguerre(alpha, n: int, bits: int = DEFAULT_BITS):
    """Generalized Gauss-Laguerre rule for weight t^alpha * exp(-t) on (0, inf).

    Nodes are the zeros of the generalized Laguerre polynomial L_n^(alpha),
    seeded from scipy's double-precision roots and polished with Newton
    iterations under the extended-precision recurrence.  Weights use

        w_i = Gamma(n + alpha + 1) / (n! * x_i * L_n'(x_i)^2).

    Rules are cached per (alpha, n, bits); the cache is only ever appended
    to, so concurrent readers are safe.

    Args:
        alpha: weight exponent, must satisfy alpha > -1.
        n: number of nodes, >= 1.
        bits: working precision in bits.

    Returns:
        Tuple (nodes, weights) of equal-length tuples of mpf, nodes ascending.
    """
    if n < 1:
        raise ValueError(f"node count must be >= 1, got {n}")
    alpha_mp = mpf(alpha)
    if not alpha_mp > -1:
        raise ValueError(f"alpha must exceed -1, got {alpha}")
    key = ("laguerre", alpha_mp._mpf_, n, bits)
    hit = _rule_cache.get(key)
    if hit is not None:
        return hit
    from scipy.special import roots_genlaguerre

    seeds, _ = roots_genlaguerre(n, float(alpha_mp))
    with mp.workprec(bits + _GUARD):
        log_norm = mp.loggamma(n + alpha_mp + 1) - mp.loggamma(mpf(n + 1))
        nodes = []
        weights = []
        for seed in seeds:
            x = mpf(float(seed))
            for _ in range(60):
                val, prev = _laguerre_eval(n, alpha_mp, x)
                deriv = (n * val - (n + alpha_mp) * prev) / x
                step = val / deriv
                x -= step
                if abs(step) <= abs(x) * mpf(2) ** (-(bits + 8)):
                    break
            else:
                raise NumericalError(f"Laguerre node refinement stalled near {seed}")
            _, prev = _laguerre_eval(n, alpha_mp, x)
            val, _ = _laguerre_eval(n, alpha_mp, x)
            deriv = (n * val - (n + alpha_mp) * prev) / x
            weights.append(mp.exp(log_norm - mp.log(x) - 2 * mp.log(abs(deriv))))
            nodes.append(x)
    rule = (tuple(nodes), tuple(weights))
    _rule_cache[key] = rule
    return rule


def _legendre_eval(n: int, x):
    """(P_n(x), P_{n-1}(x)) by upward recurrence."""
    prev = mpf(1)
    if n == 0:
        return prev, mpf(0)
    cur = x
    for j in range(1, n):
        prev, cur = cur, ((2 * j + 1) * x * cur - j * prev) / (j + 1)
    return cur, prev


def gauss_legendre(n: int, bits: int = DEFAULT_BITS):
    """Gauss-Legendre rule on [-1, 1], refined like :func:`gauss_laguerre`.

    Used by the lognormal-weighted panel quadratures that serve as
    independent cross-checks of closed-form moments and inner products.
    """
    if n < 1:
        raise ValueError(f"node count must be >= 1, got {n}")
    key = ("legendre", n, bits)
    hit = _rule_cache.get(key)
    if hit is not None:
        return hit
    import numpy

    seeds, _ = numpy.polynomial.legendre.leggauss(n)
    with mp.workprec(bits + _GUARD):
        nodes = []
        weights = []
        for seed in seeds:
            x = mpf(float(seed))
            for _ in range(60):
                val, prev = _legendre_eval(n, x)
                deriv = n * (x * val - prev) / (x * x - 1)
                step = val / deriv
                x -= step
                if abs(step) <= mpf(2) ** (-(bits + 8)):
                    break
            else:
                raise NumericalError(f"Legendre node refinement stalled near {seed}")
            val, prev = _legendre_eval(n, x)
            deriv = n * (x * val - prev) / (x * x - 1)
            weights.append(2 / ((1 - x * x) * deriv * deriv))
            nodes.append(x)
    rule = (tuple(nodes), tuple(weights))
    _rule_cache[key] = rule
    return rule


# ---------------------------------------------------------------------------
# q-binomial coefficients
# ---------------------------------------------------------------------------


def q_binomial_log(n: int, k: int, log_q, bits: int = DEFAULT_BITS) -> mpf:
    """log of the Gaussian binomial [n choose k]_q given log q > 0.

    Uses the product form prod_{j=1..k} (q^{n-k+j} - 1) / (q^j - 1); every
    factor is formed as expm1(j * log q), so both the q -> 1+ limit and
    huge exponents stay accurate.  Taking log q rather than q lets callers
    with q = exp(s2) pass s2 exactly.
    """
    if not 0 <= k <= n:
        raise ValueError(f"require 0 <= k <= n, got n={n}, k={k}")
    with mp.workprec(bits + _GUARD):
        s = mpf(log_q)
        if not s > 0:
            raise ValueError(f"log q must be positive, got {s}")
        total = mpf(0)
        for j in range(1, k + 1):
            total += mp.log(mp.expm1((n - k + j) * s)) - mp.log(mp.expm1(j * s))
        return total


def q_binomial(n: int, k: int, q, bits: int = DEFAULT_BITS) -> mpf:
    """Gaussian binomial coefficient [n choose k]_q for q > 1, as mpf."""
    with mp.workprec(bits + _GUARD):
        q = mpf(q)
        if not q > 1:
            raise ValueError(f"q must exceed 1, got {q}")
        return mp.exp(q_binomial_log(n, k, mp.log(q), bits))
