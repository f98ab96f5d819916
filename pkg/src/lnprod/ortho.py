"""Monic orthogonal polynomials for the lognormal weight, in closed form.

For a lognormal density with log-mean mu and log-variance s2, the
moments are nu_i = exp(i*mu + i^2*s2/2).  Writing q = exp(s2) > 1, the
moment matrix factors as nu_{i+j} = nu_i * nu_j * q^{i*j}: a diagonal
congruence of the Vandermonde-type matrix [q^{i*j}].  That structure
collapses the classical determinant construction of orthogonal
polynomials into products, giving the degree-n monic polynomial

    pi_n(x) = sum_k c_{n,k} x^k,
    c_{n,k} = (-1)^{n+k} * exp((n-k)*mu) * q^{(n-1/2)(n-k)} * [n choose k]_q

with Gaussian binomials [n choose k]_q.  This module exposes both that
closed form and the brute-force determinant route (minors of the moment
matrix evaluated by LU factorization), which serves as an independent
cross-check; plus squared norms, a Vandermonde-identity self-test, and a
lognormal-weighted panel quadrature used to verify orthogonality by
direct integration.

Coefficients alternate in sign and their magnitudes overflow doubles for
moderate degree, so everything is carried as :class:`SignedLogReal`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from mpmath import mp, mpf

from .precision import (
    DEFAULT_BITS,
    NumericalError,
    SignedLogReal,
    gauss_legendre,
    q_binomial_log,
    slr_sum,
)

__all__ = [
    "LognormalParams",
    "OrthoPolynomial",
    "SquaredNorm",
    "lognormal_pdf",
    "lognormal_moment",
    "ortho_coeff",
    "ortho_coeff_literal",
    "moment_hankel",
    "moment_hankel_literal",
    "moment_cofactor",
    "moment_cofactor_literal",
    "ortho_polynomial",
    "ortho_basis",
    "squared_norm",
    "vandermonde_deviation",
    "vandermonde_check",
    "integrate_against_lognormal",
    "gram_matrix",
]

# Literal determinants of the moment matrix lose roughly half the working
# digits to cancellation by this order; beyond it they stop being a
# trustworthy cross-check.
DET_ORDER_CAP = 12


@dataclass(frozen=True)
class LognormalParams:
    """Parameters (log-mean, log-variance) of the reference lognormal.

    ``sigma2`` must be strictly positive: at sigma2 = 0 the density
    degenerates to a point mass, q = exp(sigma2) collapses to 1 and the
    q-binomial construction is undefined.
    """

    mu: float
    sigma2: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma2)):
            raise ValueError(f"parameters must be finite, got mu={self.mu}, sigma2={self.sigma2}")
        if self.sigma2 <= 0:
            raise ValueError(
                f"sigma2 must be strictly positive (got {self.sigma2}); "
                "sigma2 = 0 is a degenerate density with no orthogonal family"
            )

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def q(self) -> float:
        """exp(sigma2); derived, never stored, so it cannot desynchronize."""
        return math.exp(self.sigma2)


def lognormal_pdf(x: float, p: LognormalParams) -> float:
    """Lognormal density at x > 0 in double precision."""
    if x <= 0:
        raise ValueError(f"density is supported on x > 0, got {x}")
    z = (math.log(x) - p.mu) / p.sigma
    return math.exp(-0.5 * z * z) / (x * p.sigma * math.sqrt(2.0 * math.pi))


def _pdf_mp(x, p: LognormalParams):
    """Lognormal density at mpf x, at the ambient precision."""
    s = mp.sqrt(mpf(p.sigma2))
    z = (mp.log(x) - mpf(p.mu)) / s
    return mp.exp(-z * z / 2) / (x * s * mp.sqrt(2 * mp.pi))


def lognormal_moment(i: int, p: LognormalParams, bits: int = DEFAULT_BITS) -> SignedLogReal:
    """i-th raw moment nu_i, with log nu_i = i*mu + i^2*sigma2/2 formed directly."""
    if i < 0:
        raise ValueError(f"moment order must be >= 0, got {i}")
    with mp.workprec(bits):
        log_mag = i * mpf(p.mu) + mpf(i) ** 2 * mpf(p.sigma2) / 2
    return SignedLogReal.from_log(1, log_mag)


# ---------------------------------------------------------------------------
# closed-form coefficients and determinants
# ---------------------------------------------------------------------------


def ortho_coeff(n: int, k: int, p: LognormalParams, bits: int = DEFAULT_BITS) -> SignedLogReal:
    """Coefficient of x^k in the monic degree-n orthogonal polynomial.

    Closed form: (-1)^{n+k} exp((n-k) mu) q^{(n-1/2)(n-k)} [n choose k]_q.
    Sign is exactly (-1)^{n+k}; magnitude is assembled in the log domain.

    Args:
        n: polynomial degree, >= 0.
        k: power of x, 0 <= k <= n.
        p: reference lognormal parameters.
        bits: working precision in bits.

    Returns:
        SignedLogReal coefficient; exactly one() when k == n (monic).
    """
    if n < 0 or not 0 <= k <= n:
        raise ValueError(f"require 0 <= k <= n, got n={n}, k={k}")
    with mp.workprec(bits):
        s2 = mpf(p.sigma2)
        log_mag = (
            (n - k) * mpf(p.mu)
            + (2 * n - 1) * (n - k) * s2 / 2
            + q_binomial_log(n, k, s2, bits)
        )
    return SignedLogReal.from_log(-1 if (n + k) % 2 else 1, log_mag)


def moment_hankel(n: int, p: LognormalParams, bits: int = DEFAULT_BITS) -> SignedLogReal:
    """Determinant of the n x n moment matrix [nu_{i+j}], by closed product.

    Factoring nu_{i+j} = nu_i nu_j q^{ij} reduces the determinant to a
    Vandermonde product:

        det = (prod_{i<n} nu_i)^2 * prod_{0<=i<j<n} (q^j - q^i).

    n = 0 returns 1 (empty determinant).
    """
    if n < 0:
        raise ValueError(f"order must be >= 0, got {n}")
    with mp.workprec(bits):
        s2 = mpf(p.sigma2)
        log_mag = n * (n - 1) * mpf(p.mu) + s2 * n * (n - 1) * (2 * n - 1) / 6
        for i in range(n):
            for j in range(i + 1, n):
                log_mag += i * s2 + mp.log(mp.expm1((j - i) * s2))
    return SignedLogReal.from_log(1, log_mag)


def moment_cofactor(n: int, k: int, p: LognormalParams, bits: int = DEFAULT_BITS) -> SignedLogReal:
    """Minor of the moment array with rows 0..n-1 and column k removed.

    This is the determinant of [nu_{i+j}] over i = 0..n-1, j = 0..n with
    j = k skipped; the same Vandermonde factoring as in
    :func:`moment_hankel` gives

        det = (prod_{i<n} nu_i)^2 * (nu_n / nu_k)
              * prod_{i<j in J} (q^j - q^i),       J = {0..n} \\ {k}.

    The n = 0 minor is the empty determinant, 1.
    """
    if n < 0 or not 0 <= k <= n:
        raise ValueError(f"require 0 <= k <= n, got n={n}, k={k}")
    with mp.workprec(bits):
        s2 = mpf(p.sigma2)
        mu = mpf(p.mu)
        log_mag = n * (n - 1) * mu + s2 * n * (n - 1) * (2 * n - 1) / 6
        log_mag += (n * mu + mpf(n) ** 2 * s2 / 2) - (k * mu + mpf(k) ** 2 * s2 / 2)
        cols = [j for j in range(n + 1) if j != k]
        for a in range(len(cols)):
            for b in range(a + 1, len(cols)):
                i, j = cols[a], cols[b]
                log_mag += i * s2 + mp.log(mp.expm1((j - i) * s2))
    return SignedLogReal.from_log(1, log_mag)


def _moment_matrix(rows: Sequence[int], cols: Sequence[int], p: LognormalParams):
    """Nested list of raw moments nu_{i+j} for given row/column indices."""
    mu = mpf(p.mu)
    s2 = mpf(p.sigma2)
    return [
        [mp.exp((i + j) * mu + mpf(i + j) ** 2 * s2 / 2) for j in cols]
        for i in rows
    ]


def _det_mp(a) -> mpf:
    """Determinant by Gaussian elimination with partial pivoting, in mpf.

    mpmath's built-in det declares matrices singular when a pivot falls
    below an absolute tolerance tied to the matrix norm; the moment
    matrices here have entries spanning hundreds of orders of magnitude,
    so that test misfires.  This version pivots on magnitude and divides
    unconditionally (a genuinely zero pivot column cannot occur for
    positive-definite moment matrices).
    """
    a = [row[:] for row in a]
    n = len(a)
    sign = 1
    det = mpf(1)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[piv][col] == 0:
            return mpf(0)
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
            sign = -sign
        pivot = a[col][col]
        det *= pivot
        for r in range(col + 1, n):
            factor = a[r][col] / pivot
            if factor == 0:
                continue
            for c in range(col + 1, n):
                a[r][c] -= factor * a[col][c]
    return sign * det


def _certified_det(rows, cols, p: LognormalParams, bits: int) -> SignedLogReal:
    """Literal moment-matrix determinant, accurate to ~2^-bits relative.

    Gaussian elimination on these graded matrices can shed most of its
    working digits to cancellation (the entries span hundreds of orders
    of magnitude), and the loss depends strongly on sigma2 and the order.
    Rather than guess a guard, the determinant is recomputed at doubling
    internal precision until two successive evaluations agree to
    2^-(bits+8) relative, which certifies the returned value without
    consulting any closed form.
    """
    prec = bits + 64
    with mp.workprec(prec):
        prev = _det_mp(_moment_matrix(rows, cols, p))
    for _ in range(6):
        prec *= 2
        with mp.workprec(prec):
            cur = _det_mp(_moment_matrix(rows, cols, p))
            if prev != 0 and abs(cur - prev) <= abs(cur) * mpf(2) ** (-(bits + 8)):
                return SignedLogReal.from_mpf(cur)
            prev = cur
    raise NumericalError(
        f"literal determinant failed to stabilize for rows={list(rows)}, cols={list(cols)}"
    )


def moment_hankel_literal(n: int, p: LognormalParams, bits: int = DEFAULT_BITS) -> SignedLogReal:
    """Moment-matrix determinant evaluated literally by Gaussian elimination.

    Kept as an independent cross-check of :func:`moment_hankel`; capped at
    order DET_ORDER_CAP because the Hankel matrix of lognormal moments is
    catastrophically ill-conditioned at larger orders.  ``bits`` sets the
    certified accuracy of the result, not the internal effort (see
    :func:`_certified_det`).
    """
    if n < 0:
        raise ValueError(f"order must be >= 0, got {n}")
    if n > DET_ORDER_CAP:
        raise ValueError(f"literal determinant route capped at order {DET_ORDER_CAP}, got {n}")
    if n == 0:
        return SignedLogReal.one()
    return _certified_det(range(n), range(n), p, bits)


def moment_cofactor_literal(
    n: int, k: int, p: LognormalParams, bits: int = DEFAULT_BITS
) -> SignedLogReal:
    """Column-deleted moment minor evaluated literally by Gaussian elimination."""
    if n < 0 or not 0 <= k <= n:
        raise ValueError(f"require 0 <= k <= n, got n={n}, k={k}")
    if n > DET_ORDER_CAP:
        raise ValueError(f"literal determinant route capped at order {DET_ORDER_CAP}, got {n}")
    if n == 0:
        return SignedLogReal.one()
    cols = [j for j in range(n + 1) if j != k]
    return _certified_det(range(n), cols, p, bits)


def ortho_coeff_literal(
    n: int, k: int, p: LognormalParams, bits: int = DEFAULT_BITS
) -> SignedLogReal:
    """Coefficient c_{n,k} via literal determinants: (-1)^{n+k} minor / det.

    The independent route that :func:`ortho_coeff` is checked against;
    capped at degree DET_ORDER_CAP like the determinants it divides.
    """
    num = moment_cofactor_literal(n, k, p, bits)
    den = moment_hankel_literal(n, p, bits)
    sign = SignedLogReal.from_log(-1 if (n + k) % 2 else 1, mpf(0))
    return sign * num / den


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrthoPolynomial:
    """Monic orthogonal polynomial: degree and coefficients (low power first)."""

    degree: int
    coeffs: tuple
    params: LognormalParams

    def __post_init__(self) -> None:
        if len(self.coeffs) != self.degree + 1:
            raise ValueError(
                f"degree {self.degree} needs {self.degree + 1} coefficients, "
                f"got {len(self.coeffs)}"
            )
        if self.coeffs[-1] != SignedLogReal.one():
            raise ValueError("polynomial must be monic (leading coefficient 1)")

    def eval(self, x, bits: int = DEFAULT_BITS) -> SignedLogReal:
        """Evaluate at x > 0 by Horner's scheme in extended precision.

        All cancellation between the alternating terms happens in linear
        mpf arithmetic at ``bits`` precision plus guard, so the result is
        accurate in absolute terms at the scale of the largest partial
        product.
        """
        with mp.workprec(bits + 32):
            xm = mpf(x)
            if not xm > 0:
                raise ValueError(f"polynomials are used on x > 0, got {x}")
            acc = self.coeffs[self.degree].to_mpf()
            for k in range(self.degree - 1, -1, -1):
                acc = acc * xm + self.coeffs[k].to_mpf()
            return SignedLogReal.from_mpf(acc)


def ortho_polynomial(n: int, p: LognormalParams, bits: int = DEFAULT_BITS) -> OrthoPolynomial:
    """The degree-n monic orthogonal polynomial, from the closed form."""
    coeffs = tuple(ortho_coeff(n, k, p, bits) for k in range(n + 1))
    return OrthoPolynomial(degree=n, coeffs=coeffs, params=p)


def ortho_basis(p: LognormalParams, n_max: int, bits: int = DEFAULT_BITS):
    """Polynomials of degree 0..n_max as a list."""
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")
    return [ortho_polynomial(n, p, bits) for n in range(n_max + 1)]


@dataclass(frozen=True)
class SquaredNorm:
    """Squared norm h_j = integral of pi_j^2 against the lognormal weight."""

    degree: int
    value: SignedLogReal


def squared_norm(j: int, p: LognormalParams, bits: int = DEFAULT_BITS) -> SquaredNorm:
    """h_j via the double moment sum sum_{i,k} c_{j,i} c_{j,k} nu_{i+k}.

    The sum is accumulated through :func:`slr_sum` (single linear-domain
    pass), and positivity is asserted: a non-positive result means the
    cancellation exceeded the working precision.

    Raises:
        NumericalError: if the computed norm is not strictly positive.
    """
    poly = ortho_polynomial(j, p, bits)
    with mp.workprec(bits):
        terms = []
        for i in range(j + 1):
            for k in range(j + 1):
                terms.append(poly.coeffs[i] * poly.coeffs[k] * lognormal_moment(i + k, p, bits))
        total = slr_sum(terms)
    if total.sign <= 0:
        raise NumericalError(
            f"squared norm h_{j} came out non-positive at {bits} bits; "
            "increase working_bits"
        )
    return SquaredNorm(degree=j, value=total)


# ---------------------------------------------------------------------------
# Vandermonde self-test
# ---------------------------------------------------------------------------


def vandermonde_deviation(n: int, sigma2: float, bits: int = DEFAULT_BITS) -> mpf:
    """Relative gap between det[q^{ij}] and prod_{i<j} (q^j - q^i).

    The identity underlying every closed form here; evaluating it
    literally doubles as a health check of the determinant machinery.
    """
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    if n > 10:
        raise ValueError(f"identity check capped at order 10, got {n}")
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    with mp.workprec(bits):
        s2 = mpf(sigma2)
        a = [[mp.exp(mpf(i) * j * s2) for j in range(n)] for i in range(n)]
        det = _det_mp(a)
        log_prod = mpf(0)
        for i in range(n):
            for j in range(i + 1, n):
                log_prod += i * s2 + mp.log(mp.expm1((j - i) * s2))
        prod = mp.exp(log_prod)
        return abs(det - prod) / prod


def vandermonde_check(n: int, sigma2: float, bits: int = DEFAULT_BITS, tol=None) -> bool:
    """True when the Vandermonde identity holds within tol (default 2^-bits/2)."""
    if tol is None:
        tol = mpf(2) ** (-(bits // 2))
    return vandermonde_deviation(n, sigma2, bits) < tol


# ---------------------------------------------------------------------------
# lognormal-weighted quadrature (independent verification route)
# ---------------------------------------------------------------------------


def integrate_against_lognormal(
    g: Callable,
    p: LognormalParams,
    max_degree: int,
    bits: int = DEFAULT_BITS,
    points: int = 24,
    margin: float = 14.0,
) -> mpf:
    """Integral of g(x) * lognormal_pdf(x) over (0, inf) by panel quadrature.

    Substituting x = exp(mu + sigma*u) turns the weight into a standard
    normal in u.  A polynomial factor x^d shifts that Gaussian's center to
    u = d*sigma, so the panels cover [-margin, max_degree*sigma + margin]:
    ``max_degree`` must bound the polynomial growth of g.  Unit-width
    panels with 24-point Gauss-Legendre resolve exp(c*u) factors up to
    c ~ 25 to ~1e-37 relative, far below the tolerances this oracle backs.

    Args:
        g: integrand factor, callable mpf -> mpf (positive argument).
        p: lognormal parameters.
        max_degree: bound on the power-law growth of g.
        bits: working precision.
        points: Gauss-Legendre points per unit panel.
        margin: Gaussian tail allowance in u units.

    Returns:
        mpf value of the integral.
    """
    if max_degree < 0:
        raise ValueError(f"max_degree must be >= 0, got {max_degree}")
    with mp.workprec(bits):
        sigma = mp.sqrt(mpf(p.sigma2))
        mu = mpf(p.mu)
        lo = -mpf(margin)
        hi = max_degree * sigma + mpf(margin)
        n_panels = int(mp.ceil(hi - lo))
        nodes, weights = gauss_legendre(points, bits)
        inv_sqrt2pi = 1 / mp.sqrt(2 * mp.pi)
        total = mpf(0)
        width = (hi - lo) / n_panels
        for i in range(n_panels):
            a = lo + i * width
            half = width / 2
            mid = a + half
            for t, w in zip(nodes, weights):
                u = mid + half * t
                x = mp.exp(mu + sigma * u)
                total += w * half * inv_sqrt2pi * mp.exp(-u * u / 2) * g(x)
        return total


def gram_matrix(p: LognormalParams, n_max: int, bits: int = DEFAULT_BITS):
    """Quadrature Gram matrix of the basis under the lognormal weight.

    Entry (j, k) approximates the inner product of pi_j and pi_k by the
    same panel rule as :func:`integrate_against_lognormal`, sharing one
    set of nodes across all pairs.  Off-diagonal entries vanishing (at
    quadrature accuracy) is the orthogonality statement; the diagonal
    reproduces the squared norms.

    Returns:
        (n_max+1) x (n_max+1) nested list of mpf.
    """
    basis = ortho_basis(p, n_max, bits)
    with mp.workprec(bits):
        sigma = mp.sqrt(mpf(p.sigma2))
        mu = mpf(p.mu)
        lo = -mpf(14)
        hi = 2 * n_max * sigma + mpf(14)
        n_panels = int(mp.ceil(hi - lo))
        nodes, weights = gauss_legendre(24, bits)
        inv_sqrt2pi = 1 / mp.sqrt(2 * mp.pi)
        width = (hi - lo) / n_panels
        # rows: per node, value of every basis polynomial and the u-weight
        size = (n_max + 1)
        gram = [[mpf(0)] * size for _ in range(size)]
        coeff_mpf = [[c.to_mpf() for c in poly.coeffs] for poly in basis]
        for i in range(n_panels):
            a = lo + i * width
            half = width / 2
            mid = a + half
            for t, w in zip(nodes, weights):
                u = mid + half * t
                x = mp.exp(mu + sigma * u)
                wt = w * half * inv_sqrt2pi * mp.exp(-u * u / 2)
                vals = []
                for cs in coeff_mpf:
                    acc = cs[-1]
                    for c in reversed(cs[:-1]):
                        acc = acc * x + c
                    vals.append(acc)
                for j in range(size):
                    vj = vals[j] * wt
                    for k in range(j, size):
                        gram[j][k] += vj * vals[k]
        for j in range(size):
            for k in range(j):
                gram[j][k] = gram[k][j]
        return gram
