"""Polynomials in the delay operator z^-1.

Coefficients are stored in ascending powers of z^-1: ``coeffs[i]`` multiplies
``z^-i``.  Trailing zeros are kept unless :func:`normalize` is called, since
several quantities (e.g. the predictor numerator) must keep a fixed length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Polynomial",
    "poly_mul",
    "normalize",
    "long_division",
    "zeros_in_z",
]


@dataclass(frozen=True, eq=False)
class Polynomial:
    """Real polynomial ``c_0 + c_1 z^-1 + ... + c_k z^-k``."""

    coeffs: tuple[float, ...]

    def __init__(self, coeffs):
        c = tuple(float(x) for x in np.atleast_1d(np.asarray(coeffs, dtype=float)))
        if len(c) == 0:
            raise ValueError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def as_array(self) -> np.ndarray:
        return np.array(self.coeffs)

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i]

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.coeffs == other.coeffs

    def __hash__(self):
        return hash(self.coeffs)

    def __repr__(self):
        return f"Polynomial({list(self.coeffs)})"


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    """Product of two polynomials (coefficient convolution)."""
    return Polynomial(np.convolve(p.as_array(), q.as_array()))


def normalize(p: Polynomial) -> Polynomial:
    """Strip trailing zero coefficients, keeping at least the constant term."""
    c = list(p.coeffs)
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return Polynomial(c)


def long_division(A: Polynomial, d: int) -> tuple[Polynomial, Polynomial]:
    """Divide ``A(z^-1)`` into one, ``d`` steps deep.

    Returns ``(F, G)`` with ``1/A = F + z^-d G / A``, i.e. ``F A + z^-d G = 1``.
    ``F`` has exactly ``d`` coefficients (``f_0 = 1``) and ``G`` has
    ``max(n, 1)`` coefficients where ``n = deg A``.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"delay d must be a positive integer, got {d!r}")
    d = int(d)
    a = A.as_array()
    if a[0] != 1.0:
        raise ValueError(f"A must have a_0 = 1, got a_0 = {a[0]!r}")
    n = len(a) - 1

    # remainder r starts as 1; each step cancels its leading term with f_k * A
    r = np.zeros(n + d)
    r[0] = 1.0
    f = np.zeros(d)
    for k in range(d):
        f[k] = r[k]
        if f[k] != 0.0:
            r[k : k + n + 1] -= f[k] * a
        r[k] = 0.0
    # r = 1 - F A now lives at powers d .. d+n-1 and equals z^-d G
    g = r[d : d + n] if n > 0 else np.zeros(1)
    return Polynomial(f), Polynomial(g + 0.0)


def zeros_in_z(B: Polynomial) -> np.ndarray:
    """Values ``lam`` with ``B(lam^-1) = 0``.

    These are the roots of ``b_0 z^m + b_1 z^(m-1) + ... + b_m``, obtained as
    eigenvalues of its companion matrix.  A constant polynomial has no zeros.
    """
    b = B.as_array()
    if b[0] == 0.0:
        raise ValueError("B must have a nonzero constant coefficient b_0")
    m = len(b) - 1
    if m == 0:
        return np.zeros(0, dtype=complex)
    comp = np.zeros((m, m))
    comp[0, :] = -b[1:] / b[0]
    comp[1:, :-1] = np.eye(m - 1)
    return np.linalg.eigvals(comp).astype(complex)
