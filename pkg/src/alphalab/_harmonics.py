"""Homogeneous harmonic polynomials on spheres, L2-orthonormalized.

Degree-k spherical harmonics on S^{d-1} are built as the null space of the
Laplacian acting on homogeneous degree-k monomial coefficients, then
orthonormalized against the exact closed-form sphere moments.  Everything is
deterministic and accurate to machine precision, so these double as exact
eigenfunctions (eigenvalue k(k+d-2)) in tests and solvers.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations_with_replacement
from math import gamma

import numpy as np


def monomial_exponents(d: int, k: int) -> np.ndarray:
    """All exponent multi-indices of total degree k in d variables, (P, d)."""
    if k == 0:
        return np.zeros((1, d), dtype=int)
    exps = []
    for combo in combinations_with_replacement(range(d), k):
        e = np.zeros(d, dtype=int)
        for a in combo:
            e[a] += 1
        exps.append(e)
    return np.array(exps, dtype=int)


def sphere_moment(exponents: np.ndarray) -> float:
    """Exact integral of x^e over the unit sphere S^{d-1}."""
    e = np.asarray(exponents)
    if np.any(e % 2 == 1):
        return 0.0
    d = e.shape[0]
    num = 2.0
    for ea in e:
        num *= gamma((ea + 1) / 2.0)
    return num / gamma((np.sum(e) + d) / 2.0)


def harmonic_dimension(d: int, k: int) -> int:
    """dim of degree-k spherical harmonics on S^{d-1}."""
    from math import comb
    if k == 0:
        return 1
    if k == 1:
        return d
    return comb(d + k - 1, k) - comb(d + k - 3, k - 2)


class HarmonicBasis:
    """Orthonormal basis of degree-k spherical harmonics on S^{d-1}."""

    def __init__(self, d: int, k: int):
        if d < 2 or k < 0:
            raise ValueError("need ambient dimension >= 2 and degree >= 0")
        self.d = d
        self.k = k
        self.exponents = monomial_exponents(d, k)
        p = self.exponents.shape[0]

        if k < 2:
            null = np.eye(p)
        else:
            low = monomial_exponents(d, k - 2)
            low_index = {tuple(e): i for i, e in enumerate(low)}
            lap = np.zeros((low.shape[0], p))
            for col, e in enumerate(self.exponents):
                for a in range(d):
                    if e[a] >= 2:
                        tgt = e.copy()
                        tgt[a] -= 2
                        lap[low_index[tuple(tgt)], col] += e[a] * (e[a] - 1)
            _, s, vt = np.linalg.svd(lap)
            rank = int(np.sum(s > 1e-10 * max(s[0], 1.0)))
            null = vt[rank:]
        expect = harmonic_dimension(d, k)
        if null.shape[0] != expect:
            raise RuntimeError(
                f"harmonic null space dim {null.shape[0]} != expected {expect}")

        # exact Gram of monomial products, then orthonormalize the null basis
        moments = np.zeros((p, p))
        for i in range(p):
            for j in range(i, p):
                moments[i, j] = moments[j, i] = sphere_moment(
                    self.exponents[i] + self.exponents[j])
        gram = null @ moments @ null.T
        chol = np.linalg.cholesky(gram)
        self.coeffs = np.linalg.solve(chol, null)

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    def eigenvalue(self) -> float:
        """Laplace-Beltrami eigenvalue k(k+d-2) of every member."""
        return float(self.k * (self.k + self.d - 2))

    def _monomial_values(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        vals = np.ones((y.shape[0], self.exponents.shape[0]))
        for a in range(self.d):
            col = self.exponents[:, a]
            mask = col > 0
            if np.any(mask):
                vals[:, mask] *= y[:, a:a + 1] ** col[mask]
        return vals

    def values(self, y: np.ndarray) -> np.ndarray:
        """(K, size) values of each basis harmonic at ambient points."""
        return self._monomial_values(y) @ self.coeffs.T

    def ambient_gradients(self, y: np.ndarray) -> np.ndarray:
        """(K, size, d) Euclidean gradients of the homogeneous polynomials."""
        y = np.atleast_2d(y)
        out = np.zeros((y.shape[0], self.size, self.d))
        for a in range(self.d):
            de = self.exponents.copy()
            fac = de[:, a].astype(float)
            mask = fac > 0
            if not np.any(mask):
                continue
            de[mask, a] -= 1
            vals = np.ones((y.shape[0], int(np.sum(mask))))
            sub = de[mask]
            for b in range(self.d):
                col = sub[:, b]
                m2 = col > 0
                if np.any(m2):
                    vals[:, m2] *= y[:, b:b + 1] ** col[m2]
            out[:, :, a] = (vals * fac[mask][None, :]) @ self.coeffs[:, mask].T
        return out

    def sphere_gradients(self, y: np.ndarray) -> np.ndarray:
        """(K, size, d) intrinsic gradients on the sphere (|y| = 1 assumed)."""
        y = np.atleast_2d(y)
        amb = self.ambient_gradients(y)
        vals = self.values(y)
        # P(grad p) = grad p - k p x for degree-k homogeneous p on |x|=1
        return amb - self.k * vals[:, :, None] * y[:, None, :]


@lru_cache(maxsize=64)
def harmonic_basis(d: int, k: int) -> HarmonicBasis:
    return HarmonicBasis(d, k)
