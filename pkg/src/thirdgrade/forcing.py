"""Additive trace-class Wiener forcing and the exactly integrated Ornstein-Uhlenbeck component.

The noise acts along the divergence-free basis ``e(k) k_perp / |k|`` with
coefficient variance rate ``c_k = sigma**2 * kappa**(-2 s)``, meaning the
Fourier coefficient of W at mode k satisfies ``E|W_k(t)|**2 = c_k t``.  With
the ``L**2`` Parseval constant the covariance operator has eigenvalues
``L**2 c_k`` in physical units.

The linear component solves ``d(Yz) = -(1 + theta A) Yz dt + dW`` where
``Y = 1 + alpha1 A``; each mode is an exact complex OU process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralField, TorusGrid, hermitize, upsilon_mult

__all__ = ["NoiseSpec", "NoisePath", "ou_step", "trace_diagnostics", "sample_stream", "ou_path"]


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    s: float = 4.0
    gamma: float = 0.25
    theta: float = 1.0
    cutoff: float | None = None
    master_seed: int = 0
    c_hat: float | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 < self.gamma < 0.5:
            raise ValueError(f"gamma must lie in (0, 1/2), got {self.gamma}")
        if self.s <= 4 - 2 * self.gamma:
            raise ValueError(f"trace condition needs s > 4 - 2*gamma = {4 - 2 * self.gamma}, got s = {self.s}")
        if self.theta <= 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.c_hat is not None and self.c_hat <= 0:
            raise ValueError(f"c_hat must be positive, got {self.c_hat}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")

    def variances(self, grid: TorusGrid) -> np.ndarray:
        """Per-mode variance rate ``c_k`` on the grid's active modes."""
        active = grid.mask.copy()
        if self.cutoff is not None:
            active &= np.sqrt((grid.kint**2).sum(axis=0)) <= self.cutoff
        if self.sigma == 0:
            return np.zeros(grid.k2.shape)
        k2 = np.where(active, grid.k2, 1.0)
        return np.where(active, self.sigma**2 * k2 ** (-self.s), 0.0)

    def op_norm(self, grid: TorusGrid) -> float:
        return float(grid.L**2 * self.variances(grid).max())

    def theta_min(self, grid: TorusGrid) -> float | None:
        """Smallest admissible damping for the target exponent ``c_hat`` (None if unset)."""
        if self.c_hat is None:
            return None
        return self.c_hat + self.op_norm(grid) / grid.lambda1

    def admissible(self, grid: TorusGrid, margin: float = 1e-9) -> "NoiseSpec":
        """Copy with theta raised strictly above ``theta_min`` when needed."""
        tmin = self.theta_min(grid)
        if tmin is None or self.theta > tmin:
            return self
        return NoiseSpec(self.sigma, self.s, self.gamma, tmin * (1 + margin) + margin,
                         self.cutoff, self.master_seed, self.c_hat)

    def decay_rates(self, grid: TorusGrid) -> np.ndarray:
        return 1.0 + self.theta * grid.k2


def trace_diagnostics(spec: NoiseSpec, grid: TorusGrid) -> dict:
    """Covariance traces over the grid's modes in physical units."""
    c = spec.variances(grid)
    L2 = grid.L**2
    r_hi = 3 - 2 * spec.gamma

    def weighted(r: float) -> float:
        return float(L2 * (c * grid.k2**r).sum())

    return {
        "tr_GG": weighted(0.0),
        "tr_weighted": {0.0: weighted(0.0), r_hi: weighted(r_hi)},
        "weighted": weighted,
        "op_norm": spec.op_norm(grid),
        "theta_min": spec.theta_min(grid),
    }


def _basis(grid: TorusGrid) -> np.ndarray:
    """Real unit vectors ``k_perp/|k|`` oriented so that e(-k) = e(k)."""
    k1, k2 = grid.kint
    canonical = (k2 > 0) | ((k2 == 0) & (k1 > 0))
    sgn = np.where(canonical, 1.0, -1.0)
    nk = np.sqrt(np.where(grid.mask, k1**2 + k2**2, 1.0))
    e = np.stack([-k2, k1]) * sgn / nk
    return e * grid.mask


@dataclass
class NoisePath:
    """Deterministic stream of Hermitian complex normals for one Monte-Carlo sample.

    Blocks are consumed sequentially from a Philox generator keyed by
    ``(master_seed, sample_index)``, so the first n blocks do not depend on how
    many are requested later.  Each block holds two independent complex
    standard normal fields on the grid.
    """

    spec: NoiseSpec
    sample_index: int

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.spec.master_seed), int(self.sample_index)])
        return np.random.Generator(np.random.Philox(ss))

    def blocks(self, grid: TorusGrid, count: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """``count`` blocks of shape ``(2, N, N)`` complex normals with E|xi|^2 = 1."""
        rng = self.generator() if rng is None else rng
        raw = rng.standard_normal((count, 2, 2, grid.N, grid.N))
        xi = (raw[:, :, 0] + 1j * raw[:, :, 1]) / math.sqrt(2)
        return hermitize(grid, xi) * math.sqrt(2)


def sample_stream(spec: NoiseSpec, sample_index: int) -> NoisePath:
    return NoisePath(spec, int(sample_index))


def _ou_coefficients(c: np.ndarray, mu: np.ndarray, h: float):
    decay = np.exp(-mu * h)
    var_eta = c * (-np.expm1(-2 * mu * h)) / (2 * mu)
    var_dw = c * h
    cov = c * (-np.expm1(-mu * h)) / mu
    a = np.sqrt(var_eta)
    b1 = np.where(a > 0, cov / np.where(a > 0, a, 1.0), 0.0)
    b2 = np.sqrt(np.maximum(var_dw - b1**2, 0.0))
    return decay, a, b1, b2


def ou_step(Y: SpectralField, spec: NoiseSpec, a1: float, dt: float,
            xi: np.ndarray | np.random.Generator | None = None) -> SpectralField:
    """Advance the OU variable ``Y = Yz`` by one exact step of length dt.

    ``xi`` is either a complex Hermitian normal field of shape ``(N, N)``, a
    generator to draw one from, or None for the noiseless update.  The result
    is Hermitian and solenoidal; ``upsilon_solve(result, a1)`` recovers z.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = Y.grid
    c = spec.variances(g)
    mu = spec.decay_rates(g)
    decay, a, _, _ = _ou_coefficients(c, mu, dt)
    out = decay * Y.coeff
    if isinstance(xi, np.random.Generator):
        xi = NoisePath(spec, 0).blocks(g, 1, xi)[0, 0]
    if xi is not None:
        out = out + _basis(g) * (a * xi)
    return Y.with_coeff(out * g.mask, True)


def ou_path(path: NoisePath, grid: TorusGrid, a1: float, dt: float, steps: int,
            substeps: int = 1, z0: np.ndarray | None = None):
    """OU component on the half-step lattice together with the Wiener increments.

    The path is generated with step ``dt / (2 * substeps)`` and subsampled, so a
    coarse run and a ``substeps``-times finer run driven by the same stream see
    the same z at shared times.  Returns ``(z_half, dW)`` with shapes
    ``(2*steps+1, 2, N, N)`` and ``(steps, 2, N, N)``.
    """
    spec = path.spec
    fine = 2 * substeps
    h = dt / fine
    nfine = steps * fine
    c = spec.variances(grid)
    mu = spec.decay_rates(grid)
    decay, a, b1, b2 = _ou_coefficients(c, mu, h)
    e = _basis(grid)
    Ups = upsilon_mult(grid, a1)
    z_half = np.zeros((2 * steps + 1, 2, grid.N, grid.N), dtype=complex)
    dW = np.zeros((steps, 2, grid.N, grid.N), dtype=complex)
    Y = np.zeros((2, grid.N, grid.N), dtype=complex) if z0 is None else Ups * z0
    z_half[0] = Y / Ups
    if spec.sigma == 0:
        d_half = np.exp(-mu * dt / 2)
        for j in range(1, 2 * steps + 1):
            Y = d_half * Y
            z_half[j] = Y / Ups
        return z_half * grid.mask, dW
    rng = path.generator()
    chunk = 256
    j = 0
    while j < nfine:
        cnt = min(chunk, nfine - j)
        xi = path.blocks(grid, cnt, rng)
        for i in range(cnt):
            x1, x2 = xi[i, 0], xi[i, 1]
            Y = decay * Y + e * (a * x1)
            dW[(j + i) // fine] += e * (b1 * x1 + b2 * x2)
            if (j + i + 1) % substeps == 0:
                z_half[(j + i + 1) // substeps] = Y / Ups
        j += cnt
    return z_half * grid.mask, dW * grid.mask
