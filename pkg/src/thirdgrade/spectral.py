"""Fourier representation of mean-zero periodic velocity fields on the torus.

Coefficients follow ``v(x) = sum_k v_k exp(2*pi*i k.x / L)`` and are stored as
complex arrays of shape ``(..., 2, N, N)`` in FFT ordering (``numpy.fft.fftfreq``
along both axes).  Any leading axes are batch axes; every operator acts
independently on each batch element.

The forward transform carries the ``1/M**2`` factor, so ``||v||_2**2 = L**2 *
sum_k |v_k|**2`` (Parseval constant ``L**2``).  Nonlinear products are formed
on a zero-padded ``M x M`` collocation grid with ``M >= 2N``.  Modes with a
component equal to ``+-N/2`` (Nyquist) are held at zero: on the padded grid
they have no Hermitian partner, and dropping them makes every product up to
quartic order alias-free on the retained modes.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "TorusGrid",
    "SpectralField",
    "PhysicalField",
    "FluidParams",
    "fft_forward",
    "fft_inverse",
    "leray_project",
    "stokes_apply",
    "upsilon_apply",
    "upsilon_solve",
    "trilinear_b",
    "transport_B",
    "rivlin_A",
    "op_J",
    "op_K",
    "state_rhs_G",
    "check_transport_identity",
    "norms",
    "inner",
]


def _workers() -> int:
    env = os.environ.get("TGF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True)
class TorusGrid:
    """Periodic square ``[0, L]^2`` with ``N`` Fourier modes per direction.

    ``modes`` optionally restricts the active set to the listed wavevectors
    (their negatives are added automatically); this realises a low-dimensional
    Galerkin space used by the single-mode oracle tests.
    """

    L: float = 2 * math.pi
    N: int = 16
    M: int | None = None
    modes: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise ValueError(f"N must be an even integer >= 4, got {self.N}")
        if self.L <= 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.M is None:
            object.__setattr__(self, "M", 2 * self.N)
        if self.M < 2 * self.N:
            raise ValueError(f"M must be >= 2N = {2 * self.N}, got {self.M}")
        if self.modes is not None:
            object.__setattr__(self, "modes", tuple(tuple(int(c) for c in k) for k in self.modes))

    # -- wavenumbers -----------------------------------------------------
    @cached_property
    def kint(self) -> np.ndarray:
        """Integer wavevectors, shape ``(2, N, N)``."""
        k = np.fft.fftfreq(self.N, 1.0 / self.N).astype(int)
        return np.stack(np.meshgrid(k, k, indexing="ij"))

    @cached_property
    def kvec(self) -> np.ndarray:
        return (2 * np.pi / self.L) * self.kint

    @cached_property
    def k2(self) -> np.ndarray:
        """``kappa(k)**2``, the Stokes eigenvalue of each mode."""
        return (self.kvec**2).sum(axis=0)

    @cached_property
    def mask(self) -> np.ndarray:
        ki = self.kint
        m = (np.abs(ki) < self.N // 2).all(axis=0)
        m &= (ki != 0).any(axis=0)
        if self.modes is not None:
            keep = np.zeros_like(m)
            for k1, k2 in self.modes:
                for s in (1, -1):
                    keep |= (ki[0] == s * k1) & (ki[1] == s * k2)
            m &= keep
        return m

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros_like(self.k2)
        out[self.mask] = 1.0 / self.k2[self.mask]
        return out

    @property
    def lambda1(self) -> float:
        """Smallest Stokes eigenvalue ``4 pi^2 / L^2``."""
        return 4 * np.pi**2 / self.L**2

    @property
    def cell_area(self) -> float:
        return (self.L / self.M) ** 2

    @cached_property
    def neg_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays mapping each mode k to the position of -k."""
        i = np.arange(self.N)
        neg = (-i) % self.N
        return np.meshgrid(neg, neg, indexing="ij")

    # -- transforms ------------------------------------------------------
    @cached_property
    def _pad_index(self):
        n, M = self.N, self.M
        rows_n = np.arange(n)
        krow = np.fft.fftfreq(n, 1.0 / n).astype(int)
        rows_m = krow % M
        cols = np.arange(n // 2)  # non-negative k2 below Nyquist
        return rows_n, rows_m, cols

    @cached_property
    def _gather_index(self):
        ki = self.kint
        M = self.M
        flip = ki[1] < 0
        r = np.where(flip, -ki[0], ki[0]) % M
        c = np.where(flip, -ki[1], ki[1])
        c = np.where(self.mask, c, 0)
        r = np.where(self.mask, r, 0)
        return r, c, flip

    def to_physical(self, c: np.ndarray) -> np.ndarray:
        """Evaluate coefficients ``(..., N, N)`` on the padded ``M x M`` grid."""
        rows_n, rows_m, cols = self._pad_index
        M = self.M
        half = np.zeros(c.shape[:-2] + (M, M // 2 + 1), dtype=complex)
        half[..., rows_m[:, None], cols[None, :]] = c[..., rows_n[:, None], cols[None, :]]
        return sfft.irfft2(half, s=(M, M), norm="forward", workers=_workers())

    def to_spectral(self, p: np.ndarray) -> np.ndarray:
        """Project samples ``(..., M, M)`` onto the active modes."""
        R = sfft.rfft2(p, norm="forward", workers=_workers())
        r, c, flip = self._gather_index
        out = R[..., r, c]
        out = np.where(flip, out.conj(), out)
        return out * self.mask

    @cached_property
    def x(self) -> np.ndarray:
        """Collocation coordinates, shape ``(2, M, M)``."""
        s = np.arange(self.M) * self.L / self.M
        return np.stack(np.meshgrid(s, s, indexing="ij"))

    def zeros(self, *batch: int) -> np.ndarray:
        return np.zeros(tuple(batch) + (2, self.N, self.N), dtype=complex)

    def random_field(self, rng: np.random.Generator, band: float | None = None,
                     decay: float = 0.0, amplitude: float = 1.0, *batch: int) -> np.ndarray:
        """Random solenoidal, Hermitian field restricted to ``|k_i| <= band``."""
        shape = tuple(batch) + (2, self.N, self.N)
        c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        c = hermitize(self, c)
        if band is not None:
            c = c * (np.abs(self.kint) <= band).all(axis=0)
        if decay:
            c = c * np.where(self.mask, np.maximum(self.k2, 1e-300) ** (-decay / 2), 0.0)
        c = leray(self, c)
        nrm = np.sqrt(l2sq(self, c))
        nrm = np.where(nrm > 0, nrm, 1.0)
        return amplitude * c / nrm[..., None, None, None]


# ---------------------------------------------------------------------------
# array-level kernels; every function takes the grid followed by arrays
# ---------------------------------------------------------------------------

def hermitize(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    ni, nj = grid.neg_index
    return 0.5 * (c + c[..., ni, nj].conj()) * grid.mask


def leray(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    k = grid.kvec
    kc = (k * c).sum(axis=-3)
    return (c - k * (kc * grid.inv_k2)[..., None, :, :]) * grid.mask


def upsilon_mult(grid: TorusGrid, a1: float) -> np.ndarray:
    return 1.0 + a1 * grid.k2


def grad_spec(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    """``D[..., i, j] = d_i v_j`` in spectral space, shape ``(..., 2, 2, N, N)``."""
    return 1j * grid.kvec[:, None] * c[..., None, :, :, :]


def grad_phys(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    return grid.to_physical(grad_spec(grid, c))


def sym(T: np.ndarray) -> np.ndarray:
    return T + np.swapaxes(T, -3, -4)


def div_tensor(grid: TorusGrid, T: np.ndarray) -> np.ndarray:
    """Spectral ``(div T)_i = sum_j d_j T_ij`` from physical tensor samples."""
    Tc = grid.to_spectral(T)
    return 1j * (Tc * grid.kvec).sum(axis=-3)


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("...ikxy,...kjxy->...ijxy", A, B)


def ddot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("...ijxy,...ijxy->...xy", A, B)


def advect(u: np.ndarray, gw: np.ndarray) -> np.ndarray:
    """``(u . grad) w`` given samples of u and of ``d_i w_j``."""
    return np.einsum("...ixy,...ijxy->...jxy", u, gw)


def cotransport(a: np.ndarray, gb: np.ndarray) -> np.ndarray:
    """``sum_j a_j grad b_j`` given samples of a and of ``d_i b_j``."""
    return np.einsum("...jxy,...ijxy->...ixy", a, gb)


def dot_spec(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """L2 inner product ``(a, b)`` of real fields from their coefficients."""
    return grid.L**2 * np.real((a.conj() * b).sum(axis=(-3, -2, -1)))


def l2sq(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    return dot_spec(grid, c, c)


def hs_sq(grid: TorusGrid, c: np.ndarray, s: float) -> np.ndarray:
    w = np.where(grid.mask, np.maximum(grid.k2, 1e-300) ** s, 0.0)
    return grid.L**2 * (w * np.abs(c) ** 2).sum(axis=(-3, -2, -1))


def quad(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """Collocation quadrature of samples ``(..., M, M)`` over the torus."""
    return grid.cell_area * f.sum(axis=(-2, -1))


def rivlin_phys(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    return sym(grad_phys(grid, c))


def aL4_4(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    A = rivlin_phys(grid, c)
    return quad(grid, ddot(A, A) ** 2)


def transport_terms(grid: TorusGrid, v: np.ndarray, a1: float) -> np.ndarray:
    """``(v.grad) Y(v) + sum_j Y(v)_j grad v_j`` before projection."""
    Yv = upsilon_mult(grid, a1) * v
    vp = grid.to_physical(v)
    Yp = grid.to_physical(Yv)
    gv = grad_phys(grid, v)
    gY = grad_phys(grid, Yv)
    return grid.to_spectral(advect(vp, gY) + cotransport(Yp, gv)), gv


def nonlinear_G(grid: TorusGrid, v: np.ndarray, params: "FluidParams") -> np.ndarray:
    """All terms of G except the viscous one, for the total velocity v."""
    tr, gv = transport_terms(grid, v, params.alpha1)
    A = sym(gv)
    nA2 = ddot(A, A)
    T = -(params.alpha1 + params.alpha2) * matmul(A, A) - params.beta * nA2[..., None, None, :, :] * A
    return leray(grid, tr + div_tensor(grid, T))


def G_array(grid: TorusGrid, u: np.ndarray, z: np.ndarray | None, params: "FluidParams") -> np.ndarray:
    v = u if z is None else u + z
    return params.nu * grid.k2 * u + nonlinear_G(grid, v, params)


# ---------------------------------------------------------------------------
# typed field wrappers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralField:
    """Velocity coefficients on a grid; see the module docstring for layout."""

    grid: TorusGrid
    coeff: np.ndarray
    solenoidal: bool = False

    def __post_init__(self):
        g = self.grid
        if self.coeff.shape[-3:] != (2, g.N, g.N):
            raise ValueError(f"coefficient shape {self.coeff.shape} does not match grid N={g.N}")

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "SpectralField":
        return cls(grid, grid.zeros(), True)

    @classmethod
    def from_modes(cls, grid: TorusGrid, modes: dict) -> "SpectralField":
        """Build a real field from ``{(k1, k2): (a1, a2)}``; conjugates are implied."""
        c = grid.zeros()
        n = grid.N
        for (k1, k2), amp in modes.items():
            amp = np.asarray(amp, dtype=complex)
            c[:, k1 % n, k2 % n] += amp
            c[:, -k1 % n, -k2 % n] += amp.conj()
        c = c * grid.mask
        div = np.abs((grid.kvec * c).sum(axis=0)).max()
        return cls(grid, c, bool(div <= 1e-12 * max(np.abs(c).max(), 1e-300)))

    def with_coeff(self, c: np.ndarray, solenoidal: bool | None = None) -> "SpectralField":
        return SpectralField(self.grid, c, self.solenoidal if solenoidal is None else solenoidal)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coeff(self.coeff + other.coeff, self.solenoidal and other.solenoidal)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coeff(self.coeff - other.coeff, self.solenoidal and other.solenoidal)

    def __mul__(self, a: float) -> "SpectralField":
        return self.with_coeff(a * self.coeff)

    __rmul__ = __mul__

    def divergence_residual(self) -> float:
        g = self.grid
        kc = (g.kvec * self.coeff).sum(axis=-3)
        scale = np.sqrt(g.k2).max() * max(np.abs(self.coeff).max(), 1e-300)
        return float(np.abs(kc).max() / scale)

    def hermitian_residual(self) -> float:
        ni, nj = self.grid.neg_index
        c = self.coeff * self.grid.mask
        return float(np.abs(c - c[..., ni, nj].conj()).max())


@dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: TorusGrid
    samples: np.ndarray  # (..., ncomp, M, M)

    def __post_init__(self):
        M = self.grid.M
        if self.samples.shape[-2:] != (M, M):
            raise ValueError(f"sample shape {self.samples.shape} does not match M={M}")


@dataclass(frozen=True)
class FluidParams:
    """Material constants; ``enforce_thermo`` turns the Clausius-Duhem bound into an error."""

    nu: float
    alpha1: float
    alpha2: float
    beta: float
    enforce_thermo: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")
        if self.alpha1 < 0:
            raise ValueError(f"alpha1 must be >= 0, got {self.alpha1}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        bound = math.sqrt(24 * self.nu * self.beta)
        if abs(self.alpha1 + self.alpha2) > bound * (1 + 1e-12) + 1e-15:
            msg = (f"|alpha1 + alpha2| = {abs(self.alpha1 + self.alpha2):.6g} exceeds "
                   f"sqrt(24 nu beta) = {bound:.6g}")
            if self.enforce_thermo:
                raise ValueError(msg)
            warnings.warn(msg, stacklevel=2)


# ---------------------------------------------------------------------------
# public operators
# ---------------------------------------------------------------------------

def fft_forward(p: PhysicalField) -> SpectralField:
    if p.samples.shape[-3] != 2:
        raise ValueError("expected a 2-component field")
    return SpectralField(p.grid, p.grid.to_spectral(p.samples))


def fft_inverse(s: SpectralField, M: int | None = None) -> PhysicalField:
    g = s.grid if M is None or M == s.grid.M else replace(s.grid, M=M)
    return PhysicalField(g, g.to_physical(s.coeff))


def leray_project(s: SpectralField) -> SpectralField:
    return s.with_coeff(leray(s.grid, s.coeff), True)


def stokes_apply(s: SpectralField, power: float = 1.0) -> SpectralField:
    """Fractional Stokes power: multiply each mode by ``kappa**(2*power)``."""
    g = s.grid
    w = np.where(g.mask, np.maximum(g.k2, 1e-300) ** power, 0.0)
    return s.with_coeff(w * s.coeff)


def upsilon_apply(s: SpectralField, a1: float) -> SpectralField:
    return s.with_coeff(upsilon_mult(s.grid, a1) * s.coeff)


def upsilon_solve(s: SpectralField, a1: float) -> SpectralField:
    if a1 <= 0:
        raise ValueError("upsilon_solve needs alpha1 > 0")
    return s.with_coeff(s.coeff / upsilon_mult(s.grid, a1))


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> np.ndarray:
    """``b(u, v, w) = int (u . grad) v . w`` by padded-grid quadrature."""
    g = u.grid
    integrand = (advect(g.to_physical(u.coeff), grad_phys(g, v.coeff)) * g.to_physical(w.coeff)).sum(axis=-3)
    return quad(g, integrand)


def transport_B(u: SpectralField, v: SpectralField) -> SpectralField:
    g = u.grid
    c = g.to_spectral(advect(g.to_physical(u.coeff), grad_phys(g, v.coeff)))
    return u.with_coeff(leray(g, c), True)


def rivlin_A(v: SpectralField) -> PhysicalField:
    """First Rivlin-Ericksen tensor samples, shape ``(..., 2, 2, M, M)``."""
    return PhysicalField(v.grid, rivlin_phys(v.grid, v.coeff))


def op_J(v: SpectralField) -> SpectralField:
    g = v.grid
    A = rivlin_phys(g, v.coeff)
    return v.with_coeff(-leray(g, div_tensor(g, matmul(A, A))), True)


def op_K(v: SpectralField) -> SpectralField:
    g = v.grid
    A = rivlin_phys(g, v.coeff)
    return v.with_coeff(-leray(g, div_tensor(g, ddot(A, A)[..., None, None, :, :] * A)), True)


def state_rhs_G(u: SpectralField, z: SpectralField | None, p: FluidParams) -> SpectralField:
    return u.with_coeff(G_array(u.grid, u.coeff, None if z is None else z.coeff, p), True)


def inner(a: SpectralField, b: SpectralField) -> np.ndarray:
    return dot_spec(a.grid, a.coeff, b.coeff)


def check_transport_identity(w: SpectralField, p: FluidParams) -> float:
    """Relative gap between the two projected assemblies of the transport term.

    One side is ``P[(w.grad)w + div(-a1 N(w) - a2 A(w)^2)]`` with
    ``N(w) = (w.grad)A + L^T A + A L`` and ``L_ij = d_j w_i``; the other is
    ``P[(w.grad)Y(w) + sum_j Y(w)_j grad w_j - (a1 + a2) div A(w)^2]``.
    The gradient that separates them is annihilated by the projection.
    """
    g = w.grid
    c = w.coeff
    a1, a2 = p.alpha1, p.alpha2
    wp = g.to_physical(c)
    D = grad_phys(g, c)  # D_ij = d_i w_j, so L = D^T
    A = sym(D)
    Ahat = 1j * (g.kvec[:, None] * c[..., None, :, :, :] + g.kvec[None, :] * c[..., :, None, :, :])
    dA = g.to_physical(1j * g.kvec[:, None, None] * Ahat[..., None, :, :, :, :])  # d_k A_ij
    wgradA = np.einsum("...kxy,...kijxy->...ijxy", wp, dA)
    Lmat = np.swapaxes(D, -3, -4)
    Nw = wgradA + matmul(np.swapaxes(Lmat, -3, -4), A) + matmul(A, Lmat)
    lhs = leray(g, g.to_spectral(advect(wp, D)) + div_tensor(g, -a1 * Nw - a2 * matmul(A, A)))
    tr, _ = transport_terms(g, c, a1)
    rhs = leray(g, tr - (a1 + a2) * div_tensor(g, matmul(A, A)))
    num = np.sqrt(l2sq(g, lhs - rhs))
    den = np.maximum(np.maximum(np.sqrt(l2sq(g, lhs)), np.sqrt(l2sq(g, rhs))), 1e-300)
    res = np.where(num == 0, 0.0, num / den)
    return float(res) if np.ndim(res) == 0 else res


def norms(v: SpectralField) -> dict:
    """Mode-sum norms; ``hs(s)`` is ``||(-Laplacian)^(s/2) v||_2`` so ``hs(1) == gradL2``."""
    g, c = v.grid, v.coeff
    return {
        "l2": np.sqrt(l2sq(g, c)),
        "gradL2": np.sqrt(hs_sq(g, c, 1.0)),
        "hs": lambda s: np.sqrt(hs_sq(g, c, s)),
        "aL4": aL4_4(g, c) ** 0.25,
    }
