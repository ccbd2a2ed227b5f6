"""Stray field of a magnetized body: Laplace(psi) = div(chi m) in all of R^3.

The magnetization lives on a uniform voxel grid.  It is zero-padded into a
box whose sides are at least ``pad`` times the largest extent of the body,
and the Poisson problem is inverted spectrally on that periodic box.  The
discrete weak form

    sum grad(psi) . grad(phi) dV = sum chi m . grad(phi) dV

holds for every periodic grid function phi, with grad the spectral gradient
(Nyquist modes dropped).

A periodic solve cannot represent the mean (k = 0) Fourier mode of chi m,
which costs a relative error equal to the filling fraction of the box.  The
reported energy adds the mean mode back with the box average of
k (x) k / |k|^2 over the k = 0 reciprocal cell (I/3 for a cube).  This
makes a uniformly magnetized ball exact and keeps energy <= |chi m|^2 / 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from magshell.errors import DomainError

_SAT_TOL = 1e-9


@dataclass(frozen=True)
class MagnetizationField:
    """chi m sampled as voxel averages.

    ``mask`` is the occupied volume fraction of each voxel (1 inside the
    body, 0 outside, fractional on a rasterized boundary) and ``values`` the
    voxel average of chi m, so |values| <= mask with equality where m is
    uniform across the voxel.
    """

    values: np.ndarray
    mask: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.values.shape != self.mask.shape + (3,):
            raise DomainError("values must be (n1, n2, n3, 3) matching the mask")
        if np.any(self.mask < 0):
            raise DomainError("negative occupancy")
        norm = np.linalg.norm(self.values, axis=-1)
        if np.any(norm > self.mask + _SAT_TOL * np.maximum(1.0, self.mask)):
            raise DomainError("|chi m| exceeds occupancy (saturation violated)")

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def l2_norm_sq(self):
        return float(np.sum(self.values**2) * self.cell_volume)


class StrayField:
    """Solution of the padded periodic problem, kept in Fourier space.

    ``potential`` and ``gradient`` are synthesized on demand on the full
    padded grid.
    """

    def __init__(self, psi_hat, energy_periodic, mean_mode_energy, box_shape, spacing):
        self.psi_hat = psi_hat
        self.energy_periodic = float(energy_periodic)
        self.mean_mode_energy = float(mean_mode_energy)
        self.energy = self.energy_periodic + self.mean_mode_energy
        self.box_shape = tuple(box_shape)
        self.spacing = tuple(spacing)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def potential(self):
        if self.psi_hat is None:
            return np.zeros(self.box_shape)
        return fft.irfftn(self.psi_hat, s=self.box_shape)

    @property
    def gradient(self):
        if self.psi_hat is None:
            return np.zeros(self.box_shape + (3,))
        ks = _wavenumbers(self.box_shape, self.spacing)
        return np.stack([fft.irfftn(1j * k * self.psi_hat, s=self.box_shape) for k in ks],
                        axis=-1)


@lru_cache(maxsize=64)
def mean_mode_tensor(lengths):
    """Average of k (x) k / |k|^2 over the box |k_i| <= pi / L_i.

    Splits the box into six pyramids with apex at the origin; the integrand
    is homogeneous of degree zero, so each pyramid reduces to a smooth face
    integral evaluated by Gauss-Legendre quadrature.
    """
    a = np.pi / np.asarray(lengths, float)
    x, w = np.polynomial.legendre.leggauss(64)
    # map [-1, 1] -> [0, 1] on the positive quadrant of each face
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    T = np.zeros(3)
    for i in range(3):
        j, l = [d for d in range(3) if d != i]
        s = x[:, None] * a[j]
        t = x[None, :] * a[l]
        ww = w[:, None] * w[None, :] * a[j] * a[l]
        r2 = a[i] ** 2 + s**2 + t**2
        # each face counted twice (+/- a_i), each quadrant four times
        pref = 2 * 4 * a[i] / 3.0
        T[i] += pref * np.sum(ww * a[i] ** 2 / r2)
        T[j] += pref * np.sum(ww * s**2 / r2)
        T[l] += pref * np.sum(ww * t**2 / r2)
    T /= 8.0 * np.prod(a)
    return np.diag(T)


def padded_shape(shape, spacing, pad=2.0):
    """FFT-friendly grid whose side is at least ``pad`` times the largest body extent.

    Padding each axis only by its own extent is not enough for thin bodies:
    periodic copies stacked across a thin direction merge into a column
    with a very different demagnetizing factor.
    """
    if not pad >= 2:
        raise DomainError(f"padding factor must be at least 2, got {pad}")
    if min(shape) < 1:
        raise DomainError("empty magnetization grid")
    side = pad * max(n * d for n, d in zip(shape, spacing))
    return tuple(max(fft.next_fast_len(int(np.ceil(side / d - 1e-9)), real=True), 2 * n)
                 for n, d in zip(shape, spacing))


def _wavenumbers(box, spacing):
    ks = []
    for axis, (n, d) in enumerate(zip(box, spacing)):
        if axis == 2:
            k = 2 * np.pi * fft.rfftfreq(n, d)
        else:
            k = 2 * np.pi * fft.fftfreq(n, d)
        if n % 2 == 0:
            k[n // 2] = 0.0
        shape = [1, 1, 1]
        shape[axis] = len(k)
        ks.append(k.reshape(shape))
    return ks


def _half_spectrum_weights(box):
    # rfft stores k3 >= 0 only; interior columns stand for a conjugate pair.
    n3 = box[2]
    w = np.full(n3 // 2 + 1, 2.0)
    w[0] = 1.0
    if n3 % 2 == 0:
        w[-1] = 1.0
    return w.reshape(1, 1, -1)


def spectral_gradient(f, spacing):
    """Spectral gradient of a periodic grid function (Nyquist modes dropped)."""
    ks = _wavenumbers(f.shape, spacing)
    fh = fft.rfftn(f)
    return np.stack([fft.irfftn(1j * k * fh, s=f.shape) for k in ks], axis=-1)


def solve_stray(field: MagnetizationField, pad=2.0) -> StrayField:
    spacing = tuple(float(d) for d in field.spacing)
    box = padded_shape(field.mask.shape, spacing, pad)
    if not np.any(field.values):
        return StrayField(None, 0.0, 0.0, box, spacing)

    N = int(np.prod(box))
    dV = float(np.prod(spacing))
    ks = _wavenumbers(box, spacing)
    kdotm = None
    mean = np.empty(3)
    for j in range(3):
        comp = field.values[..., j]
        mean[j] = comp.sum()
        term = ks[j] * fft.rfftn(comp, s=box)
        kdotm = term if kdotm is None else kdotm + term
        del term
    k2 = ks[0] ** 2 + ks[1] ** 2 + ks[2] ** 2
    # k = 0 and pure Nyquist modes carry no gradient
    null = k2 == 0
    k2[null] = 1.0
    psi_hat = -1j * kdotm / k2
    psi_hat[null] = 0.0
    # Parseval: sum_x |grad psi|^2 = sum_k |k.m_hat|^2 / |k|^2 / N
    dens = np.abs(kdotm) ** 2 / k2
    dens[null] = 0.0
    energy_periodic = 0.5 * dV * float(np.sum(dens * _half_spectrum_weights(box))) / N
    del dens, kdotm

    lengths = tuple(float(n * d) for n, d in zip(box, spacing))
    volume = float(np.prod(lengths))
    mean *= dV / volume
    T = mean_mode_tensor(lengths)
    mean_energy = 0.5 * volume * float(mean @ T @ mean)
    return StrayField(psi_hat, energy_periodic, mean_energy, box, spacing)


def mag_energy_rescaled(field: MagnetizationField, h, pad=2.0, stray=None):
    """(1 / 2h) * integral |grad psi|^2."""
    if not h > 0:
        raise DomainError("thickness must be positive")
    if stray is None:
        stray = solve_stray(field, pad)
    return stray.energy / h


def _padded_values(field, box):
    m = np.zeros(tuple(box) + (3,))
    n1, n2, n3 = field.mask.shape
    m[:n1, :n2, :n3] = field.values
    return m


def variational_check(field: MagnetizationField, stray: StrayField, trial_potentials):
    """Slack int|grad phi - chi m|^2 - int|grad psi - chi m|^2 for each trial phi (>= 0)."""
    m = _padded_values(field, stray.box_shape)
    dV = stray.cell_volume
    base = float(np.sum((stray.gradient - m) ** 2)) * dV
    slacks = []
    for phi in trial_potentials:
        phi = np.asarray(phi, float)
        if phi.shape != stray.box_shape:
            raise DomainError("trial potential must live on the padded grid")
        g = spectral_gradient(phi, stray.spacing)
        slacks.append(float(np.sum((g - m) ** 2)) * dV - base)
    return np.array(slacks)


def weak_form_residual(field: MagnetizationField, stray: StrayField, test_potentials):
    """Max relative residual of the discrete weak form over the given test functions."""
    m = _padded_values(field, stray.box_shape)
    worst = 0.0
    for phi in test_potentials:
        g = spectral_gradient(np.asarray(phi, float), stray.spacing)
        lhs = float(np.sum(stray.gradient * g))
        rhs = float(np.sum(m * g))
        scale = max(abs(rhs), np.sqrt(np.sum(m * m) * np.sum(g * g)), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


# --- rasterization ---------------------------------------------------------

def deposit(points, moments, volumes, spacing, origin, shape):
    """Accumulate point samples (position, direction, volume) into voxels."""
    spacing = np.asarray(spacing, float)
    idx = np.floor((points - np.asarray(origin)) / spacing + 1e-9).astype(int)
    idx = np.clip(idx, 0, np.asarray(shape) - 1)
    flat = np.ravel_multi_index(idx.T, shape)
    size = int(np.prod(shape))
    dV = float(np.prod(spacing))
    vol = np.bincount(flat, weights=volumes, minlength=size) / dV
    mom = np.stack([np.bincount(flat, weights=volumes * moments[:, j], minlength=size)
                    for j in range(3)], axis=-1) / dV
    return mom.reshape(tuple(shape) + (3,)), vol.reshape(shape)


def rasterize(y, nu, jac, spacing, subsamples=2, margin=1):
    """Voxelize the deformed body y(Omega) carrying the composed magnetization nu.

    ``y`` and ``nu`` are node fields on the (n1, n2, n3) grid of Omega and
    ``jac`` the node values of det(grad y) in the Omega coordinates, so that
    a reference cell of volume dx maps to volume jac*dx.  Every reference
    cell is split into ``subsamples**3`` sub-cells whose centres are mapped
    by trilinear interpolation and dropped into the voxel containing them.
    """
    y = np.asarray(y, float)
    nu = np.asarray(nu, float)
    jac = np.asarray(jac, float)
    n = y.shape[:3]
    spacing = np.asarray(spacing, float)
    offsets = (np.arange(subsamples) + 0.5) / subsamples
    lo = y.reshape(-1, 3).min(axis=0)
    hi = y.reshape(-1, 3).max(axis=0)
    origin = lo - margin * spacing
    shape = tuple(int(v) for v in np.ceil((hi - origin) / spacing - 1e-9).astype(int) + margin)

    pts_all, mom_all, vol_all = [], [], []
    for a in offsets:
        for b in offsets:
            for c in offsets:
                w = [(1 - a) * (1 - b) * (1 - c), a * (1 - b) * (1 - c), (1 - a) * b * (1 - c),
                     a * b * (1 - c), (1 - a) * (1 - b) * c, a * (1 - b) * c, (1 - a) * b * c,
                     a * b * c]
                corners = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0),
                           (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)]

                def interp(f):
                    out = 0.0
                    for wi, (i, j, k) in zip(w, corners):
                        out = out + wi * f[i:n[0] - 1 + i, j:n[1] - 1 + j, k:n[2] - 1 + k]
                    return out

                pts_all.append(interp(y).reshape(-1, 3))
                m = interp(nu).reshape(-1, 3)
                mom_all.append(m / np.linalg.norm(m, axis=1, keepdims=True))
                vol_all.append(interp(jac).reshape(-1))
    pts = np.concatenate(pts_all)
    mom = np.concatenate(mom_all)
    return pts, mom, np.concatenate(vol_all), origin, shape


def rasterize_field(y, nu, jac, reference_spacing, voxel_spacing, subsamples=2):
    """MagnetizationField of the deformed body, see :func:`rasterize`."""
    pts, mom, vol, origin, shape = rasterize(y, nu, jac, voxel_spacing, subsamples)
    cell = float(np.prod(reference_spacing)) / subsamples**3
    values, fill = deposit(pts, mom, vol * cell, voxel_spacing, origin, shape)
    # voxels that received more samples than their volume keep |m| <= fill
    return MagnetizationField(values, fill, tuple(float(s) for s in voxel_spacing),
                              tuple(float(o) for o in origin))


# --- reference bodies ------------------------------------------------------

def ball_field(n, radius_cells, direction=(0.0, 0.0, 1.0), subsamples=4):
    """Uniformly magnetized ball centred in an n^3 unit-spacing grid."""
    direction = np.asarray(direction, float)
    direction = direction / np.linalg.norm(direction)
    centre = 0.5 * n
    off = (np.arange(subsamples) + 0.5) / subsamples
    i = np.arange(n)
    fill = np.zeros((n, n, n))
    for a in off:
        for b in off:
            for c in off:
                x = (i + a - centre)[:, None, None]
                y = (i + b - centre)[None, :, None]
                z = (i + c - centre)[None, None, :]
                fill += (x * x + y * y + z * z < radius_cells**2)
    fill /= subsamples**3
    return MagnetizationField(fill[..., None] * direction, fill, (1.0, 1.0, 1.0))


def plate_field(lx, ly, h, n1, n2, n3, direction=(0.0, 0.0, 1.0)):
    """Uniformly magnetized flat plate (0, lx) x (0, ly) x (-h/2, h/2), one voxel per cell."""
    direction = np.asarray(direction, float)
    direction = direction / np.linalg.norm(direction)
    fill = np.ones((n1, n2, n3))
    return MagnetizationField(fill[..., None] * direction, fill,
                              (lx / n1, ly / n2, h / n3), (0.0, 0.0, -0.5 * h))
