"""Per-trajectory synchronization and entanglement indicators.

Undefined samples (vacuum-dominated correlator, constant Pearson window)
are reported as None in the scalar API and NaN in the batched helpers;
callers must exclude and count them, never zero them.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .hilbert import FockSpace, StateVector, annihilation, reduced_density

#: Denominator floor below which the correlator is undefined.
VACUUM_EPS = 1e-12

#: Reduced-state eigenvalues below this contribute nothing to the entropy.
ENTROPY_EIG_FLOOR = 1e-14


@dataclass(frozen=True)
class WindowSpec:
    """Sliding time window for the Pearson indicator."""

    width: float
    stride: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("window width must be > 0")
        if not 0 < self.stride <= self.width:
            raise ValueError("stride must be in (0, width]")


@lru_cache(maxsize=None)
def _correlator_mats(dims: tuple[int, ...]):
    space = FockSpace(dims)
    a1 = annihilation(space, 1).matrix
    a2 = annihilation(space, 2).matrix
    return a1.conj().T @ a2, a1.conj().T @ a1, a2.conj().T @ a2


def correlator(psi: StateVector) -> complex | None:
    """<a1† a2> / sqrt(<n1><n2>), or None for vacuum-dominated states."""
    if psi.space.n_factors < 2:
        raise ValueError("correlator needs a bipartite space")
    cross, n1, n2 = _correlator_mats(psi.space.dims)
    v = psi.amplitudes
    den = (v.conj() @ (n1 @ v)).real * (v.conj() @ (n2 @ v)).real
    if den <= VACUUM_EPS:
        return None
    return complex(v.conj() @ (cross @ v)) / math.sqrt(den)


def correlator_batch(psis: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    """Vectorized correlator over stacked states (..., d); NaN = undefined."""
    cross, n1, n2 = _correlator_mats(dims)
    num = np.einsum("...i,ij,...j->...", psis.conj(), cross, psis)
    e1 = np.einsum("...i,ij,...j->...", psis.conj(), n1, psis).real
    e2 = np.einsum("...i,ij,...j->...", psis.conj(), n2, psis).real
    den = e1 * e2
    out = np.full(num.shape, np.nan + 0j, dtype=np.complex128)
    ok = den > VACUUM_EPS
    out[ok] = num[ok] / np.sqrt(den[ok])
    return out


def phase_difference(c: complex | None) -> float | None:
    """Principal argument in (-pi, pi]; undefined input stays undefined."""
    if c is None:
        return None
    if isinstance(c, complex) and (math.isnan(c.real) or math.isnan(c.imag)):
        return None
    if c == 0:
        raise ValueError("phase of the zero correlator is undefined")
    return cmath.phase(c)


def pearson(times: np.ndarray, x1: np.ndarray, x2: np.ndarray,
            window: WindowSpec, t: float) -> float | None:
    """Windowed Pearson coefficient of two sampled series around time t.

    Returns None when the window is not fully covered by the series or
    either windowed signal is (numerically) constant.
    """
    times = np.asarray(times, dtype=float)
    half = window.width / 2
    eps = 1e-9 * max(window.width, 1.0)
    if t - half < times[0] - eps or t + half > times[-1] + eps:
        return None
    sel = (times >= t - half - eps) & (times <= t + half + eps)
    a = np.asarray(x1, dtype=float)[sel]
    b = np.asarray(x2, dtype=float)[sel]
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da) / len(a)
    vb = float(db @ db) / len(b)
    if va <= 1e-15 or vb <= 1e-15:
        return None
    return float(da @ db) / (len(a) * math.sqrt(va * vb))


def pearson_series(times: np.ndarray, x1: np.ndarray, x2: np.ndarray,
                   width: float) -> np.ndarray:
    """Pearson coefficient at every sample where the window fits; NaN elsewhere.

    Series must be uniformly sampled; the window is rounded to a whole
    number of samples.
    """
    times = np.asarray(times, dtype=float)
    out = np.full(times.shape, np.nan)
    if len(times) < 2:
        return out
    stride = times[1] - times[0]
    w = int(round(width / stride)) + 1
    if w < 2 or w > len(times):
        return out
    win = np.lib.stride_tricks.sliding_window_view
    a = win(np.asarray(x1, dtype=float), w)
    b = win(np.asarray(x2, dtype=float), w)
    da = a - a.mean(axis=1, keepdims=True)
    db = b - b.mean(axis=1, keepdims=True)
    va = np.einsum("ij,ij->i", da, da) / w
    vb = np.einsum("ij,ij->i", db, db) / w
    r = np.full(a.shape[0], np.nan)
    ok = (va > 1e-15) & (vb > 1e-15)
    r[ok] = np.einsum("ij,ij->i", da[ok], db[ok]) / (w * np.sqrt(va[ok] * vb[ok]))
    # center of each window
    lo = (w - 1) // 2
    out[lo:lo + a.shape[0]] = r
    return out


def entanglement_entropy(psi: StateVector) -> float:
    """Von Neumann entropy (nats) of the reduced state of oscillator 1."""
    rho1 = reduced_density(psi, keep=1)
    lam = rho1.eigenvalues()
    lam = lam[lam > ENTROPY_EIG_FLOOR]
    return float(-np.sum(lam * np.log(lam)))


def entropy_batch(psis: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
    """Vectorized entanglement entropy over stacked states (..., d)."""
    d1 = dims[0]
    d2 = int(np.prod(dims[1:]))
    t = psis.reshape(psis.shape[:-1] + (d1, d2))
    rho = np.einsum("...ab,...cb->...ac", t, t.conj())
    lam = np.linalg.eigvalsh(rho)
    lam = np.clip(lam, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > ENTROPY_EIG_FLOOR, -lam * np.log(lam), 0.0)
    return terms.sum(axis=-1)


def circular_mean(phases: np.ndarray) -> float:
    """Argument of the mean unit phasor."""
    phases = np.asarray(phases, dtype=float)
    if phases.size == 0:
        raise ValueError("no phases to average")
    z = np.exp(1j * phases).mean()
    if z == 0:
        raise ValueError("circular mean undefined (phasors cancel)")
    return float(np.angle(z))


def wrap_to(phases: np.ndarray, center: float) -> np.ndarray:
    """Re-wrap angles into (center - pi, center + pi]."""
    phases = np.asarray(phases, dtype=float)
    return center + np.angle(np.exp(1j * (phases - center)))


@dataclass(frozen=True)
class TrajectoryAverages:
    """Time averages of the per-sample indicators past the burn-in."""

    c_abs: float
    delta_phi: float
    pearson: float | None
    entropy: float
    n_samples: int
    n_excluded_c: int
    n_excluded_r: int


def time_average(record, burn_in: float,
                 pearson_width: float | None = None) -> TrajectoryAverages:
    """Average a TrajectoryRecord's indicators over t > burn_in.

    The phase difference is averaged circularly (mean unit phasor).
    Undefined correlator/Pearson samples are excluded and counted.
    """
    times = record.times
    sel = times > burn_in
    if not np.any(sel):
        raise ValueError("series does not extend beyond burn_in")
    c = record.c[sel]
    ok_c = ~np.isnan(c.real)
    if not np.any(ok_c):
        raise ValueError("all correlator samples undefined")
    cabs = float(np.abs(c[ok_c]).mean())
    dphi = circular_mean(np.angle(c[ok_c]))
    entropy = float(record.entropy[sel].mean())
    r_mean = None
    n_excl_r = 0
    if pearson_width is not None:
        r = pearson_series(times, record.x1, record.x2, pearson_width)[sel]
        ok_r = ~np.isnan(r)
        n_excl_r = int((~ok_r).sum())
        if np.any(ok_r):
            r_mean = float(r[ok_r].mean())
    return TrajectoryAverages(
        c_abs=cabs,
        delta_phi=dphi,
        pearson=r_mean,
        entropy=entropy,
        n_samples=int(sel.sum()),
        n_excluded_c=int((~ok_c).sum()),
        n_excluded_r=n_excl_r,
    )
