"""Stochastic trajectory integration.

Two unravelings of the same master equation:

* diffusive (homodyne-type): Euler-Maruyama steps of the nonlinear
  stochastic Schroedinger equation with quadrature measurement currents
  J_k = <X_k> + dW_k/dt, X_k = L_k + L_k†.  This is the scheme used for
  all phase statistics.
* jump: Poissonian quantum jumps interleaved with exact no-jump evolution
  exp(-i H_eff dt).  Validation-only (ensemble averages).

Every trajectory owns a counter-based noise stream keyed by
(master seed, trajectory index), so results are reproducible and
independent of how trajectories are batched or threaded.  Within one
trajectory the stream is consumed in (step, channel) row-major order for
the diffusive scheme and one uniform per step for the jump scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from numba import njit, prange

from .hilbert import DensityMatrix, StateVector, annihilation
from .lindblad import LindbladModel

#: Pre-normalization norm below which a trajectory is considered lost.
NORM_COLLAPSE = 1e-6

#: Maximum allowed per-step total jump probability.
MAX_JUMP_PROB = 0.1


class NormCollapseError(RuntimeError):
    """The pre-normalization state norm collapsed; dt is far too large."""


class TruncationLeakError(RuntimeError):
    """Top Fock level population exceeded the configured leak tolerance."""


class StepSizeError(ValueError):
    """Jump probability per step too large for the requested dt."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    scheme: str = "euler-maruyama"
    renormalize_every_step: bool = True
    truncation_leak_tol: float = 1e-3

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.scheme != "euler-maruyama":
            raise ValueError(f"unknown scheme {self.scheme!r}")


def default_dt(model: LindbladModel, omega_max: float | None = None,
               budget: float = 1e-2) -> float:
    """dt such that dt * max(frequencies, summed dissipation norms) <= budget."""
    rate = sum(
        np.linalg.norm(L.matrix.conj().T @ L.matrix, ord=2)
        for L in model.lindblad_ops
    )
    if omega_max is None:
        omega_max = np.linalg.norm(model.H.matrix, ord=2)
    return budget / max(abs(omega_max), rate)


class NoiseStream:
    """Per-trajectory Gaussian/uniform variate stream (Philox, counter-based)."""

    def __init__(self, seed: int, trajectory_index: int):
        if seed < 0 or trajectory_index < 0:
            raise ValueError("seed and trajectory index must be >= 0")
        self.seed = int(seed)
        self.trajectory_index = int(trajectory_index)
        key = np.array([self.seed, self.trajectory_index], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def normal_block(self, n_steps: int, n_channels: int) -> np.ndarray:
        return self._gen.standard_normal((n_steps, n_channels))

    def uniform_block(self, n_steps: int) -> np.ndarray:
        return self._gen.random(n_steps)


def sample_initial(pi: DensityMatrix, noise: NoiseStream) -> StateVector:
    """Draw an eigenvector of pi with probability equal to its eigenvalue."""
    w, U = np.linalg.eigh(pi.matrix)
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    u = noise.uniform_block(1)[0]
    idx = int(np.searchsorted(np.cumsum(w), u))
    idx = min(idx, len(w) - 1)
    return StateVector.normalized(U[:, idx], pi.space)


# ---------------------------------------------------------------------------
# compiled model arrays and numba kernels


@dataclass(frozen=True)
class _Compiled:
    lind: np.ndarray          # (k, d, d) Lindblad operators
    minus_i_heff: np.ndarray  # (d, d): -iH - (1/2) sum L†L
    no_jump: np.ndarray       # (d, d): expm(-i H_eff dt)
    dt: float
    dims: tuple[int, ...]


def _compile(model: LindbladModel, dt: float) -> _Compiled:
    k = len(model.lindblad_ops)
    d = model.space.total_dim
    lind = np.empty((k, d, d), dtype=np.complex128)
    for i, L in enumerate(model.lindblad_ops):
        lind[i] = L.matrix
    ldl = sum(L.matrix.conj().T @ L.matrix for L in model.lindblad_ops)
    minus_i_heff = -1j * model.H.matrix - 0.5 * ldl
    no_jump = scipy.linalg.expm(minus_i_heff * dt)
    return _Compiled(lind=lind, minus_i_heff=minus_i_heff, no_jump=no_jump,
                     dt=dt, dims=model.space.dims)


@njit(parallel=True, cache=True)
def _diffusive_kernel(psi, lind, minus_i_heff, dW, dt, steps_per_sample,
                      snaps, xsnaps, fail):
    """Advance all trajectories by dW.shape[1] Euler-Maruyama steps.

    psi: (n, d) in/out.  dW: (n, steps, k) pre-scaled by sqrt(dt).
    snaps/xsnaps: (n_snap, n, d) / (n_snap, n, k) written every
    steps_per_sample steps.  fail: (n,) 0 ok / 1 norm collapse.
    """
    n, d = psi.shape
    k = lind.shape[0]
    steps = dW.shape[1]
    for i in prange(n):
        if fail[i] != 0:
            continue
        p = psi[i].copy()
        lp = np.empty((k, d), np.complex128)
        x = np.empty(k, np.float64)
        new = np.empty(d, np.complex128)
        sidx = 0
        for s in range(steps):
            for c in range(k):
                xv = 0.0
                for a in range(d):
                    acc = 0.0 + 0.0j
                    for b in range(d):
                        acc += lind[c, a, b] * p[b]
                    lp[c, a] = acc
                    xv += (np.conj(p[a]) * acc).real
                x[c] = 2.0 * xv
            x2s = 0.0
            for c in range(k):
                x2s += x[c] * x[c]
            for a in range(d):
                acc = 0.0 + 0.0j
                for b in range(d):
                    acc += minus_i_heff[a, b] * p[b]
                for c in range(k):
                    acc += 0.5 * x[c] * lp[c, a]
                acc -= 0.125 * x2s * p[a]
                st = 0.0 + 0.0j
                for c in range(k):
                    st += dW[i, s, c] * (lp[c, a] - 0.5 * x[c] * p[a])
                new[a] = p[a] + dt * acc + st
            nrm = 0.0
            for a in range(d):
                nrm += (np.conj(new[a]) * new[a]).real
            nrm = np.sqrt(nrm)
            if nrm < NORM_COLLAPSE:
                fail[i] = 1
                break
            for a in range(d):
                p[a] = new[a] / nrm
            if (s + 1) % steps_per_sample == 0:
                for a in range(d):
                    snaps[sidx, i, a] = p[a]
                for c in range(k):
                    xsnaps[sidx, i, c] = x[c]
                sidx += 1
        psi[i] = p


@njit(parallel=True, cache=True)
def _jump_kernel(psi, lind, no_jump, uniforms, dt, steps_per_sample,
                 snaps, fail):
    """Advance all trajectories by uniforms.shape[1] jump-unraveling steps.

    fail: 0 ok / 1 norm collapse / 2 jump probability > MAX_JUMP_PROB.
    """
    n, d = psi.shape
    k = lind.shape[0]
    steps = uniforms.shape[1]
    for i in prange(n):
        if fail[i] != 0:
            continue
        p = psi[i].copy()
        lp = np.empty((k, d), np.complex128)
        prob = np.empty(k, np.float64)
        new = np.empty(d, np.complex128)
        sidx = 0
        for s in range(steps):
            total = 0.0
            for c in range(k):
                nv = 0.0
                for a in range(d):
                    acc = 0.0 + 0.0j
                    for b in range(d):
                        acc += lind[c, a, b] * p[b]
                    lp[c, a] = acc
                    nv += (np.conj(acc) * acc).real
                prob[c] = dt * nv
                total += prob[c]
            if total > MAX_JUMP_PROB:
                fail[i] = 2
                break
            u = uniforms[i, s]
            if u < total:
                acc_p = 0.0
                chan = k - 1
                for c in range(k):
                    acc_p += prob[c]
                    if u < acc_p:
                        chan = c
                        break
                for a in range(d):
                    new[a] = lp[chan, a]
            else:
                for a in range(d):
                    acc = 0.0 + 0.0j
                    for b in range(d):
                        acc += no_jump[a, b] * p[b]
                    new[a] = acc
            nrm = 0.0
            for a in range(d):
                nrm += (np.conj(new[a]) * new[a]).real
            nrm = np.sqrt(nrm)
            if nrm < NORM_COLLAPSE:
                fail[i] = 1
                break
            for a in range(d):
                p[a] = new[a] / nrm
            if (s + 1) % steps_per_sample == 0:
                for a in range(d):
                    snaps[sidx, i, a] = p[a]
                sidx += 1
        psi[i] = p


# ---------------------------------------------------------------------------
# public single-step API


def step_diffusive(psi: StateVector, model: LindbladModel,
                   cfg: IntegratorConfig, noise: NoiseStream
                   ) -> tuple[StateVector, np.ndarray]:
    """One Euler-Maruyama step; returns the new state and the 5 currents."""
    comp = _compile(model, cfg.dt)
    k = comp.lind.shape[0]
    dW = noise.normal_block(1, k)[0] * math.sqrt(cfg.dt)
    v = psi.amplitudes
    lp = comp.lind @ v                       # (k, d)
    x = 2.0 * np.einsum("i,ki->k", v.conj(), lp).real
    drift = comp.minus_i_heff @ v + 0.5 * (x @ lp) - 0.125 * (x @ x) * v
    stoch = dW @ lp - 0.5 * (dW @ x) * v
    new = v + cfg.dt * drift + stoch
    nrm = np.linalg.norm(new)
    if nrm < NORM_COLLAPSE:
        raise NormCollapseError(
            f"pre-normalization norm {nrm:.3e} below {NORM_COLLAPSE:.0e}"
        )
    currents = x + dW / cfg.dt
    return StateVector(new / nrm, psi.space), currents


def step_jump(psi: StateVector, model: LindbladModel,
              cfg: IntegratorConfig, noise: NoiseStream) -> StateVector:
    """One jump-unraveling step: Poissonian jump or exact no-jump evolution."""
    comp = _compile(model, cfg.dt)
    v = psi.amplitudes
    lp = comp.lind @ v
    prob = cfg.dt * np.einsum("ki,ki->k", lp.conj(), lp).real
    total = prob.sum()
    if total > MAX_JUMP_PROB:
        raise StepSizeError(
            f"total jump probability {total:.3f} > {MAX_JUMP_PROB}; reduce dt"
        )
    u = noise.uniform_block(1)[0]
    if u < total:
        chan = int(np.searchsorted(np.cumsum(prob), u))
        new = lp[chan]
    else:
        new = comp.no_jump @ v
    nrm = np.linalg.norm(new)
    if nrm < NORM_COLLAPSE:
        raise NormCollapseError(
            f"pre-normalization norm {nrm:.3e} below {NORM_COLLAPSE:.0e}"
        )
    return StateVector(new / nrm, psi.space)


# ---------------------------------------------------------------------------
# batched driver


def integrate_batch(model: LindbladModel, cfg: IntegratorConfig,
                    psis: np.ndarray, streams: list[NoiseStream],
                    n_steps: int, steps_per_sample: int,
                    scheme: str = "diffusive", block_samples: int = 80):
    """Iterate snapshot blocks for a batch of trajectories.

    psis (n, d) is advanced in place.  Yields (sample_offset, snaps, xsnaps,
    fail) where snaps has shape (n_block_samples, n, d), xsnaps the pre-step
    quadrature expectations at the sampled steps (diffusive scheme; None for
    jumps) and fail the per-trajectory failure codes so far.  Failed
    trajectories stop evolving but the batch continues.
    """
    if scheme not in ("diffusive", "jump"):
        raise ValueError(f"unknown scheme {scheme!r}")
    n, d = psis.shape
    if len(streams) != n:
        raise ValueError("one noise stream per trajectory required")
    comp = _compile(model, cfg.dt)
    k = comp.lind.shape[0]
    fail = np.zeros(n, dtype=np.uint8)
    block_steps = steps_per_sample * block_samples
    done = 0
    sample_offset = 0
    while done < n_steps:
        steps = min(block_steps, n_steps - done)
        # trailing partial block: keep whole samples only
        n_snap = steps // steps_per_sample
        steps = n_snap * steps_per_sample
        if steps == 0:
            break
        snaps = np.empty((n_snap, n, d), dtype=np.complex128)
        if scheme == "diffusive":
            dW = np.empty((n, steps, k))
            sq = math.sqrt(cfg.dt)
            for i, st in enumerate(streams):
                dW[i] = st.normal_block(steps, k) * sq
            xsnaps = np.empty((n_snap, n, k))
            _diffusive_kernel(psis, comp.lind, comp.minus_i_heff, dW, cfg.dt,
                              steps_per_sample, snaps, xsnaps, fail)
            dw_samples = dW[:, steps_per_sample - 1::steps_per_sample, :]
            yield sample_offset, snaps, xsnaps, dw_samples, fail
        else:
            uni = np.empty((n, steps))
            for i, st in enumerate(streams):
                uni[i] = st.uniform_block(steps)
            _jump_kernel(psis, comp.lind, comp.no_jump, uni, cfg.dt,
                         steps_per_sample, snaps, fail)
            yield sample_offset, snaps, None, None, fail
        done += steps
        sample_offset += n_snap


def check_truncation_leak(snaps: np.ndarray, dims: tuple[int, ...],
                          tol: float):
    """Raise when any sampled state leaks into a top Fock level beyond tol."""
    if all(d == 2 for d in dims):
        return
    t = snaps.reshape(snaps.shape[:-1] + tuple(dims))
    for axis, d in enumerate(dims):
        top = np.take(t, d - 1, axis=snaps.ndim - 1 + axis)
        pop = (np.abs(top) ** 2).reshape(top.shape[:snaps.ndim - 1] + (-1,)).sum(-1)
        if pop.max() > tol:
            raise TruncationLeakError(
                f"top-level population {pop.max():.3e} of factor {axis + 1} "
                f"exceeds leak tolerance {tol:.1e}; increase the truncation"
            )


# ---------------------------------------------------------------------------
# single-trajectory record


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled observables along one trajectory.

    currents rows are NaN where not defined (the initial sample, and all
    rows for the jump scheme).
    """

    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    c: np.ndarray                 # complex; NaN where undefined
    entropy: np.ndarray
    currents: np.ndarray | None   # (n_samples, k)
    final_state: StateVector

    @property
    def n_samples(self) -> int:
        return len(self.times)


def run_trajectory(model: LindbladModel, psi0: StateVector, total_time: float,
                   sample_interval: float, cfg: IntegratorConfig,
                   noise: NoiseStream, scheme: str = "diffusive",
                   record_currents: bool = True) -> TrajectoryRecord:
    """Integrate one trajectory and record observables at sample instants."""
    from . import metrics  # local import to avoid a cycle at module load

    if total_time < 0:
        raise ValueError("total_time must be >= 0")
    if sample_interval < cfg.dt:
        raise ValueError("sample_interval must be >= dt")
    dims = model.space.dims
    steps_per_sample = max(1, int(round(sample_interval / cfg.dt)))
    n_steps = int(round(total_time / cfg.dt))
    n_samples = n_steps // steps_per_sample

    psis = psi0.amplitudes[None, :].copy()
    k = len(model.lindblad_ops)
    states = np.empty((n_samples + 1, psis.shape[1]), dtype=np.complex128)
    states[0] = psis[0]
    currents = np.full((n_samples + 1, k), np.nan) if (
        record_currents and scheme == "diffusive") else None

    for off, snaps, xs, dws, fail in integrate_batch(
            model, cfg, psis, [noise], n_steps, steps_per_sample, scheme):
        if fail[0] == 1:
            raise NormCollapseError("trajectory aborted: norm collapse")
        if fail[0] == 2:
            raise StepSizeError("total jump probability exceeded; reduce dt")
        check_truncation_leak(snaps, dims, cfg.truncation_leak_tol)
        ns = snaps.shape[0]
        states[1 + off:1 + off + ns] = snaps[:, 0, :]
        if currents is not None:
            currents[1 + off:1 + off + ns] = xs[:, 0, :] + dws[0] / cfg.dt

    times = np.arange(n_samples + 1) * (steps_per_sample * cfg.dt)
    a1 = annihilation(model.space, 1).matrix
    a2 = annihilation(model.space, 2).matrix
    e1 = np.einsum("ni,ij,nj->n", states.conj(), a1, states)
    e2 = np.einsum("ni,ij,nj->n", states.conj(), a2, states)
    x1 = math.sqrt(2.0) * e1.real
    x2 = math.sqrt(2.0) * e2.real
    c = metrics.correlator_batch(states, dims)
    entropy = metrics.entropy_batch(states, dims)
    return TrajectoryRecord(
        times=times, x1=x1, x2=x2, c=c, entropy=entropy, currents=currents,
        final_state=StateVector.normalized(states[-1], model.space),
    )


# ---------------------------------------------------------------------------
# raw binary dump (little-endian float64 payload)

_RAW_MAGIC = b"VDPTRAJ1"


def write_raw_record(record: TrajectoryRecord, path):
    """Binary dump: magic, counts, then LE float64 arrays.

    Layout: 8-byte magic, uint32 n_samples, uint32 n_channels (0 when no
    currents), then times, x1, x2, Re c, Im c, entropy, currents
    (row-major), each as little-endian float64.
    """
    ns = record.n_samples
    k = 0 if record.currents is None else record.currents.shape[1]
    with open(path, "wb") as f:
        f.write(_RAW_MAGIC)
        f.write(np.array([ns, k], dtype="<u4").tobytes())
        for arr in (record.times, record.x1, record.x2,
                    record.c.real, record.c.imag, record.entropy):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if k:
            f.write(np.ascontiguousarray(record.currents, dtype="<f8").tobytes())


def read_raw_record(path) -> dict:
    """Read back a raw dump as a dict of arrays."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _RAW_MAGIC:
            raise ValueError("not a raw trajectory dump")
        ns, k = np.frombuffer(f.read(8), dtype="<u4")
        ns, k = int(ns), int(k)
        data = np.frombuffer(f.read(), dtype="<f8")
    fields = ["times", "x1", "x2", "c_real", "c_imag", "entropy"]
    out = {}
    for i, name in enumerate(fields):
        out[name] = data[i * ns:(i + 1) * ns].copy()
    if k:
        out["currents"] = data[len(fields) * ns:len(fields) * ns + ns * k].reshape(ns, k).copy()
    out["c"] = out.pop("c_real") + 1j * out.pop("c_imag")
    return out
