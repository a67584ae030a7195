"""Monte Carlo over trajectories: distributions, summaries and sweeps.

Trajectories are integrated in fixed-size chunks by the batched kernels in
`sse`; every trajectory owns a (master_seed, index)-keyed noise stream, so
results are bitwise reproducible for a given seed regardless of chunking
or thread count.  Per-trajectory indicators are the time averages past the
burn-in; distributions are over trajectories.

Phase-variance convention: Var[delta_phi] is the linear variance of the
per-trajectory circular means re-wrapped into (theta - pi, theta + pi].
This choice is recorded in the output metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .hilbert import DensityMatrix, StateVector, annihilation
from .lindblad import LindbladModel, VdpParams, steady_state_numeric, \
    correlator_steady, steady_phase_difference, classical_tongue
from .sse import (
    IntegratorConfig,
    NoiseStream,
    check_truncation_leak,
    default_dt,
    integrate_batch,
    sample_initial,
)

PHASE_VARIANCE_CONVENTION = (
    "linear variance of per-trajectory circular-mean phase differences "
    "re-wrapped into (theta - pi, theta + pi]"
)


class EnsembleError(RuntimeError):
    """Too many trajectories failed to produce usable statistics."""


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble run configuration; None fields resolve to model defaults."""

    n_trajectories: int = 1000
    master_seed: int = 0
    total_time: float | None = None
    burn_in: float | None = None
    sample_interval: float = 0.01
    dt: float | None = None
    pearson_window: float | None = None
    scheme: str = "diffusive"
    chunk_size: int = 250
    n_threads: int = 1
    bins: int = 40
    entropy_tail_threshold: float = 0.5
    averaging_time: float = 50.0
    truncation_leak_tol: float = 1e-3
    failure_budget: float = 0.01

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.burn_in is not None and self.total_time is not None \
                and self.burn_in >= self.total_time:
            raise ValueError("burn_in must be < total_time")

    def resolve(self, params: VdpParams, model: LindbladModel) -> "EnsembleConfig":
        """Fill every None field with its parameter-dependent default."""
        dt = self.dt
        if dt is None:
            dt = default_dt(model, omega_max=max(abs(params.omega1),
                                                 abs(params.omega2)))
        burn = self.burn_in
        if burn is None:
            burn = 10.0 / (3 * params.gamma_up_1 + params.V)
        total = self.total_time
        if total is None:
            total = burn + self.averaging_time
        window = self.pearson_window
        if window is None:
            window = 8 * math.pi / params.omega1
        if burn >= total:
            raise ValueError(
                f"burn_in {burn} must be < total_time {total}")
        return replace(self, dt=dt, burn_in=burn, total_time=total,
                       pearson_window=window)


@dataclass(frozen=True)
class Histogram:
    """Uniform-bin density histogram with explicit exclusion accounting."""

    edges: np.ndarray
    counts: np.ndarray
    total: int
    excluded: int

    @property
    def density(self) -> np.ndarray:
        widths = np.diff(self.edges)
        if self.total == 0:
            return np.zeros_like(widths)
        return self.counts / (self.total * widths)

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2

    @property
    def mode_center(self) -> float:
        return float(self.centers[int(np.argmax(self.counts))])


def histogram(samples, bins: int, range_: tuple[float, float]) -> Histogram:
    """Density histogram; NaN and out-of-range samples are counted excluded."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = range_
    if not hi > lo:
        raise ValueError("empty histogram range")
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample set")
    ok = ~np.isnan(samples)
    vals = samples[ok]
    in_range = (vals >= lo) & (vals <= hi)
    counts, edges = np.histogram(vals[in_range], bins=bins, range=(lo, hi))
    return Histogram(edges=edges, counts=counts, total=int(counts.sum()),
                     excluded=int(samples.size - counts.sum()))


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    variance: float
    std_error: float
    tail_mass: float | None = None


def summarize(samples, tail_threshold: float | None = None) -> Summary:
    """Mean, unbiased variance, standard error, optional upper tail mass."""
    samples = np.asarray(samples, dtype=float)
    samples = samples[~np.isnan(samples)]
    if samples.size < 2:
        raise ValueError("need at least 2 defined samples")
    var = float(samples.var(ddof=1))
    tail = None
    if tail_threshold is not None:
        tail = float((samples > tail_threshold).mean())
    return Summary(n=int(samples.size), mean=float(samples.mean()),
                   variance=var, std_error=math.sqrt(var / samples.size),
                   tail_mass=tail)


def _summarize_traj(samples, tail_threshold: float | None = None) -> Summary:
    """Like summarize, but a single trajectory yields zero variance."""
    arr = np.asarray(samples, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 1:
        tail = None
        if tail_threshold is not None:
            tail = float((arr > tail_threshold).mean())
        return Summary(n=1, mean=float(arr[0]), variance=0.0, std_error=0.0,
                       tail_mass=tail)
    return summarize(samples, tail_threshold)


@dataclass(frozen=True)
class EnsembleResult:
    """Per-trajectory time-averaged indicators plus derived statistics."""

    delta_phi: np.ndarray
    c_abs: np.ndarray
    c_mean: np.ndarray            # complex time-averaged correlator per trajectory
    pearson: np.ndarray
    entropy: np.ndarray
    failed_indices: tuple[int, ...]
    n_excluded_c: int
    n_excluded_r: int
    histograms: dict[str, Histogram]
    summaries: dict[str, Summary]
    config: EnsembleConfig
    params: VdpParams
    metadata: dict = field(default_factory=dict)

    @property
    def scatter(self) -> tuple[np.ndarray, np.ndarray]:
        """(delta_phi, entropy) pairs, one per surviving trajectory."""
        ok = ~np.isnan(self.delta_phi)
        return self.delta_phi[ok], self.entropy[ok]


class _ChunkAccumulator:
    """Online per-trajectory accumulation of time-averaged indicators."""

    def __init__(self, n: int, pearson_samples: int):
        self.sum_absc = np.zeros(n)
        self.sum_phasor = np.zeros(n, dtype=np.complex128)
        self.sum_c = np.zeros(n, dtype=np.complex128)
        self.cnt_c = np.zeros(n, dtype=np.int64)
        self.excl_c = np.zeros(n, dtype=np.int64)
        self.sum_s = np.zeros(n)
        self.cnt_s = np.zeros(n, dtype=np.int64)
        self.sum_r = np.zeros(n)
        self.cnt_r = np.zeros(n, dtype=np.int64)
        self.excl_r = np.zeros(n, dtype=np.int64)
        w = pearson_samples
        self.w = w
        self.buf1 = np.zeros((w, n))
        self.buf2 = np.zeros((w, n))
        self.pos = 0
        self.filled = 0
        self.s1 = np.zeros(n)
        self.s2 = np.zeros(n)
        self.s11 = np.zeros(n)
        self.s22 = np.zeros(n)
        self.s12 = np.zeros(n)

    def push_positions(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray | None:
        """Slide the Pearson window; return r per trajectory once full."""
        if self.filled == self.w:
            o1 = self.buf1[self.pos]
            o2 = self.buf2[self.pos]
            self.s1 -= o1
            self.s2 -= o2
            self.s11 -= o1 * o1
            self.s22 -= o2 * o2
            self.s12 -= o1 * o2
        else:
            self.filled += 1
        self.buf1[self.pos] = x1
        self.buf2[self.pos] = x2
        self.s1 += x1
        self.s2 += x2
        self.s11 += x1 * x1
        self.s22 += x2 * x2
        self.s12 += x1 * x2
        self.pos = (self.pos + 1) % self.w
        if self.filled < self.w:
            return None
        w = self.w
        va = self.s11 - self.s1 * self.s1 / w
        vb = self.s22 - self.s2 * self.s2 / w
        cov = self.s12 - self.s1 * self.s2 / w
        r = np.full(len(va), np.nan)
        ok = (va > 1e-13) & (vb > 1e-13)
        r[ok] = cov[ok] / np.sqrt(va[ok] * vb[ok])
        return r

    def add_indicators(self, c: np.ndarray, entropy: np.ndarray):
        ok = ~np.isnan(c.real)
        absc = np.where(ok, np.abs(c), 0.0)
        self.sum_absc += absc
        self.sum_c += np.where(ok, c, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            phasor = np.where(ok & (absc > 0), c / np.where(absc > 0, absc, 1.0), 0.0)
        self.sum_phasor += phasor
        self.cnt_c += ok
        self.excl_c += ~ok
        self.sum_s += entropy
        self.cnt_s += 1

    def add_pearson(self, r: np.ndarray):
        ok = ~np.isnan(r)
        self.sum_r += np.where(ok, r, 0.0)
        self.cnt_r += ok
        self.excl_r += ~ok


def _run_chunk(model: LindbladModel, params: VdpParams, cfg: EnsembleConfig,
               indices: np.ndarray, pi: DensityMatrix):
    """Integrate one chunk of trajectories and return per-trajectory averages."""
    n = len(indices)
    d = model.space.total_dim
    dims = model.space.dims
    icfg = IntegratorConfig(dt=cfg.dt, truncation_leak_tol=cfg.truncation_leak_tol)
    streams = [NoiseStream(cfg.master_seed, int(i)) for i in indices]
    psis = np.empty((n, d), dtype=np.complex128)
    for j, st in enumerate(streams):
        psis[j] = sample_initial(pi, st).amplitudes

    sps = max(1, int(round(cfg.sample_interval / cfg.dt)))
    sample_dt = sps * cfg.dt
    n_steps = int(round(cfg.total_time / cfg.dt))
    w = max(2, int(round(cfg.pearson_window / sample_dt)) + 1)
    acc = _ChunkAccumulator(n, w)
    a1 = annihilation(model.space, 1).matrix
    a2 = annihilation(model.space, 2).matrix
    half_w = (w - 1) / 2 * sample_dt

    final_fail = np.zeros(n, dtype=np.uint8)
    for off, snaps, xs, dws, fail in integrate_batch(
            model, icfg, psis, streams, n_steps, sps,
            scheme=cfg.scheme):
        final_fail = fail
        check_truncation_leak(snaps, dims, cfg.truncation_leak_tol)
        ns = snaps.shape[0]
        t_samples = (off + 1 + np.arange(ns)) * sample_dt
        # quadratures for every sample (the Pearson window straddles burn-in)
        e1 = np.einsum("sni,ij,snj->sn", snaps.conj(), a1, snaps).real
        e2 = np.einsum("sni,ij,snj->sn", snaps.conj(), a2, snaps).real
        x1 = math.sqrt(2.0) * e1
        x2 = math.sqrt(2.0) * e2
        for s in range(ns):
            r = acc.push_positions(x1[s], x2[s])
            if r is not None and t_samples[s] - half_w > cfg.burn_in:
                acc.add_pearson(r)
        post = t_samples > cfg.burn_in
        if np.any(post):
            sel = snaps[post]
            c = metrics.correlator_batch(sel, dims)
            entropy = metrics.entropy_batch(sel, dims)
            for s in range(c.shape[0]):
                acc.add_indicators(c[s], entropy[s])

    ok = (final_fail == 0) & (acc.cnt_c > 0)
    out = {}
    with np.errstate(invalid="ignore", divide="ignore"):
        out["c_abs"] = np.where(ok, acc.sum_absc / acc.cnt_c, np.nan)
        out["c_mean"] = np.where(ok, acc.sum_c / np.maximum(acc.cnt_c, 1),
                                 np.nan + 0j)
        phasor = np.where(ok, acc.sum_phasor, np.nan + 0j)
        out["delta_phi"] = np.where(ok, np.angle(phasor), np.nan)
        out["entropy"] = np.where(ok, acc.sum_s / np.maximum(acc.cnt_s, 1), np.nan)
        out["pearson"] = np.where(ok & (acc.cnt_r > 0),
                                  acc.sum_r / np.maximum(acc.cnt_r, 1), np.nan)
    out["failed"] = indices[~ok]
    out["n_excluded_c"] = int(acc.excl_c[ok].sum())
    out["n_excluded_r"] = int(acc.excl_r[ok].sum())
    return out


def _entropy_range(model: LindbladModel) -> tuple[float, float]:
    return (0.0, math.log(min(model.space.dims)))


def run_ensemble(model: LindbladModel, params: VdpParams,
                 cfg: EnsembleConfig) -> EnsembleResult:
    """Integrate the full ensemble and build distributions and summaries."""
    cfg = cfg.resolve(params, model)
    _set_threads(cfg.n_threads)
    pi = steady_state_numeric(model)
    n = cfg.n_trajectories
    parts = {k: [] for k in ("delta_phi", "c_abs", "c_mean", "pearson", "entropy")}
    failed: list[int] = []
    n_excl_c = 0
    n_excl_r = 0
    for lo in range(0, n, cfg.chunk_size):
        idx = np.arange(lo, min(lo + cfg.chunk_size, n))
        out = _run_chunk(model, params, cfg, idx, pi)
        for k in parts:
            parts[k].append(out[k])
        failed.extend(int(i) for i in out["failed"])
        n_excl_c += out["n_excluded_c"]
        n_excl_r += out["n_excluded_r"]

    delta_phi = np.concatenate(parts["delta_phi"])
    c_abs = np.concatenate(parts["c_abs"])
    c_mean = np.concatenate(parts["c_mean"])
    pearson = np.concatenate(parts["pearson"])
    entropy = np.concatenate(parts["entropy"])
    if len(failed) > cfg.failure_budget * n:
        raise EnsembleError(
            f"{len(failed)}/{n} trajectories failed (budget "
            f"{cfg.failure_budget:.0%}); indices {failed[:10]}..."
        )

    s_range = _entropy_range(model)
    hists = {
        "delta_phi": histogram(delta_phi, cfg.bins, (-math.pi, math.pi)),
        "c_abs": histogram(c_abs, cfg.bins, (0.0, 1.0)),
        "pearson": histogram(pearson, cfg.bins, (-1.0, 1.0)),
        "entropy": histogram(entropy, cfg.bins, s_range),
    }
    wrapped = metrics.wrap_to(delta_phi, params.theta)
    summaries = {
        "delta_phi": _summarize_traj(wrapped),
        "c_abs": _summarize_traj(c_abs),
        "pearson": _summarize_traj(pearson),
        "entropy": _summarize_traj(entropy,
                                   tail_threshold=cfg.entropy_tail_threshold),
    }
    ok = ~np.isnan(delta_phi)
    meta = {
        "phase_variance_convention": PHASE_VARIANCE_CONVENTION,
        "delta_phi_circular_mean": metrics.circular_mean(delta_phi[ok]),
        "n_failed": len(failed),
    }
    return EnsembleResult(
        delta_phi=delta_phi, c_abs=c_abs, c_mean=c_mean, pearson=pearson,
        entropy=entropy, failed_indices=tuple(failed),
        n_excluded_c=n_excl_c, n_excluded_r=n_excl_r,
        histograms=hists, summaries=summaries, config=cfg, params=params,
        metadata=meta,
    )


def ensemble_mean_state(model: LindbladModel, cfg: EnsembleConfig,
                        times, psi0: StateVector | None = None,
                        scheme: str | None = None,
                        return_projectors: bool = False):
    """Mean conditioned projector over trajectories at the requested times.

    Returns a list of DensityMatrix (one per time), or with
    return_projectors=True additionally the per-trajectory projectors of
    shape (n_times, n, d, d) for subset analyses.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be nonnegative and strictly increasing")
    if cfg.dt is None:
        raise ValueError("ensemble_mean_state needs an explicit dt")
    scheme = scheme or cfg.scheme
    _set_threads(cfg.n_threads)
    icfg = IntegratorConfig(dt=cfg.dt, truncation_leak_tol=cfg.truncation_leak_tol)
    n = cfg.n_trajectories
    d = model.space.total_dim
    step_targets = [int(round(t / cfg.dt)) for t in times]

    projectors = np.full((len(times), n, d, d), np.nan, dtype=np.complex128)
    all_fail = np.zeros(n, dtype=np.uint8)
    for lo in range(0, n, cfg.chunk_size):
        idx = np.arange(lo, min(lo + cfg.chunk_size, n))
        streams = [NoiseStream(cfg.master_seed, int(i)) for i in idx]
        if psi0 is not None:
            psis = np.tile(psi0.amplitudes, (len(idx), 1))
        else:
            pi = steady_state_numeric(model)
            psis = np.stack([sample_initial(pi, st).amplitudes for st in streams])
        prev = 0
        for ti, target in enumerate(step_targets):
            seg = target - prev
            fail = np.zeros(len(idx), dtype=np.uint8)
            if seg > 0:
                for _, snaps, _, _, fail in integrate_batch(
                        model, icfg, psis, streams, seg, seg, scheme=scheme):
                    pass
            okm = fail == 0
            projectors[ti, idx[okm]] = np.einsum(
                "ni,nj->nij", psis[okm], psis[okm].conj())
            all_fail[idx[~okm]] = np.maximum(all_fail[idx[~okm]], fail[~okm])
            prev = target
    means = []
    for ti in range(len(times)):
        ok = all_fail == 0
        mean = projectors[ti, ok].mean(axis=0)
        mean = (mean + mean.conj().T) / 2
        w, U = np.linalg.eigh(mean)
        w = np.clip(w, 0.0, None)
        mean = (U * w) @ U.conj().T
        mean /= np.trace(mean).real
        means.append(DensityMatrix(mean, model.space))
    if return_projectors:
        return means, projectors
    return means


@dataclass(frozen=True)
class SweepPoint:
    delta_omega: float
    V: float
    theta: float
    c_pi_abs: float
    delta_phi_pi: float
    tongue_V: float
    var_delta_phi: float | None = None
    var_c_abs: float | None = None
    var_entropy: float | None = None
    entropy_tail_mass: float | None = None
    mean_c_abs: float | None = None
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    config: EnsembleConfig
    base_params: VdpParams


def sweep(base_params: VdpParams, grid, cfg: EnsembleConfig,
          run_trajectories: bool = True,
          model_builder=None) -> SweepResult:
    """Evaluate analytic overlays (and optionally ensembles) over a grid.

    grid: iterable of dicts with keys delta_omega, V and optional theta.
    Per-point trajectory failures are recorded, the sweep continues.
    """
    from .lindblad import build_vdp_model
    grid = list(grid)
    if not grid:
        raise ValueError("empty sweep grid")
    builder = model_builder or build_vdp_model
    points = []
    for g in grid:
        dw = float(g["delta_omega"])
        V = float(g["V"])
        theta = float(g.get("theta", base_params.theta))
        p = replace(base_params, omega2=base_params.omega1 + dw, V=V, theta=theta)
        kw = dict(
            delta_omega=dw, V=V, theta=theta,
            c_pi_abs=abs(correlator_steady(p)),
            delta_phi_pi=steady_phase_difference(p),
            tongue_V=classical_tongue(dw),
        )
        if run_trajectories:
            try:
                model = builder(p)
                res = run_ensemble(model, p, cfg)
                kw.update(
                    var_delta_phi=res.summaries["delta_phi"].variance,
                    var_c_abs=res.summaries["c_abs"].variance,
                    var_entropy=res.summaries["entropy"].variance,
                    entropy_tail_mass=res.summaries["entropy"].tail_mass,
                    mean_c_abs=res.summaries["c_abs"].mean,
                )
            except (EnsembleError, RuntimeError, ValueError) as exc:
                kw["error"] = str(exc)
        points.append(SweepPoint(**kw))
    return SweepResult(points=tuple(points), config=cfg, base_params=base_params)


def _set_threads(n: int):
    if n and n > 0:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
