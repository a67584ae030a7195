"""Command-line front end emitting plot-ready CSV/JSON.

Subcommands: steady | trajectory | ensemble | sweep.  Rates (V,
delta_omega, gamma_down) are given in units of gamma_up unless
absolute_rates is set.  Every output file embeds the resolved
configuration and master seed so a run can be reproduced from its own
metadata.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import (
    EnsembleConfig,
    EnsembleError,
    PHASE_VARIANCE_CONVENTION,
    run_ensemble,
    sweep,
)
from .hilbert import FockSpace
from .lindblad import (
    DegenerateSteadyStateError,
    VdpParams,
    analytic_steady_state,
    build_vdp_model,
    classical_tongue,
    correlator_steady,
    marginal_excitation,
    steady_phase_difference,
    steady_state_numeric,
)
from .metrics import pearson_series
from .sse import (
    IntegratorConfig,
    NoiseStream,
    NormCollapseError,
    StepSizeError,
    TruncationLeakError,
    default_dt,
    run_trajectory,
    sample_initial,
)


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run configuration (physics + ensemble + output)."""

    # physics; V / delta_omega / gamma_down in units of gamma_up by default
    gamma_up: float = 0.01
    gamma_up_2: float | None = None
    V: float = 10.0
    delta_omega: float = 0.1
    theta: float = 0.0
    omega1: float = 8 * math.pi
    absolute_rates: bool = False
    mode: str = "quantum-limit"          # or "finite-truncation"
    fock_dim: int = 4
    gamma_down: float = 1000.0

    # ensemble / integration
    n_trajectories: int = 1000
    seed: int = 0
    total_time: float | None = None
    burn_in: float | None = None
    sample_interval: float = 0.01
    dt: float | None = None
    pearson_window: float | None = None
    scheme: str = "diffusive"
    threads: int = 1
    bins: int = 40

    # sweep / multi-point runs: list of {delta_omega, V, [theta]} dicts,
    # in the same units as the scalar fields
    points: tuple = ()
    analytic_only: bool = False

    # output
    out: str = "out"
    format: str = "csv"

    def __post_init__(self):
        if self.gamma_up < 0:
            raise ConfigError("gamma_up must be >= 0")
        if self.gamma_up_2 is not None and self.gamma_up_2 < 0:
            raise ConfigError("gamma_up_2 must be >= 0")
        if self.V < 0:
            raise ConfigError("V must be >= 0")
        if self.gamma_down < 0:
            raise ConfigError("gamma_down must be >= 0")
        if self.mode not in ("quantum-limit", "finite-truncation"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "finite-truncation" and self.fock_dim < 2:
            raise ConfigError("fock_dim must be >= 2")
        if self.scheme not in ("diffusive", "jump"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")

    def _scale(self) -> float:
        return 1.0 if self.absolute_rates else self.gamma_up

    def to_params(self, delta_omega: float | None = None, V: float | None = None,
                  theta: float | None = None) -> VdpParams:
        s = self._scale()
        dw = (self.delta_omega if delta_omega is None else delta_omega) * s
        v = (self.V if V is None else V) * s
        th = self.theta if theta is None else theta
        g2 = self.gamma_up if self.gamma_up_2 is None else self.gamma_up_2
        gd = math.inf if self.mode == "quantum-limit" else self.gamma_down * s
        return VdpParams(
            omega1=self.omega1, omega2=self.omega1 + dw,
            gamma_up_1=self.gamma_up, gamma_up_2=g2, V=v, theta=th,
            gamma_down_1=gd, gamma_down_2=gd,
        )

    def build_model(self, params: VdpParams):
        if params.quantum_limit:
            return build_vdp_model(params)
        return build_vdp_model(params, FockSpace((self.fock_dim, self.fock_dim)))

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(
            n_trajectories=self.n_trajectories, master_seed=self.seed,
            total_time=self.total_time, burn_in=self.burn_in,
            sample_interval=self.sample_interval, dt=self.dt,
            pearson_window=self.pearson_window, scheme=self.scheme,
            n_threads=self.threads, bins=self.bins,
        )

    def grid(self) -> list[dict]:
        """Sweep points in absolute rate units."""
        s = self._scale()
        pts = []
        for p in self.points:
            unknown = set(p) - {"delta_omega", "V", "theta"}
            if unknown:
                raise ConfigError(f"unknown point keys {sorted(unknown)}")
            pt = {"delta_omega": float(p["delta_omega"]) * s,
                  "V": float(p["V"]) * s}
            if "theta" in p:
                pt["theta"] = float(p["theta"])
            pts.append(pt)
        return pts


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}

#: One preset per paper figure; values are RunConfig overrides with rates
#: in units of gamma_up.
PRESETS: dict[str, dict] = {
    "fig1": {"omega1": 2 * math.pi, "delta_omega": 0.1, "V": 10.0,
             "gamma_up": 0.01, "theta": 0.0},
    "fig2a": {"delta_omega": 1.0, "points": [
        {"delta_omega": 1.0, "V": 5.0}, {"delta_omega": 1.0, "V": 50.0}]},
    "fig2b": {"analytic_only": True, "points": [
        {"delta_omega": dw, "V": v}
        for dw in [round(x, 6) for x in np.linspace(-30, 30, 21)]
        for v in [round(x, 6) for x in np.linspace(0, 100, 21)]]},
    "fig2c": {"points": [{"delta_omega": 1.0, "V": v}
                         for v in (5.0, 20.0, 50.0, 100.0)]},
    "fig3": {"points": [{"delta_omega": 1.0, "V": 5.0},
                        {"delta_omega": 1.0, "V": 50.0}]},
    "figS1": {"points": [{"delta_omega": 1.0, "V": 100.0},
                         {"delta_omega": 1.0, "V": 5.0},
                         {"delta_omega": 20.0, "V": 20.0}]},
    "figS2a": {"points": [{"delta_omega": round(dw, 6), "V": 20.0}
                          for dw in np.linspace(-30, 30, 11)]},
    "figS2b": {"points": [{"delta_omega": 1.0, "V": 100.0, "theta": th}
                          for th in (0.0, math.pi / 3, math.pi / 2)]},
}


def parse_config(path: str | None = None, preset: str | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Merge defaults < config file < preset < explicit overrides."""
    merged: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(data)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    if overrides:
        merged.update(overrides)
    unknown = set(merged) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "points" in merged:
        merged["points"] = tuple(dict(p) for p in merged["points"])
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# output helpers


def _metadata(cfg: RunConfig, extra: dict | None = None) -> dict:
    meta = {
        "tool": f"vdpsync {__version__}",
        "config": dataclasses.asdict(cfg),
        "master_seed": cfg.seed,
        "phase_variance_convention": PHASE_VARIANCE_CONVENTION,
    }
    if extra:
        meta.update(extra)
    return meta


def _write_csv(path: Path, header: list[str], rows, meta: dict):
    with open(path, "w") as f:
        f.write("# " + json.dumps(meta, default=_json_default) + "\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_steady(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.to_params()
    written = []
    if cfg.mode != "quantum-limit":
        raise ConfigError("steady analytics require quantum-limit mode")
    pi = analytic_steady_state(params)
    c_pi = correlator_steady(params)
    payload = {
        "meta": _metadata(cfg),
        "params": dataclasses.asdict(params),
        "c_pi": c_pi,
        "c_pi_abs": abs(c_pi),
        "delta_phi_pi": steady_phase_difference(params),
        "marginal_excitation": marginal_excitation(params),
        "tongue_V": classical_tongue(params.delta_omega),
        "steady_state_real": pi.matrix.real,
        "steady_state_imag": pi.matrix.imag,
    }
    path = out / "steady.json"
    _write_json(path, payload)
    written.append(path)

    if cfg.points:
        rows = []
        for pt in cfg.grid():
            p = cfg.to_params(delta_omega=pt["delta_omega"] / cfg._scale(),
                              V=pt["V"] / cfg._scale(),
                              theta=pt.get("theta"))
            rows.append([
                p.delta_omega, p.V, abs(correlator_steady(p)),
                steady_phase_difference(p), classical_tongue(p.delta_omega),
            ])
        path = out / "steady_grid.csv"
        _write_csv(path, ["delta_omega", "V", "c_pi_abs", "delta_phi_pi",
                          "tongue_V"], rows, _metadata(cfg))
        written.append(path)
    return written


def cmd_trajectory(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.to_params()
    model = cfg.build_model(params)
    ecfg = cfg.ensemble_config().resolve(params, model)
    icfg = IntegratorConfig(dt=ecfg.dt)
    noise = NoiseStream(cfg.seed, 0)
    pi = steady_state_numeric(model)
    psi0 = sample_initial(pi, noise)
    record = run_trajectory(model, psi0, ecfg.total_time, ecfg.sample_interval,
                            icfg, noise, scheme=cfg.scheme)
    r = pearson_series(record.times, record.x1, record.x2, ecfg.pearson_window)
    extra = {"resolved_dt": ecfg.dt, "resolved_total_time": ecfg.total_time,
             "resolved_burn_in": ecfg.burn_in,
             "pearson_window": ecfg.pearson_window}
    if params.quantum_limit and params.symmetric_pumping:
        c_pi = correlator_steady(params)
        extra["c_pi_abs"] = abs(c_pi)
        extra["delta_phi_pi"] = steady_phase_difference(params)
    rows = []
    for i in range(record.n_samples):
        c = record.c[i]
        undef = math.isnan(c.real)
        rows.append([
            record.times[i],
            None if undef else abs(c),
            None if undef else math.atan2(c.imag, c.real),
            None if math.isnan(r[i]) else r[i],
            record.x1[i], record.x2[i], record.entropy[i],
        ])
    path = out / "trajectory.csv"
    _write_csv(path, ["t", "c_abs", "delta_phi", "pearson", "x1", "x2",
                      "entropy"], rows, _metadata(cfg, extra))
    return [path]


def _point_label(i: int, pt: dict) -> str:
    return f"point_{i:02d}"


def _write_ensemble_outputs(out: Path, cfg: RunConfig, res) -> list[Path]:
    written = []
    meta = _metadata(cfg, {
        "params": dataclasses.asdict(res.params),
        "resolved_ensemble_config": dataclasses.asdict(res.config),
    })
    for name, hist in res.histograms.items():
        rows = list(zip(hist.centers, hist.density, hist.counts))
        path = out / f"hist_{name}.csv"
        _write_csv(path, ["bin_center", "density", "count"], rows, meta)
        written.append(path)
    dphi, s = res.scatter
    path = out / "scatter.csv"
    _write_csv(path, ["delta_phi", "entropy"], list(zip(dphi, s)), meta)
    written.append(path)
    summary = {
        "meta": meta,
        "summaries": {k: dataclasses.asdict(v) for k, v in res.summaries.items()},
        "metadata": res.metadata,
        "n_excluded_correlator_samples": res.n_excluded_c,
        "n_excluded_pearson_samples": res.n_excluded_r,
        "failed_trajectories": list(res.failed_indices),
    }
    path = out / "summary.json"
    _write_json(path, summary)
    written.append(path)
    return written


def cmd_ensemble(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    scale = cfg._scale()
    if cfg.points:
        for i, pt in enumerate(cfg.grid()):
            params = cfg.to_params(delta_omega=pt["delta_omega"] / scale,
                                   V=pt["V"] / scale, theta=pt.get("theta"))
            model = cfg.build_model(params)
            res = run_ensemble(model, params, cfg.ensemble_config())
            sub = out / _point_label(i, pt)
            sub.mkdir(parents=True, exist_ok=True)
            written.extend(_write_ensemble_outputs(sub, cfg, res))
    else:
        params = cfg.to_params()
        model = cfg.build_model(params)
        res = run_ensemble(model, params, cfg.ensemble_config())
        written.extend(_write_ensemble_outputs(out, cfg, res))
    return written


def cmd_sweep(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.points:
        raise ConfigError("sweep requires a nonempty point grid")
    params = cfg.to_params()

    def builder(p):
        return cfg.build_model(p)

    res = sweep(params, cfg.grid(), cfg.ensemble_config(),
                run_trajectories=not cfg.analytic_only, model_builder=builder)
    rows = [[p.delta_omega, p.V, p.theta, p.c_pi_abs, p.delta_phi_pi,
             p.tongue_V, p.var_delta_phi, p.var_c_abs, p.var_entropy,
             p.entropy_tail_mass, p.mean_c_abs, p.error or ""]
            for p in res.points]
    path = out / "sweep.csv"
    _write_csv(path, ["delta_omega", "V", "theta", "c_pi_abs", "delta_phi_pi",
                      "tongue_V", "var_delta_phi", "var_c_abs", "var_entropy",
                      "entropy_tail_mass", "mean_c_abs", "error"],
               rows, _metadata(cfg))
    return [path]


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vdpsync",
        description="Synchronization statistics of two dissipatively "
                    "coupled quantum Van der Pol oscillators along "
                    "monitored trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("steady", cmd_steady), ("trajectory", cmd_trajectory),
                     ("ensemble", cmd_ensemble), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", default=None)
        p.add_argument("--preset", metavar="NAME", default=None,
                       choices=sorted(PRESETS))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--traj", type=int, default=None,
                       help="number of trajectories")
        p.add_argument("--out", default=None, metavar="DIR")
        p.add_argument("--format", default=None, choices=("csv", "json"))
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                       help="override any config key (JSON-typed value)")
        p.set_defaults(fn=fn)
    return parser


def _cli_overrides(args) -> dict:
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.traj is not None:
        overrides["n_trajectories"] = args.traj
    if args.out is not None:
        overrides["out"] = args.out
    if args.format is not None:
        overrides["format"] = args.format
    if args.threads is not None:
        overrides["threads"] = args.threads
    return overrides


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config, args.preset, _cli_overrides(args))
        written = args.fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateSteadyStateError, EnsembleError, NormCollapseError,
            StepSizeError, TruncationLeakError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
