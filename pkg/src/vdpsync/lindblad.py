"""Coupled Van der Pol model: Liouvillian, propagation and steady states.

The model is two harmonic modes with linear pumping, nonlinear (two-photon)
damping and a dissipative coupling channel.  In the quantum limit
(gamma_down -> infinity) each mode is confined to its two lowest Fock
levels and the nonlinear damping collapses to linear damping at twice the
pumping rate; in that regime the steady state is known in closed form and
serves as the oracle for everything downstream.

Phase convention: the coupling channel is sqrt(V) * (a1 - exp(-i*theta)*a2),
which locks the phase of <a1† a2> at theta - arctan(dw/(3*gamma_up + V)).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .hilbert import (
    ATOL,
    DensityMatrix,
    FockSpace,
    Operator,
    annihilation,
    number,
)


class DegenerateSteadyStateError(ValueError):
    """The Liouvillian null space is not one-dimensional."""


@dataclass(frozen=True)
class VdpParams:
    """Physical parameters of the two coupled oscillators.

    Rates are in inverse time units.  gamma_down_i = inf selects the
    quantum limit (two-level truncation with effective linear damping).
    """

    omega1: float
    omega2: float
    gamma_up_1: float
    gamma_up_2: float
    V: float
    theta: float = 0.0
    gamma_down_1: float = math.inf
    gamma_down_2: float = math.inf

    def __post_init__(self):
        for name in ("gamma_up_1", "gamma_up_2", "V", "gamma_down_1", "gamma_down_2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if math.isinf(self.gamma_down_1) != math.isinf(self.gamma_down_2):
            raise ValueError("gamma_down must be infinite for both oscillators or neither")

    @property
    def delta_omega(self) -> float:
        return self.omega2 - self.omega1

    @property
    def quantum_limit(self) -> bool:
        return math.isinf(self.gamma_down_1)

    @property
    def symmetric_pumping(self) -> bool:
        return self.gamma_up_1 == self.gamma_up_2

    @classmethod
    def symmetric(cls, gamma_up: float, V: float, delta_omega: float,
                  theta: float = 0.0, omega1: float = 8 * math.pi,
                  gamma_down: float = math.inf) -> "VdpParams":
        """Equal local rates; V/delta_omega given in absolute units."""
        return cls(omega1=omega1, omega2=omega1 + delta_omega,
                   gamma_up_1=gamma_up, gamma_up_2=gamma_up, V=V, theta=theta,
                   gamma_down_1=gamma_down, gamma_down_2=gamma_down)


@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian plus the five Lindblad operators with rates absorbed."""

    H: Operator
    lindblad_ops: tuple[Operator, ...]
    space: FockSpace

    def __post_init__(self):
        if not self.H.is_hermitian(ATOL):
            raise ValueError("Hamiltonian must be Hermitian")
        for L in self.lindblad_ops:
            if L.space.dims != self.space.dims:
                raise ValueError("Lindblad operator dimension mismatch")


@dataclass(frozen=True)
class Superoperator:
    """Matrix acting on column-vectorized density matrices."""

    matrix: np.ndarray
    space: FockSpace

    def apply(self, rho: np.ndarray) -> np.ndarray:
        d = self.space.total_dim
        return (self.matrix @ rho.reshape(-1, order="F")).reshape(d, d, order="F")


def build_vdp_model(params: VdpParams, space: FockSpace | None = None) -> LindbladModel:
    """Assemble the Hamiltonian and the five-channel dissipator list.

    Channel order: [damping 1, pump 1, damping 2, pump 2, coupling].
    """
    if params.quantum_limit:
        if space is None:
            space = FockSpace((2, 2))
        if space.dims != (2, 2):
            raise ValueError("quantum limit requires dims (2, 2)")
    elif space is None:
        raise ValueError("finite nonlinear damping requires an explicit FockSpace")

    a1 = annihilation(space, 1)
    a2 = annihilation(space, 2)
    H = params.omega1 * number(space, 1) + params.omega2 * number(space, 2)

    if params.quantum_limit:
        damp1 = math.sqrt(2 * params.gamma_up_1) * a1
        damp2 = math.sqrt(2 * params.gamma_up_2) * a2
    else:
        damp1 = math.sqrt(params.gamma_down_1) * (a1 @ a1)
        damp2 = math.sqrt(params.gamma_down_2) * (a2 @ a2)

    ops = (
        damp1,
        math.sqrt(params.gamma_up_1) * a1.dag(),
        damp2,
        math.sqrt(params.gamma_up_2) * a2.dag(),
        math.sqrt(params.V) * (a1 - cmath.exp(-1j * params.theta) * a2),
    )
    return LindbladModel(H=H, lindblad_ops=ops, space=space)


def liouvillian(model: LindbladModel) -> Superoperator:
    """Matrix M with vec(L(rho)) = M @ vec(rho), column-stacked vec."""
    d = model.space.total_dim
    ident = np.eye(d)
    H = model.H.matrix
    M = -1j * (np.kron(ident, H) - np.kron(H.T, ident))
    for L in model.lindblad_ops:
        Lm = L.matrix
        LdL = Lm.conj().T @ Lm
        M += (
            np.kron(Lm.conj(), Lm)
            - 0.5 * np.kron(ident, LdL)
            - 0.5 * np.kron(LdL.T, ident)
        )
    return Superoperator(M, model.space)


def propagate(model: LindbladModel, rho0: DensityMatrix, t: float) -> DensityMatrix:
    """Exact evolution exp(L t) applied to rho0."""
    if t < 0:
        raise ValueError("propagation time must be >= 0")
    if t == 0:
        return rho0
    sup = liouvillian(model)
    d = model.space.total_dim
    v = scipy.linalg.expm(sup.matrix * t) @ rho0.matrix.reshape(-1, order="F")
    rho = v.reshape(d, d, order="F")
    rho = (rho + rho.conj().T) / 2
    rho = rho / np.trace(rho).real
    return DensityMatrix(rho, model.space)


def steady_state_numeric(model: LindbladModel,
                         degeneracy_rtol: float = 1e-8) -> DensityMatrix:
    """Unique null-space element of the Liouvillian, trace-normalized.

    Raises DegenerateSteadyStateError when the second-smallest singular
    value does not clearly separate from zero.
    """
    sup = liouvillian(model)
    M = sup.matrix
    d = model.space.total_dim
    _, s, vh = np.linalg.svd(M)
    if s[-2] <= degeneracy_rtol * s[0]:
        raise DegenerateSteadyStateError(
            f"Liouvillian null space is degenerate (s[-2]={s[-2]:.3e}, "
            f"threshold {degeneracy_rtol * s[0]:.3e})"
        )
    rho = vh[-1].conj().reshape(d, d, order="F")
    rho = (rho + rho.conj().T) / 2
    tr = np.trace(rho).real
    if abs(tr) < 1e-12:
        raise DegenerateSteadyStateError("null vector is traceless")
    rho = rho / tr
    # clip eigenvalue noise at the -1e-10 level
    w, U = np.linalg.eigh(rho)
    w = np.clip(w, 0.0, None)
    rho = (U * w) @ U.conj().T
    rho = rho / np.trace(rho).real
    return DensityMatrix(rho, model.space)


def _require_analytic(params: VdpParams):
    if not params.quantum_limit:
        raise ValueError("closed-form steady state requires the quantum limit")
    if not params.symmetric_pumping:
        raise ValueError("closed-form steady state requires equal pumping rates")


def _norm_factor(params: VdpParams) -> float:
    g = params.gamma_up_1
    V = params.V
    dw2 = params.delta_omega ** 2
    return (3 * g + V) * (
        3 * g * (dw2 + 9 * g ** 2) + (dw2 + 27 * g ** 2) * V + 8 * g * V ** 2
    )


def analytic_steady_state(params: VdpParams) -> DensityMatrix:
    """Closed-form steady state on dims (2, 2), quantum limit, equal rates."""
    _require_analytic(params)
    g = params.gamma_up_1
    V = params.V
    dw = params.delta_omega
    D = dw ** 2 + (3 * g + V) ** 2
    N = _norm_factor(params)

    p01 = g * (2 * g + V) * D / N          # <01|pi|01> = <10|pi|10>
    p11 = g ** 2 * D / N
    p00 = 1.0 - 2 * p01 - p11              # unit trace by construction
    off = g * V * (g + V) * (3 * g + V - 1j * dw) * cmath.exp(1j * params.theta) / N

    rho = np.zeros((4, 4), dtype=np.complex128)
    rho[0, 0] = p00
    rho[1, 1] = p01
    rho[2, 2] = p01
    rho[3, 3] = p11
    rho[1, 2] = off          # <01|pi|10>
    rho[2, 1] = off.conjugate()
    return DensityMatrix(rho, FockSpace((2, 2)))


def correlator_steady(params: VdpParams) -> complex:
    """Steady-state value of <a1† a2>/sqrt(<n1><n2>)."""
    _require_analytic(params)
    g = params.gamma_up_1
    V = params.V
    dw = params.delta_omega
    mag = V * (g + V) / ((3 * g + V) * math.hypot(dw, 3 * g + V))
    phase = params.theta - math.atan2(dw, 3 * g + V)
    return mag * cmath.exp(1j * phase)


def steady_phase_difference(params: VdpParams) -> float:
    """Locking phase of the steady-state correlator."""
    _require_analytic(params)
    return params.theta - math.atan2(params.delta_omega,
                                     3 * params.gamma_up_1 + params.V)


def marginal_excitation(params: VdpParams) -> float:
    """Excited-state population p of either reduced steady state."""
    _require_analytic(params)
    g = params.gamma_up_1
    V = params.V
    D = params.delta_omega ** 2 + (3 * g + V) ** 2
    return g * (3 * g + V) * D / _norm_factor(params)


def classical_tongue(delta_omega: float) -> float:
    """Coupling at the classical phase-locking boundary."""
    return 2.0 * abs(delta_omega)
