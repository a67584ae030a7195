"""Dense complex linear algebra on truncated tensor-product Fock spaces.

Operators and states are thin wrappers around contiguous numpy arrays.
The composite index convention is row-major with oscillator 1 as the
slowest-varying factor, i.e. for dims (d1, d2) the basis state |n1 n2>
sits at index n1*d2 + n2.  All partial traces and tensor products in the
package rely on this convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Hard cap on the composite dimension (dense algebra only).
MAX_TOTAL_DIM = 1024

#: Default absolute tolerance for invariant checks.
ATOL = 1e-10


@dataclass(frozen=True)
class FockSpace:
    """Ordered truncation dimensions of a tensor-product Fock space."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) == 0:
            raise ValueError("FockSpace needs at least one factor")
        if any(d < 2 for d in dims):
            raise ValueError(f"every local dimension must be >= 2, got {dims}")
        if math.prod(dims) > MAX_TOTAL_DIM:
            raise ValueError(
                f"total dimension {math.prod(dims)} exceeds MAX_TOTAL_DIM={MAX_TOTAL_DIM}"
            )

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    @property
    def n_factors(self) -> int:
        return len(self.dims)

    def factor_index(self, which: int) -> int:
        """Validate a 1-based factor label and return the 0-based axis."""
        if not 1 <= which <= self.n_factors:
            raise ValueError(
                f"oscillator index {which} out of range 1..{self.n_factors}"
            )
        return which - 1


@dataclass(frozen=True)
class Operator:
    """Dense square operator on a FockSpace."""

    matrix: np.ndarray
    space: FockSpace

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        d = self.space.total_dim
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match space dim {d}")
        object.__setattr__(self, "matrix", m)

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.space)

    def is_hermitian(self, atol: float = ATOL) -> bool:
        return bool(np.linalg.norm(self.matrix - self.matrix.conj().T) <= atol)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _check_same_space(self.space, other.space)
            return Operator(self.matrix @ other.matrix, self.space)
        if isinstance(other, StateVector):
            _check_same_space(self.space, other.space)
            return self.matrix @ other.amplitudes
        return NotImplemented

    def __add__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.matrix + other.matrix, self.space)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_same_space(self.space, other.space)
        return Operator(self.matrix - other.matrix, self.space)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.matrix * scalar, self.space)

    __rmul__ = __mul__


@dataclass(frozen=True)
class StateVector:
    """Unit-norm pure state on a FockSpace."""

    amplitudes: np.ndarray
    space: FockSpace

    def __post_init__(self):
        v = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if v.shape != (self.space.total_dim,):
            raise ValueError(
                f"amplitude shape {v.shape} does not match space dim {self.space.total_dim}"
            )
        if abs(np.linalg.norm(v) - 1.0) > ATOL:
            raise ValueError(f"state norm {np.linalg.norm(v)} deviates from 1")
        object.__setattr__(self, "amplitudes", v)

    @classmethod
    def normalized(cls, amplitudes, space: FockSpace) -> "StateVector":
        v = np.asarray(amplitudes, dtype=np.complex128)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(v / n, space)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite matrix."""

    matrix: np.ndarray
    space: FockSpace

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        d = self.space.total_dim
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match space dim {d}")
        if np.linalg.norm(m - m.conj().T) > ATOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > ATOL or abs(np.trace(m).imag) > ATOL:
            raise ValueError(f"density matrix trace {np.trace(m)} deviates from 1")
        if np.linalg.eigvalsh(m).min() < -1e-9:
            raise ValueError("density matrix has a significantly negative eigenvalue")
        object.__setattr__(self, "matrix", m)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def _check_same_space(a: FockSpace, b: FockSpace):
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")


def identity(space: FockSpace) -> Operator:
    return Operator(np.eye(space.total_dim), space)


def basis_state(space: FockSpace, occupations) -> StateVector:
    """|n1 n2 ...> product basis state."""
    occ = tuple(int(n) for n in occupations)
    if len(occ) != space.n_factors:
        raise ValueError("one occupation number per factor required")
    for n, d in zip(occ, space.dims):
        if not 0 <= n < d:
            raise ValueError(f"occupation {n} outside truncation 0..{d - 1}")
    idx = 0
    for n, d in zip(occ, space.dims):
        idx = idx * d + n
    v = np.zeros(space.total_dim, dtype=np.complex128)
    v[idx] = 1.0
    return StateVector(v, space)


def _local_lowering(dim: int) -> np.ndarray:
    a = np.zeros((dim, dim), dtype=np.complex128)
    for n in range(1, dim):
        a[n - 1, n] = math.sqrt(n)
    return a


def annihilation(space: FockSpace, which: int) -> Operator:
    """Lowering operator of one oscillator, identity on the others."""
    axis = space.factor_index(which)
    mats = [
        _local_lowering(d) if i == axis else np.eye(d)
        for i, d in enumerate(space.dims)
    ]
    full = mats[0]
    for m in mats[1:]:
        full = np.kron(full, m)
    return Operator(full, space)


def creation(space: FockSpace, which: int) -> Operator:
    return annihilation(space, which).dag()


def number(space: FockSpace, which: int) -> Operator:
    a = annihilation(space, which)
    return a.dag() @ a


def position(space: FockSpace, which: int) -> Operator:
    """Quadrature x = (a + a†)/sqrt(2)."""
    a = annihilation(space, which)
    return (a + a.dag()) * (1.0 / math.sqrt(2.0))


def tensor(a, b):
    """Kronecker product of two operators or two state vectors."""
    if isinstance(a, Operator) and isinstance(b, Operator):
        space = FockSpace(a.space.dims + b.space.dims)
        return Operator(np.kron(a.matrix, b.matrix), space)
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        space = FockSpace(a.space.dims + b.space.dims)
        return StateVector(np.kron(a.amplitudes, b.amplitudes), space)
    raise TypeError("tensor expects two Operators or two StateVectors")


def expectation(op: Operator, psi: StateVector) -> complex:
    """<psi|A|psi>."""
    _check_same_space(op.space, psi.space)
    v = psi.amplitudes
    return complex(v.conj() @ (op.matrix @ v))


def reduced_density(psi: StateVector, keep: int) -> DensityMatrix:
    """Partial trace of |psi><psi| over all factors except `keep` (1-based)."""
    space = psi.space
    if space.n_factors < 2:
        raise ValueError("reduced_density needs at least two factors")
    axis = space.factor_index(keep)
    t = psi.amplitudes.reshape(space.dims)
    t = np.moveaxis(t, axis, 0).reshape(space.dims[axis], -1)
    rho = t @ t.conj().T
    # scrub float noise so the DensityMatrix invariants hold exactly enough
    rho = (rho + rho.conj().T) / 2
    rho = rho / np.trace(rho).real
    return DensityMatrix(rho, FockSpace((space.dims[axis],)))
