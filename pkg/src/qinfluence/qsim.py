"""Dense state-vector simulator.

Qubit 0 is the least significant bit of the amplitude index, so the basis
state ``|q_{n-1} ... q_1 q_0>`` has index ``sum(q_k << k)``.  Bit strings
passed to or returned from measurement routines are written in the order of
the qubit list they refer to: ``bits[k]`` is the value of ``qubits[k]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ResourceError

#: Largest register the simulator will allocate (2**26 complex128 = 1 GiB).
MAX_QUBITS = 26


class GateKind(str, enum.Enum):
    H = "h"
    X = "x"
    CNOT = "cx"
    CCNOT = "ccx"
    MCX = "mcx"
    CPHASE = "cp"
    PHASE = "p"


_ARITY = {
    GateKind.H: 0,
    GateKind.X: 0,
    GateKind.PHASE: 0,
    GateKind.CNOT: 1,
    GateKind.CCNOT: 2,
    GateKind.CPHASE: 1,
}


@dataclass(frozen=True)
class GateOp:
    kind: GateKind
    controls: tuple[int, ...]
    targets: tuple[int, ...]
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "controls", tuple(int(c) for c in self.controls))
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if len(self.targets) != 1:
            raise ValueError(f"{self.kind.value} needs exactly one target, got {self.targets}")
        if self.kind is GateKind.MCX:
            if len(self.controls) < 1:
                raise ValueError("mcx needs at least one control")
        elif len(self.controls) != _ARITY[self.kind]:
            raise ValueError(
                f"{self.kind.value} takes {_ARITY[self.kind]} controls, got {len(self.controls)}"
            )
        qubits = self.controls + self.targets
        if len(set(qubits)) != len(qubits):
            raise ValueError(f"controls and targets overlap in {self}")
        if min(qubits) < 0:
            raise ValueError(f"negative qubit index in {self}")

    @property
    def qubits(self) -> tuple[int, ...]:
        return self.controls + self.targets

    def inverse(self) -> "GateOp":
        if self.kind in (GateKind.CPHASE, GateKind.PHASE):
            return GateOp(self.kind, self.controls, self.targets, -self.angle)
        return self


def h(q: int) -> GateOp:
    return GateOp(GateKind.H, (), (q,))


def x(q: int) -> GateOp:
    return GateOp(GateKind.X, (), (q,))


def cx(control: int, target: int) -> GateOp:
    return GateOp(GateKind.CNOT, (control,), (target,))


def ccx(c0: int, c1: int, target: int) -> GateOp:
    return GateOp(GateKind.CCNOT, (c0, c1), (target,))


def mcx(controls: Sequence[int], target: int) -> GateOp:
    """Multi-controlled X, normalised to CNOT/CCNOT for one or two controls."""
    controls = tuple(controls)
    if len(controls) == 1:
        return cx(controls[0], target)
    if len(controls) == 2:
        return ccx(controls[0], controls[1], target)
    return GateOp(GateKind.MCX, controls, (target,))


def cp(angle: float, control: int, target: int) -> GateOp:
    return GateOp(GateKind.CPHASE, (control,), (target,), float(angle))


def p(angle: float, q: int) -> GateOp:
    return GateOp(GateKind.PHASE, (), (q,), float(angle))


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[GateOp, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.num_qubits < 1:
            raise ValueError("a circuit needs at least one qubit")
        for g in self.gates:
            if max(g.qubits) >= self.num_qubits:
                raise ValueError(f"{g} addresses a qubit outside 0..{self.num_qubits - 1}")

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.num_qubits != self.num_qubits:
            raise ValueError("cannot concatenate circuits of different widths")
        return Circuit(self.num_qubits, self.gates + other.gates)

    def __len__(self) -> int:
        return len(self.gates)

    def widened(self, num_qubits: int) -> "Circuit":
        return Circuit(num_qubits, self.gates)

    def gate_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for g in self.gates:
            counts[g.kind.value] = counts.get(g.kind.value, 0) + 1
        return dict(sorted(counts.items()))


def invert_circuit(circuit: Circuit) -> Circuit:
    return Circuit(circuit.num_qubits, [g.inverse() for g in reversed(circuit.gates)])


def build_qft(qubits: Sequence[int], swaps: bool = True, num_qubits: int | None = None) -> Circuit:
    """Quantum Fourier transform on ``qubits`` (``qubits[0]`` = least significant bit).

    With ``swaps=True`` the register maps ``|x>`` to
    ``2**(-n/2) * sum_k exp(2j*pi*x*k / 2**n) |k>``.  With ``swaps=False``
    the final bit reversal is omitted; qubit ``qubits[j]`` then carries the
    phase ``exp(2j*pi*x / 2**(j+1))``, which is the form the Fourier-basis
    adders in :mod:`qinfluence.oracle` rely on.
    """
    qubits = list(qubits)
    if not qubits:
        raise ValueError("QFT needs at least one qubit")
    n = len(qubits)
    gates: list[GateOp] = []
    for j in reversed(range(n)):
        gates.append(h(qubits[j]))
        for m in reversed(range(j)):
            gates.append(cp(math.pi / 2 ** (j - m), qubits[m], qubits[j]))
    if swaps:
        for k in range(n // 2):
            a, b = qubits[k], qubits[n - 1 - k]
            gates += [cx(a, b), cx(b, a), cx(a, b)]
    width = num_qubits if num_qubits is not None else max(qubits) + 1
    return Circuit(width, gates)


class QuantumState:
    """Mutable amplitude vector over ``num_qubits`` qubits."""

    def __init__(self, num_qubits: int, amplitudes: np.ndarray):
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != (1 << num_qubits,):
            raise ValueError(
                f"expected {1 << num_qubits} amplitudes for {num_qubits} qubits, got {amplitudes.shape}"
            )
        self.num_qubits = num_qubits
        self.amplitudes = amplitudes

    def copy(self) -> "QuantumState":
        return QuantumState(self.num_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __repr__(self) -> str:
        return f"QuantumState(num_qubits={self.num_qubits})"


def _check_capacity(num_qubits: int) -> None:
    if num_qubits < 1:
        raise ValueError("need at least one qubit")
    if num_qubits > MAX_QUBITS:
        raise ResourceError(f"{num_qubits} qubits exceeds the simulator limit of {MAX_QUBITS}")


def init_state(num_qubits: int, basis_index: int = 0) -> QuantumState:
    _check_capacity(num_qubits)
    if not 0 <= basis_index < (1 << num_qubits):
        raise ValueError(f"basis index {basis_index} out of range for {num_qubits} qubits")
    amps = np.zeros(1 << num_qubits, dtype=np.complex128)
    amps[basis_index] = 1.0
    return QuantumState(num_qubits, amps)


def basis_index(bits_by_qubit: dict[int, int]) -> int:
    """Amplitude index of the basis state with the given qubit values."""
    return sum(int(b) << q for q, b in bits_by_qubit.items())


_SQRT1_2 = 1 / math.sqrt(2)


def apply_gate(state: QuantumState, gate: GateOp) -> QuantumState:
    """Apply ``gate`` to ``state`` in place and return it."""
    n = state.num_qubits
    if max(gate.qubits) >= n:
        raise ValueError(f"{gate} addresses a qubit outside 0..{n - 1}")
    psi = state.amplitudes.reshape((2,) * n)
    idx0 = [slice(None)] * n
    for c in gate.controls:
        idx0[n - 1 - c] = 1
    idx1 = list(idx0)
    t = n - 1 - gate.targets[0]
    idx0[t] = 0
    idx1[t] = 1
    i0, i1 = tuple(idx0), tuple(idx1)

    kind = gate.kind
    if kind in (GateKind.X, GateKind.CNOT, GateKind.CCNOT, GateKind.MCX):
        tmp = psi[i0].copy()
        psi[i0] = psi[i1]
        psi[i1] = tmp
    elif kind is GateKind.H:
        a = psi[i0].copy()
        b = psi[i1]
        psi[i0] = (a + b) * _SQRT1_2
        psi[i1] = (a - b) * _SQRT1_2
    elif kind in (GateKind.PHASE, GateKind.CPHASE):
        psi[i1] *= np.exp(1j * gate.angle)
    else:  # pragma: no cover - GateKind is closed
        raise ValueError(f"unknown gate kind {kind}")
    return state


def apply_circuit(state: QuantumState, circuit: Circuit) -> QuantumState:
    if circuit.num_qubits != state.num_qubits:
        raise ValueError(
            f"circuit acts on {circuit.num_qubits} qubits, state has {state.num_qubits}"
        )
    for g in circuit.gates:
        apply_gate(state, g)
    return state


def simulate(circuit: Circuit, basis: int = 0) -> QuantumState:
    """Run ``circuit`` on the basis state ``basis`` and return the final state."""
    return apply_circuit(init_state(circuit.num_qubits, basis), circuit)


def _check_qubit_list(state: QuantumState, qubits: Sequence[int]) -> list[int]:
    qubits = [int(q) for q in qubits]
    if len(set(qubits)) != len(qubits):
        raise ValueError(f"duplicate qubit indices in {qubits}")
    for q in qubits:
        if not 0 <= q < state.num_qubits:
            raise ValueError(f"qubit {q} outside 0..{state.num_qubits - 1}")
    return qubits


def marginal_distribution(state: QuantumState, qubits: Sequence[int]) -> np.ndarray:
    """Probabilities of every pattern of ``qubits``.

    Entry ``j`` is the probability of the pattern whose bit string is
    ``format(j, f"0{len(qubits)}b")``; ``qubits[0]`` is the leading bit.
    """
    qubits = _check_qubit_list(state, qubits)
    n = state.num_qubits
    probs = state.probabilities().reshape((2,) * n)
    keep = [n - 1 - q for q in qubits]
    rest = [a for a in range(n) if a not in keep]
    marg = probs.sum(axis=tuple(rest)) if rest else probs
    # after summing, remaining axes are ordered by ascending original axis
    remaining = sorted(keep)
    marg = np.transpose(marg, [remaining.index(a) for a in keep])
    return np.ascontiguousarray(marg).reshape(-1)


def basis_probability(state: QuantumState, qubits: Sequence[int], bits: str) -> float:
    if len(bits) != len(qubits):
        raise ValueError(f"pattern {bits!r} does not match {len(qubits)} qubits")
    if set(bits) - {"0", "1"}:
        raise ValueError(f"pattern {bits!r} is not binary")
    marg = marginal_distribution(state, qubits)
    return float(min(1.0, max(0.0, marg[int(bits, 2)])))


def bit_marginals(state: QuantumState, qubits: Sequence[int]) -> np.ndarray:
    """Pr(qubit = 1) for each listed qubit."""
    qubits = _check_qubit_list(state, qubits)
    probs = state.probabilities()
    idx = np.arange(probs.size, dtype=np.int64)
    return np.array([probs[(idx >> q) & 1 == 1].sum() for q in qubits])


@dataclass(frozen=True)
class MeasurementSample:
    bits: str
    shot_index: int


def sample_outcomes(
    distribution: np.ndarray, shots: int, seed: int | None
) -> np.ndarray:
    """Draw ``shots`` pattern indices from a marginal distribution."""
    if shots < 1:
        raise ValueError("shots must be at least 1")
    probs = np.clip(np.asarray(distribution, dtype=float), 0.0, None)
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    return rng.choice(probs.size, size=shots, p=probs)


def sample_measurement(
    state: QuantumState, qubits: Sequence[int], shots: int, seed: int | None = None
) -> list[MeasurementSample]:
    """Sample ``shots`` independent measurements of ``qubits`` from one state."""
    marg = marginal_distribution(state, qubits)
    outcomes = sample_outcomes(marg, shots, seed)
    width = len(qubits)
    return [MeasurementSample(format(int(o), f"0{width}b"), k) for k, o in enumerate(outcomes)]


def samples_to_array(samples: Iterable[MeasurementSample]) -> np.ndarray:
    """Stack sample bit strings into a ``(shots, width)`` uint8 array."""
    return np.array([[int(c) for c in s.bits] for s in samples], dtype=np.uint8)
