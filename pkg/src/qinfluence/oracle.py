"""Reversible l-infinity feasibility oracle for 1-D point fitting.

The oracle ``U_f`` maps ``|z>|y>`` to ``|z>|y XOR f(z)>`` where ``f(z)`` is 1
exactly when the selected values spread by more than ``two_epsilon``.  It is
assembled from a compute block ``D`` (selectors, value encoders, subtractor,
comparator), a CNOT onto ``y`` and the mechanical inverse of ``D``.

Register layout (all value registers little-endian, ``v[0]`` = bit 2**0)::

    z  : qubits 0 .. N-1          subset selection, z[i] <-> point i
    a1 : N .. 2N-1                one-hot index of the first selected point
    a2 : 2N .. 3N-1               one-hot index of the last selected point
    v1 : 3N .. 3N+C-1             value of the first selected point
    v2 : 3N+C .. 3N+2C-1          value of the last one, then the difference
    y  : 3N+2C                    phase-kickback qubit
    b0 : 3N+2C+1 (optional)       borrow/result qubit of the comparator
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PrecisionError
from .qsim import (
    Circuit,
    GateKind,
    GateOp,
    build_qft,
    ccx,
    cp,
    cx,
    h,
    invert_circuit,
    mcx,
    p,
    x,
)

_TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class PointFitInstance:
    values: tuple[int, ...]
    bit_precision: int
    two_epsilon: int

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        C = self.bit_precision
        if C < 1:
            raise ValueError("bit precision must be at least 1")
        if not self.values:
            raise ValueError("instance needs at least one value")
        if any(a < b for a, b in zip(self.values, self.values[1:])):
            raise ValueError(f"values must be sorted decreasingly, got {self.values}")
        if self.values[-1] != 0:
            raise ValueError("the smallest value must be offset to 0")
        if self.values[0] >= 1 << C:
            raise PrecisionError(f"value {self.values[0]} does not fit in {C} bits")
        if not 0 <= self.two_epsilon < 1 << C:
            raise PrecisionError(f"two_epsilon={self.two_epsilon} does not fit in {C} bits")

    @property
    def num_points(self) -> int:
        return len(self.values)

    def achievable_differences(self) -> set[int]:
        """Every value ``max - min`` a subset can produce (0 for size <= 1)."""
        vals = self.values
        return {0} | {vals[i] - vals[j] for i in range(len(vals)) for j in range(i + 1, len(vals))}


def _round_half_up(x: float) -> int:
    # tolerance absorbs representation error such as 0.4 * 8.75 = 3.4999...
    return int(math.floor(x + 0.5 + 1e-9))


def preprocess(
    raw_values: Sequence[float], bit_precision: int, two_epsilon_raw: float
) -> tuple[PointFitInstance, tuple[int, ...]]:
    """Sort, offset and quantise raw 1-D data for the oracle.

    Returns the instance and a permutation with ``perm[k]`` = caller index of
    oracle point ``k``.  Integer data that already fits in ``bit_precision``
    bits after the offset (with an integer threshold) is kept at scale 1;
    anything else is scaled so the data span maps onto ``2**C - 1`` and
    rounded half-up.  A scaled threshold above ``2**C - 1`` is clamped, which
    leaves the predicate unchanged since no difference can exceed that.
    """
    vals = np.asarray(list(raw_values), dtype=float)
    if vals.size == 0:
        raise ValueError("need at least one value")
    if bit_precision < 1:
        raise ValueError("bit precision must be at least 1")
    if not np.all(np.isfinite(vals)) or not math.isfinite(two_epsilon_raw):
        raise PrecisionError("values and threshold must be finite")
    if two_epsilon_raw < 0:
        raise ValueError("two_epsilon must be non-negative")
    top = (1 << bit_precision) - 1

    perm = tuple(sorted(range(vals.size), key=lambda k: (-vals[k], k)))
    shifted = vals[list(perm)] - vals.min()
    span = float(shifted[0])
    integral = all(float(v).is_integer() for v in shifted) and float(two_epsilon_raw).is_integer()
    if span == 0 or (integral and span <= top):
        scale = 1.0
    else:
        scale = top / span
    q = [min(top, _round_half_up(v * scale)) for v in shifted]
    q[-1] = 0
    te = min(top, _round_half_up(two_epsilon_raw * scale))
    return PointFitInstance(tuple(q), bit_precision, te), perm


#: Largest point count :func:`preprocess_preserving` searches exhaustively.
PRESERVING_MAX_POINTS = 4


def _pair_pattern(values, two_epsilon) -> tuple[int, ...]:
    n = len(values)
    return tuple(int(values[i] - values[j] > two_epsilon) for i in range(n) for j in range(i + 1, n))


@lru_cache(maxsize=None)
def _pattern_table(n: int, bit_precision: int) -> dict:
    top = (1 << bit_precision) - 1
    table: dict = {}
    for te in range(top + 1):
        for head in combinations_with_replacement(range(top, -1, -1), n - 1):
            q = head + (0,)
            table.setdefault(_pair_pattern(q, te), (q, te))
    return table


def preprocess_preserving(
    raw_values: Sequence[float], bit_precision: int, two_epsilon_raw: float
) -> tuple[PointFitInstance, tuple[int, ...]]:
    """Like :func:`preprocess`, but keeps ``f`` unchanged on every subset.

    For up to four points the 1-D predicate is fixed by which sorted pairs
    spread past the threshold, so an integer instance with the same pair
    pattern is looked up in a table of all C-bit instances.  Falls back to
    :func:`preprocess` when the pattern has no C-bit realisation.
    """
    vals = np.asarray(list(raw_values), dtype=float)
    n = vals.size
    if n == 0 or n > PRESERVING_MAX_POINTS or not np.all(np.isfinite(vals)) or two_epsilon_raw < 0:
        return preprocess(raw_values, bit_precision, two_epsilon_raw)
    perm = tuple(sorted(range(n), key=lambda k: (-vals[k], k)))
    found = _pattern_table(n, bit_precision).get(_pair_pattern(vals[list(perm)], two_epsilon_raw))
    if found is None:
        return preprocess(raw_values, bit_precision, two_epsilon_raw)
    q, te = found
    return PointFitInstance(q, bit_precision, te), perm


def read_instance_file(path: str | Path) -> tuple[list[float], int, float]:
    """Parse an instance file: ``C=`` and ``two_epsilon=`` headers, one value per line."""
    bits = two_eps = None
    values: list[float] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, val = (s.strip() for s in line.partition("="))
            if key == "C":
                bits = int(val)
            elif key == "two_epsilon":
                two_eps = float(val)
            else:
                raise ValueError(f"{path}:{lineno}: unknown header key {key!r}")
        else:
            values.append(float(line))
    if bits is None or two_eps is None:
        raise ValueError(f"{path}: missing C= or two_epsilon= header")
    if not values:
        raise ValueError(f"{path}: no values")
    return values, bits, two_eps


@dataclass(frozen=True)
class QubitLayout:
    z: tuple[int, ...]
    a1: tuple[int, ...]
    a2: tuple[int, ...]
    v1: tuple[int, ...]
    v2: tuple[int, ...]
    y: int
    b0: int | None = None

    @classmethod
    def for_instance(cls, instance: PointFitInstance, with_b0: bool = False) -> "QubitLayout":
        N, C = instance.num_points, instance.bit_precision
        r = lambda start, size: tuple(range(start, start + size))  # noqa: E731
        y = 3 * N + 2 * C
        return cls(
            z=r(0, N),
            a1=r(N, N),
            a2=r(2 * N, N),
            v1=r(3 * N, C),
            v2=r(3 * N + C, C),
            y=y,
            b0=y + 1 if with_b0 else None,
        )

    @property
    def base_qubits(self) -> int:
        """``3N + 2C + 1``: the count without the comparator ancilla."""
        return 3 * len(self.z) + 2 * len(self.v1) + 1

    @property
    def num_qubits(self) -> int:
        return self.base_qubits + (self.b0 is not None)

    @property
    def ancillas(self) -> tuple[int, ...]:
        extra = (self.b0,) if self.b0 is not None else ()
        return self.a1 + self.a2 + self.v1 + self.v2 + extra


def _check_layout(instance: PointFitInstance, layout: QubitLayout) -> None:
    N, C = instance.num_points, instance.bit_precision
    if len(layout.z) != N or len(layout.a1) != N or len(layout.a2) != N:
        raise ValueError("layout point registers do not match the instance")
    if len(layout.v1) != C or len(layout.v2) != C:
        raise ValueError("layout value registers do not match the bit precision")


def _first_set_selector(z: Sequence[int], out: Sequence[int], width: int) -> Circuit:
    # out[i] = z[i] and not z[0] and ... and not z[i-1]
    gates: list[GateOp] = []
    for i in range(len(z)):
        negated = list(z[:i])
        gates += [x(q) for q in negated]
        gates.append(mcx(list(z[: i + 1]), out[i]))
        gates += [x(q) for q in negated]
    return Circuit(width, gates)


def build_selector_A(instance: PointFitInstance, layout: QubitLayout) -> Circuit:
    """Mark the first selected point (the largest value) in ``a1``."""
    _check_layout(instance, layout)
    return _first_set_selector(layout.z, layout.a1, layout.num_qubits)


def build_selector_B(instance: PointFitInstance, layout: QubitLayout) -> Circuit:
    """Mark the last selected point (the smallest value) in ``a2``."""
    _check_layout(instance, layout)
    rev = _first_set_selector(layout.z[::-1], layout.a2[::-1], layout.num_qubits)
    return rev


def build_value_encoder(instance: PointFitInstance, layout: QubitLayout, which: str) -> Circuit:
    """Copy ``b_i`` into the value register for the marked index ``i``."""
    _check_layout(instance, layout)
    if which not in ("V1", "V2"):
        raise ValueError("which must be 'V1' or 'V2'")
    a, v = (layout.a1, layout.v1) if which == "V1" else (layout.a2, layout.v2)
    gates = [
        cx(a[i], v[k])
        for i, b in enumerate(instance.values)
        for k in range(instance.bit_precision)
        if (b >> k) & 1
    ]
    return Circuit(layout.num_qubits, gates)


def _fourier_add_register(src: Sequence[int], dst: Sequence[int], sign: int) -> list[GateOp]:
    # in the unswapped Fourier basis dst[j] carries exp(2*pi*i*value / 2**(j+1))
    gates = []
    for j in range(len(dst)):
        for m in range(min(j + 1, len(src))):
            gates.append(cp(sign * _TWO_PI * (1 << m) / (1 << (j + 1)), src[m], dst[j]))
    return gates


def _fourier_add_constant(value: int, dst: Sequence[int]) -> list[GateOp]:
    gates = []
    for j in range(len(dst)):
        period = 1 << (j + 1)
        r = value % period
        if r:
            gates.append(p(_TWO_PI * r / period, dst[j]))
    return gates


def _in_fourier_basis(register: Sequence[int], body: list[GateOp], width: int) -> Circuit:
    qft = build_qft(register, swaps=False, num_qubits=width)
    return qft + Circuit(width, body) + invert_circuit(qft)


def build_subtractor_S1(layout: QubitLayout) -> Circuit:
    """``v2 <- v1 - v2 (mod 2**C)``; ``v1`` is left unchanged.

    Implemented as NOT(v2), then a Fourier-basis addition of ``v1`` and of
    the constant 1, since ``~v2 + v1 + 1 = v1 - v2``.
    """
    width = layout.num_qubits
    flip = Circuit(width, [x(q) for q in layout.v2])
    body = _fourier_add_register(layout.v1, layout.v2, +1)
    body += _fourier_add_constant(1, layout.v2)
    return flip + _in_fourier_basis(layout.v2, body, width)


@dataclass(frozen=True)
class ComparatorPlan:
    """How the threshold test is wired: which qubit ends up holding f(z)."""

    mode: str  # "constant", "bit", "negated-bit" or "borrow"
    bit: int | None = None

    @property
    def needs_b0(self) -> bool:
        return self.mode == "borrow"


def plan_comparator(instance: PointFitInstance, mode: str = "auto") -> ComparatorPlan:
    """Pick the comparator construction.

    ``generic`` always subtracts ``two_epsilon + 1`` into a borrow ancilla
    (unless the threshold exceeds every C-bit difference).  ``auto`` first
    looks for a cheaper realisation that agrees with the threshold test on
    every difference the instance can actually produce: a constant, or a
    single bit of the difference register, possibly negated.
    """
    C, te = instance.bit_precision, instance.two_epsilon
    if mode not in ("auto", "generic"):
        raise ValueError("mode must be 'auto' or 'generic'")
    if te + 1 >= 1 << C:
        return ComparatorPlan("constant")
    if mode == "generic":
        return ComparatorPlan("borrow")
    diffs = sorted(instance.achievable_differences())
    if all(d <= te for d in diffs):
        return ComparatorPlan("constant")
    for k in reversed(range(C)):
        bits = [(d >> k) & 1 for d in diffs]
        want = [int(d > te) for d in diffs]
        if bits == want:
            return ComparatorPlan("bit", k)
        if [1 - b for b in bits] == want:
            return ComparatorPlan("negated-bit", k)
    return ComparatorPlan("borrow")


def build_comparator_S2(
    instance: PointFitInstance, layout: QubitLayout, plan: ComparatorPlan | None = None
) -> tuple[Circuit, int | None]:
    """Threshold test on the difference held in ``v2``.

    Returns the circuit and the qubit that holds ``f(z)`` afterwards, or
    ``None`` when ``f`` is identically 0.  In borrow mode ``[v2, b0]`` forms
    a ``C+1``-bit register from which ``two_epsilon + 1`` is subtracted, so
    ``b0`` reads 1 exactly when the difference is at most ``two_epsilon``;
    a final X turns that into ``f``.
    """
    _check_layout(instance, layout)
    plan = plan or plan_comparator(instance)
    width = layout.num_qubits
    if plan.mode == "constant":
        return Circuit(width), None
    if plan.mode == "bit":
        return Circuit(width), layout.v2[plan.bit]
    if plan.mode == "negated-bit":
        q = layout.v2[plan.bit]
        return Circuit(width, [x(q)]), q
    if layout.b0 is None:
        raise ValueError("borrow comparator needs a layout with b0")
    reg = layout.v2 + (layout.b0,)
    body = _fourier_add_constant(-(instance.two_epsilon + 1), reg)
    circ = _in_fourier_basis(reg, body, width) + Circuit(width, [x(layout.b0)])
    return circ, layout.b0


@dataclass(frozen=True)
class OracleCircuit:
    circuit: Circuit
    layout: QubitLayout
    instance: PointFitInstance
    f_output: int | None
    compute: Circuit
    comparator: ComparatorPlan

    @property
    def num_qubits(self) -> int:
        return self.layout.num_qubits


def build_uf(instance: PointFitInstance, comparator: str = "auto") -> OracleCircuit:
    """``U_f = D -> CNOT(f, y) -> D^-1``."""
    plan = plan_comparator(instance, comparator)
    layout = QubitLayout.for_instance(instance, with_b0=plan.needs_b0)
    D = (
        build_selector_A(instance, layout)
        + build_selector_B(instance, layout)
        + build_value_encoder(instance, layout, "V1")
        + build_value_encoder(instance, layout, "V2")
        + build_subtractor_S1(layout)
    )
    s2, f_out = build_comparator_S2(instance, layout, plan)
    D = D + s2
    if f_out is None:
        uf = Circuit(layout.num_qubits)
    else:
        uf = D + Circuit(layout.num_qubits, [cx(f_out, layout.y)]) + invert_circuit(D)
    return OracleCircuit(uf, layout, instance, f_out, D, plan)


def build_bv_circuit(instance: PointFitInstance, comparator: str = "auto") -> OracleCircuit:
    """Bernstein-Vazirani circuit around ``U_f``; measure ``layout.z`` afterwards."""
    uf = build_uf(instance, comparator)
    lay = uf.layout
    width = lay.num_qubits
    prep = Circuit(width, [x(lay.y)] + [h(q) for q in lay.z] + [h(lay.y)])
    post = Circuit(width, [h(q) for q in lay.z])
    return OracleCircuit(prep + uf.circuit + post, lay, instance, uf.f_output, uf.compute, uf.comparator)


# -- text export ----------------------------------------------------------

DIALECT = "qinfluence-asm 1"

_MNEMONIC = {
    GateKind.H: "h",
    GateKind.X: "x",
    GateKind.CNOT: "cx",
    GateKind.CCNOT: "ccx",
    GateKind.CPHASE: "cp",
    GateKind.PHASE: "p",
}


def decompose_mcx(gate: GateOp, ancillas: Sequence[int]) -> list[GateOp]:
    """Toffoli V-chain for a multi-controlled X using clean ``ancillas``.

    Needs ``len(controls) - 2`` ancillas in state |0>, which are restored.
    """
    c = list(gate.controls)
    t = gate.targets[0]
    k = len(c)
    if k <= 2:
        return [mcx(c, t)]
    anc = list(ancillas)[: k - 2]
    if len(anc) < k - 2:
        raise ValueError(f"mcx with {k} controls needs {k - 2} ancillas, got {len(anc)}")
    chain = [ccx(c[0], c[1], anc[0])]
    for j in range(2, k - 1):
        chain.append(ccx(c[j], anc[j - 2], anc[j - 1]))
    return chain + [ccx(c[k - 1], anc[k - 3], t)] + chain[::-1]


def export_circuit_text(
    circuit: Circuit | OracleCircuit, ancillas: Sequence[int] | None = None
) -> str:
    """Serialise a circuit as a line-oriented gate list.

    Format::

        # qinfluence-asm 1
        qubits <n>
        # mcx-decomposed <count> ancillas <q> <q> ...
        <mnemonic> [angle] <qubit> ...

    Mnemonics are ``h x cx ccx cp p``; angles are radians written with
    ``repr`` so they round-trip exactly; for controlled gates the controls
    come first and the target last.  Multi-controlled X gates are expanded
    into Toffoli V-chains.  For an :class:`OracleCircuit` the chain borrows
    the ``v1``/``v2`` registers, which are |0> whenever a selector block
    runs; otherwise fresh ancilla qubits are appended to the register.
    """
    if isinstance(circuit, OracleCircuit):
        if ancillas is None:
            ancillas = circuit.layout.v1 + circuit.layout.v2
        circ = circuit.circuit
    else:
        circ = circuit
    ancillas = list(ancillas or [])
    need = max((len(g.controls) - 2 for g in circ.gates if g.kind is GateKind.MCX), default=0)
    width = circ.num_qubits
    while len(ancillas) < need:
        ancillas.append(width)
        width += 1

    lines = [f"# {DIALECT}", f"qubits {width}"]
    body = []
    decomposed = 0
    for g in circ.gates:
        if g.kind is GateKind.MCX:
            decomposed += 1
            expanded = decompose_mcx(g, [a for a in ancillas if a not in g.qubits])
        else:
            expanded = [g]
        for e in expanded:
            ops = [_MNEMONIC[e.kind]]
            if e.kind in (GateKind.CPHASE, GateKind.PHASE):
                ops.append(repr(e.angle))
            ops += [str(q) for q in e.qubits]
            body.append(" ".join(ops))
    if decomposed:
        lines.append(f"# mcx-decomposed {decomposed} ancillas {' '.join(map(str, ancillas[:need]))}")
    return "\n".join(lines + body) + "\n"


_MNEMONIC_KIND = {v: k for k, v in _MNEMONIC.items()}


def parse_circuit_text(text: str) -> Circuit:
    """Inverse of :func:`export_circuit_text`."""
    width = None
    gates: list[GateOp] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = re.split(r"\s+", line)
        if head == "qubits":
            width = int(rest[0])
            continue
        kind = _MNEMONIC_KIND.get(head)
        if kind is None:
            raise ValueError(f"line {lineno}: unknown mnemonic {head!r}")
        angle = 0.0
        if kind in (GateKind.CPHASE, GateKind.PHASE):
            angle, rest = float(rest[0]), rest[1:]
        qs = [int(s) for s in rest]
        gates.append(GateOp(kind, tuple(qs[:-1]), (qs[-1],), angle))
    if width is None:
        raise ValueError("missing 'qubits' header")
    return Circuit(width, gates)
