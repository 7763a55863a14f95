import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import INFLUENCE_TABLE, TABLE_IDS, reference_influence, spread_predicate, table_instance
from qinfluence.errors import PrecisionError
from qinfluence.oracle import (DIALECT, ComparatorPlan, PointFitInstance, QubitLayout,
                               build_bv_circuit, build_comparator_S2, build_selector_A,
                               build_selector_B, build_subtractor_S1, build_uf,
                               build_value_encoder, decompose_mcx,
                               preprocess_preserving, export_circuit_text,
                               parse_circuit_text, plan_comparator, preprocess,
                               read_instance_file)
from qinfluence.qsim import (Circuit, GateKind, QuantumState, apply_circuit, bit_marginals, h,
                             mcx, simulate)


def settle(circuit, bits: dict):
    """Run a circuit on a basis state; returns a reader for the output basis state's qubits."""
    idx = sum(b << q for q, b in bits.items())
    probs = simulate(circuit, idx).probabilities()
    out = int(np.argmax(probs))
    assert probs[out] == pytest.approx(1.0, abs=1e-9), "output is not a basis state"
    return lambda q: (out >> q) & 1


def reg_value(read, qubits):
    return sum(read(q) << k for k, q in enumerate(qubits))


def reg_string(read, qubits):
    return "".join(str(read(q)) for q in qubits)


def load(qubits, value):
    return {q: (value >> k) & 1 for k, q in enumerate(qubits)}


def z_bits(layout, z: str):
    return {layout.z[k]: int(c) for k, c in enumerate(z)}


# -- preprocess --------------------------------------------------------------

def test_preprocess_sorts_and_offsets():
    inst, perm = preprocess([2, 7, 5, 3], 3, 2)
    assert inst.values == (5, 3, 1, 0)
    assert inst.two_epsilon == 2
    assert perm == (1, 2, 3, 0)


def test_preprocess_identical_points():
    for C in (1, 2, 3):
        inst, _ = preprocess([4, 4], C, 1)
        assert inst.values == (0, 0)


def test_preprocess_scales_real_data():
    inst, perm = preprocess([0.9, 0.1, 0.5], 3, 0.2)
    assert inst.values == (7, 4, 0)
    assert inst.two_epsilon == 2
    assert perm == (0, 2, 1)


def test_preprocess_integer_span_too_wide_is_rescaled():
    inst, _ = preprocess([0, 10], 3, 4)
    assert inst.values == (7, 0)
    assert inst.two_epsilon == 3  # 4 * 0.7 = 2.8 -> 3


def test_preprocess_clamps_threshold():
    inst, _ = preprocess([0, 1], 1, 5)
    assert inst.two_epsilon == 1


@pytest.mark.parametrize("bad", [[float("nan"), 1.0], [1.0, float("inf")]])
def test_preprocess_non_finite(bad):
    with pytest.raises(PrecisionError):
        preprocess(bad, 3, 1)


def test_preprocess_argument_errors():
    with pytest.raises(ValueError):
        preprocess([], 3, 1)
    with pytest.raises(ValueError):
        preprocess([1, 2], 0, 1)
    with pytest.raises(ValueError):
        preprocess([1, 2], 3, -1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=1, max_size=6), st.integers(0, 7))
def test_preprocess_keeps_predicate_for_fitting_integers(values, te):
    inst, perm = preprocess(values, 3, te)
    assert sorted(perm) == list(range(len(values)))
    for mask in itertools.product((0, 1), repeat=len(values)):
        oracle_mask = [mask[perm[k]] for k in range(len(values))]
        assert spread_predicate(inst.values, oracle_mask, inst.two_epsilon) == spread_predicate(values, mask, te)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=4), st.floats(0, 30))
def test_preserving_quantisation_keeps_every_subset(values, te):
    inst, perm = preprocess_preserving(values, 3, te)
    assert sorted(perm) == list(range(len(values)))
    for mask in itertools.product((0, 1), repeat=len(values)):
        oracle_mask = [mask[perm[k]] for k in range(len(values))]
        assert spread_predicate(inst.values, oracle_mask, inst.two_epsilon) == spread_predicate(values, mask, te)


def test_preserving_quantisation_beats_rounding():
    # plain scaling maps the 3.0 gap between 6.9 and 3.9 below the rounded threshold
    vals, te = [6.9, 3.9, 1.4, 7.2], 2.9
    plain, perm = preprocess(vals, 3, te)
    kept, _ = preprocess_preserving(vals, 3, te)
    want = reference_influence([vals[k] for k in perm], te)
    assert reference_influence(kept.values, kept.two_epsilon) == want
    assert reference_influence(plain.values, plain.two_epsilon) != want


def test_preserving_falls_back_for_large_inputs():
    assert preprocess_preserving(list(range(6)), 3, 1) == preprocess(list(range(6)), 3, 1)


def test_instance_invariants():
    with pytest.raises(ValueError):
        PointFitInstance((0, 3), 3, 1)       # not decreasing
    with pytest.raises(ValueError):
        PointFitInstance((3, 1), 3, 1)       # no zero offset
    with pytest.raises(PrecisionError):
        PointFitInstance((8, 0), 3, 1)
    with pytest.raises(PrecisionError):
        PointFitInstance((7, 0), 3, 8)


def test_read_instance_file(tmp_path):
    f = tmp_path / "inst.txt"
    f.write_text("# four points\nC=3\ntwo_epsilon=2\n7\n5\n3\n2\n")
    assert read_instance_file(f) == ([7.0, 5.0, 3.0, 2.0], 3, 2.0)
    f.write_text("C=3\n7\n")
    with pytest.raises(ValueError):
        read_instance_file(f)


# -- layout ------------------------------------------------------------------

@pytest.mark.parametrize("N,C", [(1, 1), (2, 1), (3, 3), (4, 3), (5, 2)])
def test_layout_accounting(N, C):
    inst = PointFitInstance(tuple(range(N - 1, -1, -1)) if N <= (1 << C) else (0,) * N, C, 0)
    for with_b0 in (False, True):
        lay = QubitLayout.for_instance(inst, with_b0)
        regs = list(lay.z + lay.a1 + lay.a2 + lay.v1 + lay.v2) + [lay.y] + ([lay.b0] if with_b0 else [])
        assert len(regs) == len(set(regs)) == lay.num_qubits
        assert sorted(regs) == list(range(lay.num_qubits))
        assert lay.base_qubits == 3 * N + 2 * C + 1
        assert lay.num_qubits == 3 * N + 2 * C + 1 + with_b0


def test_largest_table_instance_qubits():
    inst, _ = preprocess([2, 3, 5, 7], 3, 2)
    assert QubitLayout.for_instance(inst).num_qubits == 19
    assert build_uf(inst).num_qubits == 20


# -- selectors and encoders ----------------------------------------------------

@pytest.fixture
def d7532():
    # worked example {7,5,3,2}; selectors and encoders do not need the offset,
    # so the instance is built with the raw values bypassing validation
    inst = object.__new__(PointFitInstance)
    object.__setattr__(inst, "values", (7, 5, 3, 2))
    object.__setattr__(inst, "bit_precision", 3)
    object.__setattr__(inst, "two_epsilon", 2)
    return inst, QubitLayout.for_instance(inst)


@pytest.mark.parametrize("z,a1", [("1011", "1000"), ("0000", "0000"), ("0110", "0100")])
def test_selector_A_examples(d7532, z, a1):
    inst, lay = d7532
    read = settle(build_selector_A(inst, lay), z_bits(lay, z))
    assert reg_string(read, lay.a1) == a1
    assert reg_string(read, lay.z) == z


@pytest.mark.parametrize("z,a2", [("1011", "0001"), ("0000", "0000"), ("1000", "1000")])
def test_selector_B_examples(d7532, z, a2):
    inst, lay = d7532
    read = settle(build_selector_B(inst, lay), z_bits(lay, z))
    assert reg_string(read, lay.a2) == a2


def test_selectors_exhaustive(d7532):
    inst, lay = d7532
    both = build_selector_A(inst, lay) + build_selector_B(inst, lay)
    for z in itertools.product("01", repeat=4):
        z = "".join(z)
        read = settle(both, z_bits(lay, z))
        first = z.find("1")
        last = z.rfind("1")
        want_a1 = "".join("1" if k == first else "0" for k in range(4))
        want_a2 = "".join("1" if k == last and last >= 0 else "0" for k in range(4))
        assert reg_string(read, lay.a1) == want_a1
        assert reg_string(read, lay.a2) == want_a2


def test_encoder_v1_example(d7532):
    inst, lay = d7532
    read = settle(build_value_encoder(inst, lay, "V1"), {lay.a1[0]: 1})
    assert reg_value(read, lay.v1) == 7


def test_encoder_no_selection(d7532):
    inst, lay = d7532
    read = settle(build_value_encoder(inst, lay, "V2"), {})
    assert reg_value(read, lay.v2) == 0


def test_encoder_v2_example():
    inst = PointFitInstance((5, 3, 1, 0), 3, 2)
    lay = QubitLayout.for_instance(inst)
    read = settle(build_value_encoder(inst, lay, "V2"), {lay.a2[2]: 1})
    assert reg_string(read, lay.v2[::-1]) == "001"


def test_encoder_rejects_unknown_register(d7532):
    inst, lay = d7532
    with pytest.raises(ValueError):
        build_value_encoder(inst, lay, "V3")


def test_encoder_every_point():
    inst = PointFitInstance((6, 5, 3, 0), 3, 1)
    lay = QubitLayout.for_instance(inst)
    for i, b in enumerate(inst.values):
        read = settle(build_value_encoder(inst, lay, "V1"), {lay.a1[i]: 1})
        assert reg_value(read, lay.v1) == b


# -- S1 subtractor -------------------------------------------------------------

@pytest.fixture(scope="module")
def s1_setup():
    inst = PointFitInstance((7, 0), 3, 0)
    lay = QubitLayout.for_instance(inst)
    return lay, build_subtractor_S1(lay)


def run_s1(s1_setup, a, b):
    lay, circ = s1_setup
    bits = {**load(lay.v1, a), **load(lay.v2, b)}
    read = settle(circ, bits)
    return reg_value(read, lay.v1), reg_value(read, lay.v2)


def test_s1_seven_minus_five(s1_setup):
    assert run_s1(s1_setup, 7, 5) == (7, 2)


def test_s1_minus_zero(s1_setup):
    for a in range(8):
        assert run_s1(s1_setup, a, 0) == (a, a)


def test_s1_exhaustive_ordered_pairs(s1_setup):
    pairs = [(a, b) for a in range(8) for b in range(a + 1)]
    assert len(pairs) == 36
    for a, b in pairs:
        assert run_s1(s1_setup, a, b) == (a, a - b)


def test_s1_wraps_modulo(s1_setup):
    assert run_s1(s1_setup, 2, 5) == (2, (2 - 5) % 8)


# -- S2 comparator -------------------------------------------------------------

def comparator_outputs(inst, plan):
    lay = QubitLayout.for_instance(inst, with_b0=plan.needs_b0)
    circ, f_out = build_comparator_S2(inst, lay, plan)
    out = []
    for diff in range(1 << inst.bit_precision):
        if f_out is None:
            out.append(0)
            continue
        read = settle(circ, load(lay.v2, diff))
        out.append(read(f_out))
    return out


def test_s2_boundary_is_feasible():
    inst = PointFitInstance((7, 0), 3, 2)
    f = comparator_outputs(inst, ComparatorPlan("borrow"))
    assert f[2] == 0 and f[0] == 0 and f[3] == 1


@pytest.mark.parametrize("C", [1, 2, 3])
def test_s2_generic_exhaustive(C):
    for te in range(1 << C):
        inst = PointFitInstance(((1 << C) - 1, 0), C, te)
        plan = plan_comparator(inst, "generic")
        assert comparator_outputs(inst, plan) == [int(d > te) for d in range(1 << C)]


def test_s2_threshold_overflow_is_constant():
    inst = PointFitInstance((7, 0), 3, 7)
    assert plan_comparator(inst, "generic").mode == "constant"
    lay = QubitLayout.for_instance(inst)
    circ, f_out = build_comparator_S2(inst, lay, plan_comparator(inst, "generic"))
    assert f_out is None and len(circ) == 0


def test_s2_borrow_output_is_b0():
    inst = PointFitInstance((7, 0), 3, 2)
    lay = QubitLayout.for_instance(inst, with_b0=True)
    circ, f_out = build_comparator_S2(inst, lay, ComparatorPlan("borrow"))
    assert f_out == lay.b0


def test_s2_single_bit_plan_for_c1():
    inst, _ = preprocess([0, 1], 1, 0)
    plan = plan_comparator(inst)
    assert plan == ComparatorPlan("bit", 0)
    lay = QubitLayout.for_instance(inst)
    circ, f_out = build_comparator_S2(inst, lay, plan)
    assert len(circ) == 0 and f_out == lay.v2[0]


def test_s2_borrow_needs_b0():
    inst = PointFitInstance((7, 0), 3, 2)
    with pytest.raises(ValueError):
        build_comparator_S2(inst, QubitLayout.for_instance(inst), ComparatorPlan("borrow"))


def test_plan_mode_validation():
    with pytest.raises(ValueError):
        plan_comparator(PointFitInstance((1, 0), 1, 0), "fast")


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 3).flatmap(lambda C: st.tuples(
    st.just(C), st.lists(st.integers(0, (1 << C) - 1), min_size=1, max_size=4), st.integers(0, (1 << C) - 1))))
def test_auto_plan_agrees_on_achievable_differences(args):
    C, raw, te = args
    inst, _ = preprocess(raw, C, te)
    plan = plan_comparator(inst)
    lay = QubitLayout.for_instance(inst, with_b0=plan.needs_b0)
    circ, f_out = build_comparator_S2(inst, lay, plan)
    for diff in inst.achievable_differences():
        if f_out is None:
            got = 0
        else:
            got = settle(circ, load(lay.v2, diff))(f_out)
        assert got == int(diff > inst.two_epsilon)


# -- U_f -------------------------------------------------------------------

def uf_truth_table(oracle):
    """f read from y for every basis z, asserting z and every ancilla come back clean."""
    lay = oracle.layout
    n = len(lay.z)
    table = []
    for m in range(1 << n):
        bits = {lay.z[k]: (m >> k) & 1 for k in range(n)}
        read = settle(oracle.circuit, bits)
        assert all(read(q) == bits[q] for q in lay.z)
        assert all(read(q) == 0 for q in lay.ancillas)
        table.append(read(lay.y))
    return table


def predicate_table(inst):
    n = inst.num_points
    return [spread_predicate(inst.values, [(m >> k) & 1 for k in range(n)], inst.two_epsilon)
            for m in range(1 << n)]


def test_uf_worked_example():
    inst, perm = preprocess([7, 5, 3, 2], 3, 2)
    assert perm == (0, 1, 2, 3)
    oracle = build_uf(inst)
    lay = oracle.layout
    read = settle(oracle.circuit, z_bits(lay, "1011"))
    assert read(lay.y) == 1
    read = settle(oracle.circuit, {})
    assert read(lay.y) == 0


@pytest.mark.parametrize("row", [r for r in INFLUENCE_TABLE if len(r[0]) < 4], ids=TABLE_IDS[:-1])
def test_uf_truth_table_small_table_rows(row):
    inst, _ = table_instance(row)
    for mode in ("auto", "generic"):
        assert uf_truth_table(build_uf(inst, mode)) == predicate_table(inst)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3).flatmap(lambda C: st.tuples(
    st.just(C), st.lists(st.integers(0, (1 << C) - 1), min_size=1, max_size=3), st.integers(0, (1 << C) - 1))),
    st.sampled_from(["auto", "generic"]))
def test_uf_truth_table_random(args, mode):
    C, raw, te = args
    inst, _ = preprocess(raw, C, te)
    assert uf_truth_table(build_uf(inst, mode)) == predicate_table(inst)


def test_uf_y_one_is_flipped_back():
    inst, _ = preprocess([0, 3, 1], 2, 1)
    oracle = build_uf(inst)
    lay = oracle.layout
    for m in range(8):
        bits = {lay.z[k]: (m >> k) & 1 for k in range(3)}
        bits[lay.y] = 1
        want = 1 ^ predicate_table(inst)[m]
        assert settle(oracle.circuit, bits)(lay.y) == want


@pytest.mark.parametrize("raw,C,te,mode", [([0, 3, 1], 2, 1, "auto"), ([2, 4, 7], 3, 3, "generic")])
def test_uf_is_involution_on_random_states(raw, C, te, mode, rng):
    oracle = build_uf(preprocess(raw, C, te)[0], mode)
    n = oracle.num_qubits
    amps = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    s = QuantumState(n, amps / np.linalg.norm(amps))
    before = s.amplitudes.copy()
    apply_circuit(s, oracle.circuit + oracle.circuit)
    np.testing.assert_allclose(s.amplitudes, before, atol=1e-9)


def test_uf_constant_is_empty():
    inst, _ = preprocess([0, 1], 1, 1)
    oracle = build_uf(inst)
    assert oracle.f_output is None and len(oracle.circuit) == 0


# -- BV ------------------------------------------------------------------------

def bv_marginals(inst, mode="auto"):
    bv = build_bv_circuit(inst, mode)
    return bit_marginals(simulate(bv.circuit), bv.layout.z)


def test_bv_zero_row():
    inst, _ = preprocess([0, 1], 1, 1)
    np.testing.assert_allclose(bv_marginals(inst), [0, 0], atol=1e-9)


def test_bv_three_point_row_matches_brute_force():
    inst, perm = preprocess([2, 4, 7], 3, 3)
    got = bv_marginals(inst)
    want = [float(a) for a in reference_influence(inst.values, inst.two_epsilon)]
    np.testing.assert_allclose(got, want, atol=1e-9)
    # in caller order {2,4,7}: the ends flip the outcome half the time, the middle never
    caller = np.empty(3)
    caller[list(perm)] = got
    np.testing.assert_allclose(caller, [0.5, 0.0, 0.5], atol=1e-9)


@pytest.mark.parametrize("row", INFLUENCE_TABLE, ids=TABLE_IDS)
def test_bv_marginal_law(row):
    inst, _ = table_instance(row)
    want = [float(a) for a in reference_influence(inst.values, inst.two_epsilon)]
    np.testing.assert_allclose(bv_marginals(inst), want, atol=1e-9)


def test_bv_generic_comparator_same_law():
    inst, _ = preprocess([2, 4, 7], 3, 3)
    np.testing.assert_allclose(bv_marginals(inst, "generic"), bv_marginals(inst), atol=1e-9)


def test_bv_y_ends_in_minus_state():
    inst, _ = preprocess([0, 2], 2, 1)
    bv = build_bv_circuit(inst)
    s = simulate(bv.circuit)
    # y stays in |-> so its Z-basis marginal is 1/2
    assert bit_marginals(s, [bv.layout.y])[0] == pytest.approx(0.5, abs=1e-9)


# -- export ------------------------------------------------------------------

def test_export_empty_circuit():
    text = export_circuit_text(Circuit(2))
    assert text == f"# {DIALECT}\nqubits 2\n"


def test_export_single_h():
    lines = export_circuit_text(Circuit(1, [h(0)])).splitlines()
    assert lines == [f"# {DIALECT}", "qubits 1", "h 0"]


def test_export_is_deterministic():
    inst, _ = preprocess([2, 4, 7], 3, 3)
    assert export_circuit_text(build_bv_circuit(inst)) == export_circuit_text(build_bv_circuit(inst))


@pytest.mark.parametrize("raw,C,te,mode", [([2, 4, 7], 3, 3, "auto"), ([0, 3, 1], 2, 1, "generic")])
def test_export_round_trip_oracle(raw, C, te, mode):
    bv = build_bv_circuit(preprocess(raw, C, te)[0], mode)
    text = export_circuit_text(bv)
    assert not any(line.startswith("mcx") for line in text.splitlines())
    assert "# mcx-decomposed" in text
    parsed = parse_circuit_text(text)
    assert parsed.num_qubits == bv.circuit.num_qubits
    np.testing.assert_allclose(simulate(parsed).amplitudes, simulate(bv.circuit).amplitudes, atol=1e-9)


def test_export_round_trip_with_fresh_ancillas(rng):
    circ = Circuit(5, [h(0), h(1), h(2), h(3), mcx([0, 1, 2, 3], 4)])
    parsed = parse_circuit_text(export_circuit_text(circ))
    assert parsed.num_qubits == 7
    want = simulate(circ).amplitudes
    got = simulate(parsed).amplitudes
    np.testing.assert_allclose(got[: 1 << 5], want, atol=1e-9)
    assert np.abs(got[1 << 5:]).max() < 1e-12


def test_decompose_mcx_exhaustive():
    gate = mcx([0, 1, 2, 3, 4], 5)
    chain = decompose_mcx(gate, [6, 7, 8])
    assert all(g.kind is GateKind.CCNOT for g in chain)
    full = Circuit(9, chain)
    for m in range(1 << 6):
        read = settle(full, {q: (m >> q) & 1 for q in range(6)})
        want_t = ((m >> 5) & 1) ^ int(all((m >> q) & 1 for q in range(5)))
        assert read(5) == want_t
        assert all(read(a) == 0 for a in (6, 7, 8))


def test_decompose_mcx_needs_ancillas():
    with pytest.raises(ValueError):
        decompose_mcx(mcx([0, 1, 2, 3], 4), [5])


def test_parse_errors():
    with pytest.raises(ValueError):
        parse_circuit_text("h 0\n")
    with pytest.raises(ValueError):
        parse_circuit_text("qubits 1\nfoo 0\n")
