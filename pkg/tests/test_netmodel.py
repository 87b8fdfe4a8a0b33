import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swing_spinn.netmodel import (AdmittanceMatrix, NetworkCase, NetworkError, OperatingCondition, PowerFlowError,
                                  ReducedModel, BusSpec, BranchSpec, GeneratorSpec, build_admittance,
                                  bus_admittance, case_from_dict, case_to_dict, electrical_power, init_prefault,
                                  kron_reduce, load_case, power_mismatch, save_case, solve_power_flow, stage_models)
from swing_spinn.simulator import swing_rhs

from conftest import random_small_case, two_bus_case
from oracles import full_network_currents, gauss_seidel_power_flow, naive_ybus, trig_power


# --- case file -------------------------------------------------------------

def test_bundled_case_shape(case):
    assert case.n_buses == 9
    assert case.n_gen == 3
    assert list(case.load_buses) == [4, 5, 7]
    assert case.buses[6].name == "7"
    np.testing.assert_allclose(case.nominal_loads, [1.25 + 0.45j, 0.95 + 0.25j, 1.0 + 0.3j])


def test_case_round_trip(case, tmp_path):
    save_case(case, tmp_path / "c.json")
    again = load_case(tmp_path / "c.json")
    assert case_to_dict(again) == case_to_dict(case)


def test_case_schema_version_checked(case):
    d = case_to_dict(case)
    d["schema_version"] = 99
    with pytest.raises(NetworkError):
        case_from_dict(d)


@pytest.mark.parametrize("bad", [
    lambda: BranchSpec(0, 1, 0j),
    lambda: BranchSpec(2, 2, 0.1j),
    lambda: GeneratorSpec(0, inertia=0.0, damping=0.1, transient_reactance=0.1),
    lambda: GeneratorSpec(0, inertia=0.1, damping=-1.0, transient_reactance=0.1),
    lambda: GeneratorSpec(0, inertia=0.1, damping=0.1, transient_reactance=0.0),
    lambda: BusSpec(0, "slack"),
    lambda: BusSpec(0, "swing", 1.0),
])
def test_spec_invariants(bad):
    with pytest.raises(NetworkError):
        bad()


def test_case_needs_one_slack():
    buses = (BusSpec(0, "pv", 1.0), BusSpec(1, "pq"))
    with pytest.raises(NetworkError, match="slack"):
        NetworkCase(buses, (BranchSpec(0, 1, 0.1j),), (GeneratorSpec(0, 1, 1, 0.1),), 100.0, (1,))


def test_oc_features_round_trip(nominal):
    f = nominal.features()
    np.testing.assert_array_equal(f, [1.25, 0.45, 0.95, 0.25, 1.0, 0.3])
    np.testing.assert_array_equal(OperatingCondition.from_features(f).loads, nominal.loads)


# --- admittance ------------------------------------------------------------

def test_two_node_identity():
    # bare line z = j0.1: off-diagonal -1/(j0.1) = j10, diagonals -j10
    y = bus_admittance(two_bus_case(x=0.1))
    np.testing.assert_allclose(y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_prefault_matrix_is_12x12_and_symmetric(case, nominal):
    y = build_admittance(case, nominal, "prefault")
    assert y.order == 12
    assert y.entries.shape == (12, 12)
    np.testing.assert_array_equal(y.entries, y.entries.T)


def test_bus_admittance_matches_naive_assembler(case):
    np.testing.assert_allclose(bus_admittance(case), naive_ybus(case), rtol=0, atol=1e-12)


def test_row_sums_equal_shunts_without_charging(rng):
    base = random_small_case(rng)
    branches = tuple(BranchSpec(b.from_bus, b.to_bus, b.series_impedance, 0.0) for b in base.branches)
    buses = tuple(BusSpec(b.id, b.kind, b.voltage_setpoint, complex(0.0, 0.01 * b.id)) for b in base.buses)
    c = NetworkCase(buses, branches, base.generators, 100.0, base.load_buses, base.nominal_loads)
    y = bus_admittance(c)
    np.testing.assert_allclose(y.sum(axis=1), [b.shunt for b in buses], atol=1e-12)
    np.testing.assert_allclose(y, naive_ybus(c), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_admittance_symmetry_property(seed):
    rng = np.random.default_rng(seed)
    c = random_small_case(rng)
    oc = c.nominal_oc()
    pf = solve_power_flow(c, oc)
    for stage, fb in (("prefault", None), ("fault", 3), ("postfault", None)):
        y = build_admittance(c, oc, stage, pf, fault_bus=fb).entries
        assert np.array_equal(y, y.T)


def test_fault_stage_removes_bus(case, nominal, nominal_models):
    pf = nominal_models.pf
    y = build_admittance(case, nominal, "fault", pf, fault_bus=6)
    assert y.order == 11
    assert 6 not in y.node_labels
    full = build_admittance(case, nominal, "postfault", pf)
    keep = [i for i in range(12) if i != 6]
    np.testing.assert_array_equal(y.entries, full.entries[np.ix_(keep, keep)])


def test_postfault_equals_prefault_with_loads(case, nominal, nominal_models):
    pf = nominal_models.pf
    a = build_admittance(case, nominal, "postfault", pf).entries
    b = build_admittance(case, nominal, "prefault", pf).entries
    np.testing.assert_array_equal(a, b)


def test_fault_bus_validation(case, nominal, nominal_models):
    pf = nominal_models.pf
    with pytest.raises(NetworkError, match="internal node"):
        build_admittance(case, nominal, "fault", pf, fault_bus=10)
    with pytest.raises(NetworkError, match="unknown fault bus"):
        build_admittance(case, nominal, "fault", pf, fault_bus=42)
    with pytest.raises(NetworkError, match="power-flow"):
        build_admittance(case, nominal, "fault", None, fault_bus=6)
    with pytest.raises(NetworkError, match="stage"):
        build_admittance(case, nominal, "islanded")


# --- Kron reduction ---------------------------------------------------------

def test_kron_keep_all_is_identity(case, nominal):
    y = build_admittance(case, nominal, "prefault")
    np.testing.assert_array_equal(kron_reduce(y, list(range(12))), y.entries)


def test_kron_star_delta():
    # three arms of admittance y meeting at a centre node 3
    yv = 2.0 - 5.0j
    Y = np.zeros((4, 4), dtype=complex)
    for k in range(3):
        Y[k, k] += yv
        Y[3, 3] += yv
        Y[k, 3] -= yv
        Y[3, k] -= yv
    yr = kron_reduce(AdmittanceMatrix(Y, (0, 1, 2, 3)), [0, 1, 2])
    # star-delta: each delta branch is y*y/(3y) = y/3
    expect = np.full((3, 3), -yv / 3)
    np.fill_diagonal(expect, 2 * yv / 3)
    np.testing.assert_allclose(yr, expect, atol=1e-12)
    v = np.array([1.0, 0.9j, -0.3 + 0.2j])
    np.testing.assert_allclose(yr @ v, full_network_currents(Y, [0, 1, 2], v), atol=1e-12)


def test_kron_matches_full_solve_for_random_voltages(case, nominal_models, nominal):
    y = build_admittance(case, nominal, "prefault", nominal_models.pf)
    yr = kron_reduce(y, case.internal_nodes)
    rng = np.random.default_rng(7)
    for _ in range(10):
        v = rng.normal(size=3) + 1j * rng.normal(size=3)
        ref = full_network_currents(y.entries, case.internal_nodes, v)
        assert np.max(np.abs(yr @ v - ref)) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kron_exactness_property(seed):
    rng = np.random.default_rng(seed)
    c = random_small_case(rng)
    oc = c.nominal_oc()
    pf = solve_power_flow(c, oc)
    y = build_admittance(c, oc, "postfault", pf)
    yr = kron_reduce(y, c.internal_nodes)
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    np.testing.assert_allclose(yr @ v, full_network_currents(y.entries, c.internal_nodes, v), atol=1e-10)
    np.testing.assert_allclose(yr, yr.T, atol=1e-12)


def test_kron_rejects_isolated_island():
    Y = np.zeros((3, 3), dtype=complex)
    Y[0, 0] = Y[1, 1] = 1 - 1j
    Y[0, 1] = Y[1, 0] = -1 + 1j
    with pytest.raises(NetworkError, match="singular"):
        kron_reduce(AdmittanceMatrix(Y, (0, 1, 2)), [0, 1])
    with pytest.raises(NetworkError):
        kron_reduce(AdmittanceMatrix(Y, (0, 1, 2)), [0, 7])


# --- power flow --------------------------------------------------------------

def test_two_bus_zero_load_flat():
    c = two_bus_case(load=0j)
    pf = solve_power_flow(c, c.nominal_oc())
    assert pf.iterations <= 1
    np.testing.assert_allclose(pf.voltages, [1.0, 1.0], atol=1e-12)


def test_nominal_power_flow(case, nominal):
    pf = solve_power_flow(case, nominal)
    assert pf.mismatch_norm < 1e-8
    assert pf.iterations <= 10
    # certificate: recomputed from scratch at the returned voltages
    assert power_mismatch(case, nominal, pf.voltages) < 1e-8


def test_nominal_matches_gauss_seidel(case, nominal):
    pf = solve_power_flow(case, nominal)
    gs = gauss_seidel_power_flow(case, nominal.loads)
    np.testing.assert_allclose(pf.voltages.real, gs.real, atol=1e-6)
    np.testing.assert_allclose(pf.voltages.imag, gs.imag, atol=1e-6)


# loads of the textbook WSCC load flow; the bundled nominal loads differ slightly
TEXTBOOK_LOADS = np.array([1.25 + 0.5j, 0.9 + 0.3j, 1.0 + 0.35j])


def test_textbook_voltages(case):
    # WSCC 9-bus load-flow solution (Anderson & Fouad), rounded to 3 decimals / 0.01 deg
    pf = solve_power_flow(case, OperatingCondition(TEXTBOOK_LOADS))
    mags = [1.040, 1.025, 1.025, 1.026, 0.996, 1.013, 1.026, 1.016, 1.032]
    angs = [0.0, 9.28, 4.66, -2.22, -3.99, -3.69, 3.72, 0.73, 1.97]
    np.testing.assert_allclose(np.abs(pf.voltages), mags, atol=6e-4)
    np.testing.assert_allclose(np.degrees(np.angle(pf.voltages)), angs, atol=6e-3)


def test_power_flow_failure_carries_mismatch(case):
    oc = OperatingCondition(np.array([20 + 10j, 20 + 10j, 20 + 10j]))
    with pytest.raises(PowerFlowError) as info:
        solve_power_flow(case, oc, max_iter=5)
    assert info.value.iterations <= 5
    assert info.value.mismatch > 1e-8


def test_power_flow_input_validation(case):
    with pytest.raises(NetworkError):
        solve_power_flow(case, OperatingCondition(np.array([1.0 + 0j])))
    with pytest.raises(NetworkError):
        solve_power_flow(case, OperatingCondition(np.array([np.nan, 1, 1], dtype=complex)))


# --- classical machine algebra ------------------------------------------------

def test_eq5_closure(nominal_models):
    pre = nominal_models.prefault
    np.testing.assert_allclose(electrical_power(pre, pre.delta0), pre.p_mech, atol=1e-9)


def test_mechanical_power_balances_load_and_losses(case, nominal, nominal_models):
    pf = nominal_models.pf
    v = pf.voltages
    # network losses from branch flows, computed branch by branch
    losses = 0.0
    for br in case.branches:
        f, t = br.from_bus, br.to_bus
        i_ser = (v[f] - v[t]) / br.series_impedance
        losses += abs(i_ser) ** 2 * br.series_impedance.real
    total_load = nominal.loads.real.sum()
    assert abs(nominal_models.prefault.p_mech.sum() - (total_load + losses)) < 1e-8


def test_textbook_mechanical_power(case):
    # slack dispatch 0.716 p.u. in the textbook load flow; the others sit at their set-points
    models = stage_models(case, OperatingCondition(TEXTBOOK_LOADS), 6)
    np.testing.assert_allclose(models.prefault.p_mech, [0.716, 1.63, 0.85], atol=1e-3)


def test_zero_current_generator_emf_equals_terminal():
    c = two_bus_case(load=0j)
    oc = c.nominal_oc()
    pf = solve_power_flow(c, oc)
    rm = init_prefault(c, oc, pf)
    np.testing.assert_allclose(rm.v0_mag, np.abs(pf.voltages[[0]]), atol=1e-12)
    np.testing.assert_allclose(rm.delta0, np.angle(pf.voltages[[0]]), atol=1e-12)


def test_equilibrium_residual(case, nominal_models):
    pre = nominal_models.prefault
    x = np.concatenate([pre.delta0, np.zeros(3)])
    assert np.max(np.abs(swing_rhs(x, pre, case.inertia, case.damping))) < 1e-9


def test_reduced_matrices_symmetric(nominal_models):
    for rm in (nominal_models.prefault, nominal_models.fault, nominal_models.postfault):
        np.testing.assert_allclose(rm.y_reduced, rm.y_reduced.T, atol=1e-12)


def _toy_rm(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    yr = a + a.T
    return ReducedModel(yr, rng.uniform(0.9, 1.2, 2), rng.normal(size=2), np.zeros(2))


def test_electrical_power_matches_trig_expansion(rng):
    for _ in range(20):
        rm = _toy_rm(rng)
        d = rng.uniform(-3, 3, 2)
        np.testing.assert_allclose(electrical_power(rm, d), trig_power(rm.y_reduced, rm.v0_mag, d), atol=1e-12)


def test_electrical_power_batched(nominal_models, rng):
    rm = nominal_models.fault
    d = rng.normal(size=(4, 5, 3))
    out = electrical_power(rm, d)
    assert out.shape == (4, 5, 3)
    np.testing.assert_allclose(out[2, 3], electrical_power(rm, d[2, 3]), atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3), st.floats(-10, 10))
def test_phase_shift_invariance(delta, c):
    case = load_case()
    rm = stage_models(case, case.nominal_oc(), 6).postfault
    d = np.array(delta)
    np.testing.assert_allclose(electrical_power(rm, d + c), electrical_power(rm, d), atol=1e-12)


def test_stage_models_share_initial_state(nominal_models):
    pre, fault, post = nominal_models.prefault, nominal_models.fault, nominal_models.postfault
    for rm in (fault, post):
        np.testing.assert_array_equal(rm.delta0, pre.delta0)
        np.testing.assert_array_equal(rm.p_mech, pre.p_mech)
    np.testing.assert_array_equal(post.y_reduced, pre.y_reduced)
    assert fault.stage == "fault"
    assert not np.allclose(fault.y_reduced, pre.y_reduced)
