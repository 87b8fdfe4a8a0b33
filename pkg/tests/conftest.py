import numpy as np
import pytest

from swing_spinn.netmodel import (BranchSpec, BusSpec, GeneratorSpec, NetworkCase, load_case,
                                  solve_power_flow, stage_models)
from swing_spinn.simulator import FaultSchedule


@pytest.fixture(scope="session")
def case():
    return load_case()


@pytest.fixture(scope="session")
def nominal(case):
    return case.nominal_oc()


@pytest.fixture(scope="session")
def nominal_models(case, nominal):
    return stage_models(case, nominal, FaultSchedule().fault_bus)


def two_bus_case(x=0.1, r=0.0, load=0j, v2=None, xd=0.2):
    """Slack generator at bus 0 feeding bus 1 over one line."""
    kind = "pv" if v2 is not None else "pq"
    buses = (BusSpec(0, "slack", 1.0), BusSpec(1, kind, v2))
    branches = (BranchSpec(0, 1, complex(r, x)),)
    gens = (GeneratorSpec(0, inertia=0.1, damping=0.1, transient_reactance=xd),)
    return NetworkCase(buses, branches, gens, 100.0, load_buses=(1,), nominal_loads=(load,), name="two-bus")


def random_small_case(rng, m=5):
    """Random connected ring network with two generators and loads on the rest."""
    buses = [BusSpec(0, "slack", 1.0), BusSpec(1, "pv", 1.0)] + [BusSpec(i, "pq") for i in range(2, m)]
    branches = []
    for i in range(m):
        j = (i + 1) % m
        branches.append(BranchSpec(i, j, complex(rng.uniform(0.0, 0.05), rng.uniform(0.05, 0.3)),
                                   rng.uniform(0.0, 0.3)))
    gens = (GeneratorSpec(0, 0.1, 0.1, rng.uniform(0.05, 0.3)),
            GeneratorSpec(1, 0.05, 0.05, rng.uniform(0.05, 0.3), p_set=rng.uniform(0.2, 0.8)))
    loads = tuple(complex(rng.uniform(0.1, 0.5), rng.uniform(0.0, 0.2)) for _ in range(2, m))
    return NetworkCase(tuple(buses), tuple(branches), gens, 100.0, tuple(range(2, m)), loads, "ring")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_bundle(rng, n_gen=1, n_feat=1, hidden=(4,), mode="spinn", nn2_angles="absolute"):
    """Small bundle with random weights and non-trivial normalization statistics."""
    from swing_spinn.dataset import Normalization
    from swing_spinn.netmodel import ReducedModel
    from swing_spinn.neural import MlpSpec
    from swing_spinn.training import ModelBundle, PinnPhysics
    s1 = MlpSpec((n_feat + 1, *hidden, 2 * n_gen))
    s2 = MlpSpec((2 * n_gen + n_feat, *hidden, 2 * n_gen))
    nz = Normalization(rng.normal(size=n_feat + 1), rng.uniform(0.5, 2.0, n_feat + 1),
                       rng.normal(size=2 * n_gen), rng.uniform(0.5, 2.0, 2 * n_gen),
                       rng.normal(size=2 * n_gen), rng.uniform(0.5, 2.0, 2 * n_gen))
    physics = None
    if mode == "pinn":
        def rm(stage):
            a = rng.normal(size=(n_gen, n_gen)) + 1j * rng.normal(size=(n_gen, n_gen))
            return ReducedModel(a + a.T, rng.uniform(0.9, 1.1, n_gen), np.zeros(n_gen),
                                rng.uniform(0.5, 1.5, n_gen), stage)
        physics = PinnPhysics(rm("fault"), rm("postfault"), 0.0, 0.1, 0)
    return ModelBundle(s1, rng.normal(0, 0.6, s1.n_params), s2, rng.normal(0, 0.6, s2.n_params),
                       rng.uniform(0.5, 2.0, n_gen), rng.uniform(0.0, 0.5, n_gen), nz, mode, physics,
                       rng.uniform(0.5, 2.0, 2 * n_gen), nn2_angles,
                       rng.normal(size=2 * n_gen), rng.uniform(0.5, 2.0, 2 * n_gen))


def random_batches(rng, n_gen, n_feat, n_lab=3, n_col=4):
    from swing_spinn.dataset import CollocationSet, LabeledSet
    lab = LabeledSet(np.arange(n_lab), rng.normal(size=(n_lab, n_feat)), rng.uniform(0, 0.3, n_lab),
                     rng.normal(size=(n_lab, 2 * n_gen)), rng.normal(size=(n_lab, 2 * n_gen)))
    col = CollocationSet(np.arange(n_col), rng.normal(size=(n_col, n_feat)), rng.uniform(0, 0.3, n_col))
    return lab, col


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] C{number:02d} {title}: {detail}")
