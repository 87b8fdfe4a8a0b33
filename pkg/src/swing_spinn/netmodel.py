"""Network model: admittance assembly, Kron reduction, power flow and the
classical-machine algebraic equations.

Node numbering of every augmented admittance matrix is ``0..m-1`` for the
physical buses followed by ``m..m+n-1`` for the generator internal nodes
(internal EMF behind transient reactance), in generator order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

BUS_KINDS = ("slack", "pv", "pq")
STAGES = ("prefault", "fault", "postfault")


class NetworkError(ValueError):
    """Invalid network data or an ill-posed network operation."""


class PowerFlowError(RuntimeError):
    """Newton-Raphson did not converge; carries the last mismatch."""

    def __init__(self, message, mismatch, iterations):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


def _cplx(pair):
    re, im = pair
    return complex(float(re), float(im))


def _pair(z):
    z = complex(z)
    return [z.real, z.imag]


@dataclass(frozen=True)
class BusSpec:
    id: int
    kind: str
    voltage_setpoint: float | None = None
    shunt: complex = 0j
    name: str = ""

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise NetworkError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.kind in ("slack", "pv") and self.voltage_setpoint is None:
            raise NetworkError(f"bus {self.id}: {self.kind} bus needs a voltage setpoint")


@dataclass(frozen=True)
class BranchSpec:
    from_bus: int
    to_bus: int
    series_impedance: complex
    total_charging: float = 0.0

    def __post_init__(self):
        if self.series_impedance == 0:
            raise NetworkError("branch series impedance must be non-zero")
        if self.from_bus == self.to_bus:
            raise NetworkError(f"branch loops on bus {self.from_bus}")


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    inertia: float
    damping: float
    transient_reactance: float
    p_set: float = 0.0

    def __post_init__(self):
        if not self.inertia > 0:
            raise NetworkError(f"generator at bus {self.bus}: inertia must be > 0")
        if not self.damping >= 0:
            raise NetworkError(f"generator at bus {self.bus}: damping must be >= 0")
        if not self.transient_reactance > 0:
            raise NetworkError(f"generator at bus {self.bus}: x'd must be > 0")


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[BusSpec, ...]
    branches: tuple[BranchSpec, ...]
    generators: tuple[GeneratorSpec, ...]
    base_mva: float
    load_buses: tuple[int, ...]
    nominal_loads: tuple[complex, ...] = ()
    name: str = ""
    frequency_hz: float = 60.0

    def __post_init__(self):
        m = len(self.buses)
        if [b.id for b in self.buses] != list(range(m)):
            raise NetworkError("bus ids must be dense 0..m-1 in order")
        if sum(b.kind == "slack" for b in self.buses) != 1:
            raise NetworkError("exactly one slack bus is required")
        n = len(self.generators)
        if not 0 < n < m:
            raise NetworkError("need 0 < n_generators < n_buses")
        for g in self.generators:
            if not 0 <= g.bus < m:
                raise NetworkError(f"generator bus {g.bus} does not exist")
        for br in self.branches:
            if not (0 <= br.from_bus < m and 0 <= br.to_bus < m):
                raise NetworkError(f"branch {br.from_bus}-{br.to_bus} references a missing bus")
        for b in self.load_buses:
            if not 0 <= b < m:
                raise NetworkError(f"load bus {b} is not a physical bus")
        if self.nominal_loads and len(self.nominal_loads) != len(self.load_buses):
            raise NetworkError("nominal_loads length must match load_buses")

    @property
    def n_buses(self):
        return len(self.buses)

    @property
    def n_gen(self):
        return len(self.generators)

    @property
    def inertia(self):
        return np.array([g.inertia for g in self.generators])

    @property
    def damping(self):
        return np.array([g.damping for g in self.generators])

    @property
    def internal_nodes(self):
        m = self.n_buses
        return list(range(m, m + self.n_gen))

    def nominal_oc(self, id=0):
        return OperatingCondition(loads=np.array(self.nominal_loads, dtype=complex), id=id)


@dataclass(frozen=True, eq=False)
class OperatingCondition:
    loads: np.ndarray
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "loads", np.asarray(self.loads, dtype=complex))

    def features(self):
        """Real feature vector ``[P_1, Q_1, P_2, Q_2, ...]`` used as network input."""
        return np.column_stack([self.loads.real, self.loads.imag]).ravel()

    @classmethod
    def from_features(cls, feats, id=0):
        feats = np.asarray(feats, dtype=float).reshape(-1, 2)
        return cls(loads=feats[:, 0] + 1j * feats[:, 1], id=id)


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    entries: np.ndarray
    node_labels: tuple[int, ...]

    @property
    def order(self):
        return len(self.node_labels)


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    voltages: np.ndarray
    iterations: int
    mismatch_norm: float


@dataclass(frozen=True, eq=False)
class ReducedModel:
    y_reduced: np.ndarray
    v0_mag: np.ndarray
    delta0: np.ndarray
    p_mech: np.ndarray
    stage: str = "prefault"

    def with_network(self, y_reduced, stage):
        return ReducedModel(y_reduced, self.v0_mag, self.delta0, self.p_mech, stage)


@dataclass(frozen=True, eq=False)
class StageModels:
    """The three reduced models of one operating condition."""

    prefault: ReducedModel
    fault: ReducedModel
    postfault: ReducedModel
    pf: PowerFlowSolution = field(repr=False)


# -- case file ---------------------------------------------------------------

def case_to_dict(case: NetworkCase) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": case.name,
        "base_mva": case.base_mva,
        "frequency_hz": case.frequency_hz,
        "buses": [
            {"id": b.id, "name": b.name, "kind": b.kind,
             "voltage_setpoint": b.voltage_setpoint, "shunt": _pair(b.shunt)}
            for b in case.buses
        ],
        "branches": [
            {"from_bus": br.from_bus, "to_bus": br.to_bus,
             "series_impedance": _pair(br.series_impedance),
             "total_charging": br.total_charging}
            for br in case.branches
        ],
        "generators": [
            {"bus": g.bus, "inertia": g.inertia, "damping": g.damping,
             "transient_reactance": g.transient_reactance, "p_set": g.p_set}
            for g in case.generators
        ],
        "load_buses": list(case.load_buses),
        "nominal_loads": [_pair(s) for s in case.nominal_loads],
    }


def case_from_dict(d: dict) -> NetworkCase:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise NetworkError(f"unsupported case schema_version {d.get('schema_version')!r}")
    buses = tuple(
        BusSpec(id=int(b["id"]), kind=b["kind"], voltage_setpoint=b.get("voltage_setpoint"),
                shunt=_cplx(b.get("shunt", [0.0, 0.0])), name=b.get("name", ""))
        for b in d["buses"]
    )
    branches = tuple(
        BranchSpec(int(b["from_bus"]), int(b["to_bus"]), _cplx(b["series_impedance"]),
                   float(b.get("total_charging", 0.0)))
        for b in d["branches"]
    )
    gens = tuple(
        GeneratorSpec(bus=int(g["bus"]), inertia=float(g["inertia"]), damping=float(g["damping"]),
                      transient_reactance=float(g["transient_reactance"]),
                      p_set=float(g.get("p_set", 0.0)))
        for g in d["generators"]
    )
    return NetworkCase(
        buses=buses, branches=branches, generators=gens, base_mva=float(d["base_mva"]),
        load_buses=tuple(int(b) for b in d["load_buses"]),
        nominal_loads=tuple(_cplx(s) for s in d.get("nominal_loads", [])),
        name=d.get("name", ""), frequency_hz=float(d.get("frequency_hz", 60.0)),
    )


def load_case(path=None) -> NetworkCase:
    """Load a case file; ``None`` loads the bundled WSCC 9-bus case."""
    if path is None:
        text = resources.files("swing_spinn").joinpath("cases/wscc9.json").read_text()
    else:
        text = Path(path).read_text()
    return case_from_dict(json.loads(text))


def save_case(case: NetworkCase, path):
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2))


# -- admittance --------------------------------------------------------------

def bus_admittance(case: NetworkCase) -> np.ndarray:
    """Physical m x m bus admittance matrix (branches, charging, bus shunts)."""
    m = case.n_buses
    y = np.zeros((m, m), dtype=complex)
    for br in case.branches:
        ys = 1.0 / br.series_impedance
        ysh = 0.5j * br.total_charging
        f, t = br.from_bus, br.to_bus
        y[f, f] += ys + ysh
        y[t, t] += ys + ysh
        y[f, t] -= ys
        y[t, f] -= ys
    for b in case.buses:
        y[b.id, b.id] += b.shunt
    return y


def load_admittances(case: NetworkCase, oc: OperatingCondition, pf: PowerFlowSolution):
    """Constant-impedance equivalent (P - jQ)/|V|^2 of each load at the pre-fault voltage."""
    vmag = np.abs(pf.voltages[list(case.load_buses)])
    return np.conj(oc.loads) / vmag**2


def build_admittance(case: NetworkCase, oc: OperatingCondition | None = None,
                     stage="prefault", pf: PowerFlowSolution | None = None,
                     fault_bus: int | None = None) -> AdmittanceMatrix:
    """Augmented (m+n)-node admittance matrix for one network stage.

    Loads are stamped as shunt admittances when ``pf`` is given, which is
    required for the ``fault`` and ``postfault`` stages.  For the fault stage
    the bolted bus is grounded, i.e. its row and column are removed.
    """
    if stage not in STAGES:
        raise NetworkError(f"unknown stage {stage!r}")
    m, n = case.n_buses, case.n_gen
    if stage != "prefault" and pf is None:
        raise NetworkError(f"stage {stage!r} needs a power-flow solution")
    if stage == "fault":
        if fault_bus is None:
            raise NetworkError("fault stage needs a fault bus")
        if fault_bus >= m and fault_bus < m + n:
            raise NetworkError(f"node {fault_bus} is a generator internal node, not a bus")
        if not 0 <= fault_bus < m:
            raise NetworkError(f"unknown fault bus {fault_bus}")

    y = np.zeros((m + n, m + n), dtype=complex)
    y[:m, :m] = bus_admittance(case)
    if pf is not None:
        if oc is None:
            raise NetworkError("load stamping needs an operating condition")
        for b, yl in zip(case.load_buses, load_admittances(case, oc, pf)):
            y[b, b] += yl
    for k, g in enumerate(case.generators):
        yg = 1.0 / (1j * g.transient_reactance)
        i, j = g.bus, m + k
        y[i, i] += yg
        y[j, j] += yg
        y[i, j] -= yg
        y[j, i] -= yg

    labels = list(range(m + n))
    if stage == "fault":
        keep = [i for i in labels if i != fault_bus]
        y = y[np.ix_(keep, keep)]
        labels = keep
    return AdmittanceMatrix(entries=y, node_labels=tuple(labels))


def kron_reduce(y: AdmittanceMatrix, keep) -> np.ndarray:
    """Schur complement ``Y_g - Y_b Y_e^{-1} Y_c`` onto the ``keep`` nodes."""
    pos = {lab: i for i, lab in enumerate(y.node_labels)}
    try:
        k_idx = [pos[lab] for lab in keep]
    except KeyError as exc:
        raise NetworkError(f"node {exc.args[0]} not in matrix") from None
    e_idx = [i for i in range(y.order) if i not in set(k_idx)]
    Y = y.entries
    yg = Y[np.ix_(k_idx, k_idx)]
    if not e_idx:
        return yg.copy()
    ye = Y[np.ix_(e_idx, e_idx)]
    yc = Y[np.ix_(e_idx, k_idx)]
    yb = Y[np.ix_(k_idx, e_idx)]
    # cond check: a floating eliminated island makes Y_e exactly singular
    if np.linalg.cond(ye) > 1e14:
        raise NetworkError("eliminated block is singular (isolated subnetwork)")
    return yg - yb @ np.linalg.solve(ye, yc)


# -- power flow --------------------------------------------------------------

def _specified_injections(case: NetworkCase, oc: OperatingCondition):
    s = np.zeros(case.n_buses, dtype=complex)
    for g in case.generators:
        s[g.bus] += g.p_set
    for b, load in zip(case.load_buses, oc.loads):
        s[b] -= load
    return s


def power_mismatch(case: NetworkCase, oc: OperatingCondition, v: np.ndarray) -> float:
    """Max-norm of the P (pv, pq) and Q (pq) mismatches at voltages ``v``."""
    ybus = bus_admittance(case)
    s_calc = v * np.conj(ybus @ v)
    ds = _specified_injections(case, oc) - s_calc
    kinds = [b.kind for b in case.buses]
    dp = [ds[i].real for i, k in enumerate(kinds) if k != "slack"]
    dq = [ds[i].imag for i, k in enumerate(kinds) if k == "pq"]
    return float(np.max(np.abs(np.r_[dp, dq]))) if dp or dq else 0.0


def solve_power_flow(case: NetworkCase, oc: OperatingCondition, tol=1e-8, max_iter=20) -> PowerFlowSolution:
    """Polar Newton-Raphson from a flat start."""
    if len(oc.loads) != len(case.load_buses):
        raise NetworkError("operating condition size does not match load buses")
    if not np.all(np.isfinite(oc.loads)):
        raise NetworkError("operating condition has non-finite loads")
    ybus = bus_admittance(case)
    m = case.n_buses
    vm = np.ones(m)
    va = np.zeros(m)
    for b in case.buses:
        if b.voltage_setpoint is not None:
            vm[b.id] = b.voltage_setpoint
    pvpq = np.array([b.id for b in case.buses if b.kind != "slack"])
    pq = np.array([b.id for b in case.buses if b.kind == "pq"])
    sspec = _specified_injections(case, oc)
    npvpq = len(pvpq)

    mis = np.inf
    for it in range(max_iter + 1):
        v = vm * np.exp(1j * va)
        ibus = ybus @ v
        ds = sspec - v * np.conj(ibus)
        f = np.r_[ds.real[pvpq], ds.imag[pq]]
        mis = float(np.max(np.abs(f))) if f.size else 0.0
        if not np.isfinite(mis):
            break
        if mis < tol:
            return PowerFlowSolution(voltages=v, iterations=it, mismatch_norm=mis)
        if it == max_iter:
            break
        # dS/dVa and dS/dVm (polar form)
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vn = np.diag(v / vm)
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
        jac = np.block([
            [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
            [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            break
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
    raise PowerFlowError(f"power flow did not converge (mismatch {mis:.3e})", mis, it)


# -- classical machine algebra ----------------------------------------------

def electrical_power(rm: ReducedModel, delta) -> np.ndarray:
    """``Re(conj(Y_r V_g) * V_g)`` with ``V_g = |V0| exp(j delta)``.

    ``delta`` may carry leading batch dimensions; the last axis is machines.
    """
    vg = rm.v0_mag * np.exp(1j * np.asarray(delta, dtype=float))
    ig = vg @ rm.y_reduced.T
    return np.real(np.conj(ig) * vg)


def generator_injections(case: NetworkCase, oc: OperatingCondition, pf: PowerFlowSolution):
    """Complex power delivered by each generator at its terminal bus."""
    ybus = bus_admittance(case)
    s_bus = pf.voltages * np.conj(ybus @ pf.voltages)
    s_load = np.zeros(case.n_buses, dtype=complex)
    for b, load in zip(case.load_buses, oc.loads):
        s_load[b] += load
    gen_buses = [g.bus for g in case.generators]
    if len(set(gen_buses)) != len(gen_buses):
        raise NetworkError("at most one generator per bus is supported")
    return np.array([s_bus[b] + s_load[b] for b in gen_buses])


def init_prefault(case: NetworkCase, oc: OperatingCondition, pf: PowerFlowSolution) -> ReducedModel:
    """Internal EMFs behind x'd and the balancing mechanical power."""
    sg = generator_injections(case, oc, pf)
    vt = pf.voltages[[g.bus for g in case.generators]]
    it = np.conj(sg / vt)
    xd = np.array([g.transient_reactance for g in case.generators])
    e = vt + 1j * xd * it
    y = build_admittance(case, oc, "prefault", pf)
    yr = kron_reduce(y, case.internal_nodes)
    rm = ReducedModel(y_reduced=yr, v0_mag=np.abs(e), delta0=np.angle(e),
                      p_mech=np.zeros(case.n_gen), stage="prefault")
    return ReducedModel(yr, rm.v0_mag, rm.delta0, electrical_power(rm, rm.delta0), "prefault")


def stage_models(case: NetworkCase, oc: OperatingCondition, fault_bus: int,
                 tol=1e-8, max_iter=20, pf: PowerFlowSolution | None = None) -> StageModels:
    """Power flow plus the prefault, fault and postfault reduced models of ``oc``."""
    if pf is None:
        pf = solve_power_flow(case, oc, tol=tol, max_iter=max_iter)
    pre = init_prefault(case, oc, pf)
    y_fault = build_admittance(case, oc, "fault", pf, fault_bus=fault_bus)
    fault = pre.with_network(kron_reduce(y_fault, case.internal_nodes), "fault")
    y_post = build_admittance(case, oc, "postfault", pf)
    post = pre.with_network(kron_reduce(y_post, case.internal_nodes), "postfault")
    return StageModels(prefault=pre, fault=fault, postfault=post, pf=pf)
