# core/genome.py
"""
CPPN + DSP sound-generator genomes.

A genome is a pair of directed acyclic graphs: a CPPN whose inputs are a
time ramp and a pitch sinusoid and whose output nodes ("taps") feed a DSP
graph of audio nodes. Variation is NEAT-style and mutation-only.
Genomes are frozen value objects; `mutate` builds a new one.
"""
import heapq
import json
import math
import uuid
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import GenomeDecodeError, GenomeError, MutationError

SCHEMA_VERSION = 1

ACTIVATIONS = ("sine", "square", "sawtooth", "triangle", "identity")
WAVEFORMS = ACTIVATIONS[:4]

INPUT_TIME = 0
INPUT_PITCH = 1

DSP_KINDS = ("gain", "mix", "delay-line", "biquad-filter", "wave-shaper", "output")
PROCESSOR_KINDS = DSP_KINDS[:-1]

# (low, high) per parameter; delay in seconds, cutoff in Hz
PARAM_RANGES: Dict[str, Dict[str, Tuple[float, float]]] = {
    "gain": {"gain": (-2.0, 2.0)},
    "mix": {"level": (0.0, 2.0)},
    "delay-line": {"delay": (0.0, 0.25), "mix": (0.0, 1.0)},
    "biquad-filter": {"cutoff": (20.0, 8000.0), "q": (0.3, 12.0)},
    "wave-shaper": {"drive": (0.1, 10.0)},
    "output": {},
}

WEIGHT_LIMIT = 8.0
WEIGHT_SIGMA = 0.5
DSP_PARAM_SIGMA = 0.1      # fraction of the parameter range
TAP_BIND_PROB = 0.2
NEW_TAP_PROB = 0.3
MAX_STRUCTURAL_RETRIES = 16
MAX_RESAMPLES = 64


# =====================================================
# Graph types
# =====================================================

@dataclass(frozen=True)
class CppnNode:
    id: int
    role: str               # input | hidden | output
    activation: str = "identity"
    label: str = ""         # "time" / "pitch" for inputs


@dataclass(frozen=True)
class CppnConnection:
    innovation: int
    source: int
    target: int
    weight: float
    enabled: bool = True


@dataclass(frozen=True)
class CppnGraph:
    nodes: Tuple[CppnNode, ...]
    connections: Tuple[CppnConnection, ...]

    @property
    def input_ids(self) -> List[int]:
        return sorted(n.id for n in self.nodes if n.role == "input")

    @property
    def output_ids(self) -> List[int]:
        return sorted(n.id for n in self.nodes if n.role == "output")

    @property
    def hidden_ids(self) -> List[int]:
        return sorted(n.id for n in self.nodes if n.role == "hidden")

    def node(self, node_id: int) -> CppnNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


@dataclass(frozen=True)
class ParamSlot:
    value: float
    tap: Optional[int] = None   # CPPN output node id when bound to a control signal


@dataclass(frozen=True)
class DspNode:
    id: int
    kind: str
    params: Tuple[Tuple[str, ParamSlot], ...] = ()

    def param(self, name: str) -> ParamSlot:
        for key, slot in self.params:
            if key == name:
                return slot
        raise KeyError(name)


@dataclass(frozen=True)
class DspConnection:
    innovation: int
    source: int
    target: int
    from_tap: bool = False   # source is a CPPN output node rather than a DSP node
    enabled: bool = True


@dataclass(frozen=True)
class DspGraph:
    nodes: Tuple[DspNode, ...]
    connections: Tuple[DspConnection, ...]

    @property
    def output_id(self) -> int:
        outs = [n.id for n in self.nodes if n.kind == "output"]
        if len(outs) != 1:
            raise GenomeError(f"DSP graph must have exactly one output node, found {len(outs)}")
        return outs[0]

    def node(self, node_id: int) -> DspNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)


@dataclass(frozen=True)
class Genome:
    cppn: CppnGraph
    dsp: DspGraph
    innovation: int
    lineage_id: str
    parent_id: Optional[str] = None

    @property
    def node_count(self) -> int:
        return len(self.cppn.nodes) + len(self.dsp.nodes)


@dataclass(frozen=True)
class MutationRates:
    perturb_weight: float = 0.8
    add_cppn_node: float = 0.05
    add_cppn_connection: float = 0.1
    add_dsp_node: float = 0.03
    add_dsp_connection: float = 0.05
    perturb_dsp_parameter: float = 0.3
    toggle_connection: float = 0.02

    def __post_init__(self):
        for name, rate in asdict(self).items():
            if not (0.0 <= float(rate) <= 1.0):
                raise MutationError(f"mutation rate {name}={rate} outside [0, 1]")

    def items(self):
        return list(asdict(self).items())

    @classmethod
    def only(cls, name: str, rate: float = 1.0) -> "MutationRates":
        zeros = {k: 0.0 for k in asdict(cls())}
        if name not in zeros:
            raise MutationError(f"unknown mutation operator '{name}'")
        zeros[name] = rate
        return cls(**zeros)


# =====================================================
# Graph helpers
# =====================================================

def topological_order(node_ids: Iterable[int], edges: Iterable[Tuple[int, int]]) -> List[int]:
    """Kahn's algorithm, ties broken by smallest node id. Raises GenomeError on a cycle."""
    node_ids = list(node_ids)
    indeg = {n: 0 for n in node_ids}
    succ: Dict[int, List[int]] = {n: [] for n in node_ids}
    for a, b in edges:
        if a in succ and b in indeg:
            succ[a].append(b)
            indeg[b] += 1
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, m)
    if len(order) != len(node_ids):
        raise GenomeError("graph contains a cycle")
    return order


def _reaches(start: int, goal: int, edges: Iterable[Tuple[int, int]]) -> bool:
    succ: Dict[int, List[int]] = {}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
    stack, seen = [start], {start}
    while stack:
        n = stack.pop()
        if n == goal:
            return True
        for m in succ.get(n, ()):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return False


def _cppn_has_io_path(nodes, connections) -> bool:
    enabled = [(c.source, c.target) for c in connections if c.enabled]
    inputs = [n.id for n in nodes if n.role == "input"]
    outputs = [n.id for n in nodes if n.role == "output"]
    return any(_reaches(i, o, enabled) for i in inputs for o in outputs)


def _dsp_output_fed(dsp_nodes, dsp_connections) -> bool:
    """True when some tap reaches the output node through enabled audio edges."""
    out_ids = [n.id for n in dsp_nodes if n.kind == "output"]
    if len(out_ids) != 1:
        return False
    out_id = out_ids[0]
    node_edges = [(c.source, c.target) for c in dsp_connections if c.enabled and not c.from_tap]
    fed = {c.target for c in dsp_connections if c.enabled and c.from_tap}
    return any(_reaches(n, out_id, node_edges) for n in fed)


def validate(g: Genome) -> Genome:
    """Check every graph invariant; returns the genome unchanged or raises GenomeError."""
    cppn, dsp = g.cppn, g.dsp

    ids = [n.id for n in cppn.nodes]
    if len(ids) != len(set(ids)):
        raise GenomeError("duplicate CPPN node id")
    roles = {n.id: n.role for n in cppn.nodes}
    for n in cppn.nodes:
        if n.role not in ("input", "hidden", "output"):
            raise GenomeError(f"CPPN node {n.id} has unknown role '{n.role}'")
        if n.activation not in ACTIVATIONS:
            raise GenomeError(f"CPPN node {n.id} has unknown activation '{n.activation}'")
    if not cppn.input_ids or not cppn.output_ids:
        raise GenomeError("CPPN needs at least one input and one output")
    for c in cppn.connections:
        if c.source not in roles or c.target not in roles:
            raise GenomeError(f"CPPN connection {c.innovation} references a missing node")
        if roles[c.target] == "input" or roles[c.source] == "output":
            raise GenomeError(f"CPPN connection {c.innovation} has an illegal direction")
        if not math.isfinite(c.weight) or abs(c.weight) > WEIGHT_LIMIT:
            raise GenomeError(f"CPPN connection {c.innovation} weight {c.weight} out of range")
    topological_order(ids, [(c.source, c.target) for c in cppn.connections])
    if not _cppn_has_io_path(cppn.nodes, cppn.connections):
        raise GenomeError("no enabled path from a CPPN input to an output")

    dsp_ids = [n.id for n in dsp.nodes]
    if len(dsp_ids) != len(set(dsp_ids)):
        raise GenomeError("duplicate DSP node id")
    kinds = {n.id: n.kind for n in dsp.nodes}
    taps = set(cppn.output_ids)
    dsp.output_id  # exactly one output
    for n in dsp.nodes:
        if n.kind not in DSP_KINDS:
            raise GenomeError(f"DSP node {n.id} has unknown kind '{n.kind}'")
        expected = set(PARAM_RANGES[n.kind])
        if {k for k, _ in n.params} != expected:
            raise GenomeError(f"DSP node {n.id} ({n.kind}) has parameters {[k for k, _ in n.params]}")
        for name, slot in n.params:
            lo, hi = PARAM_RANGES[n.kind][name]
            if not math.isfinite(slot.value) or not (lo <= slot.value <= hi):
                raise GenomeError(f"DSP node {n.id} parameter {name}={slot.value} outside [{lo}, {hi}]")
            if slot.tap is not None and slot.tap not in taps:
                raise GenomeError(f"DSP node {n.id} parameter {name} bound to missing tap {slot.tap}")
    for c in dsp.connections:
        if c.target not in kinds:
            raise GenomeError(f"DSP connection {c.innovation} targets a missing node")
        if c.from_tap:
            if c.source not in taps:
                raise GenomeError(f"DSP connection {c.innovation} reads missing tap {c.source}")
        elif c.source not in kinds or kinds[c.source] == "output":
            raise GenomeError(f"DSP connection {c.innovation} has an illegal source")
    topological_order(dsp_ids, [(c.source, c.target) for c in dsp.connections if not c.from_tap])
    if not _dsp_output_fed(dsp.nodes, dsp.connections):
        raise GenomeError("DSP output is not connected to any CPPN tap")
    return g


def _new_lineage_id(rng: np.random.Generator) -> str:
    return uuid.UUID(bytes=rng.bytes(16)).hex


# =====================================================
# Construction
# =====================================================

def minimal_genome(rng_seed: int) -> Genome:
    """
    Smallest legal topology: time ramp -> tap (identity), tap -> gain -> output.
    Only the initial weight depends on the seed (uniform in [-1, 1]).
    """
    rng = np.random.default_rng(rng_seed)
    weight = float(rng.uniform(-1.0, 1.0))
    cppn = CppnGraph(
        nodes=(
            CppnNode(INPUT_TIME, "input", "identity", "time"),
            CppnNode(INPUT_PITCH, "input", "identity", "pitch"),
            CppnNode(2, "output", "identity", "tap"),
        ),
        connections=(CppnConnection(1, INPUT_TIME, 2, weight, True),),
    )
    dsp = DspGraph(
        nodes=(
            DspNode(0, "output", ()),
            DspNode(1, "gain", (("gain", ParamSlot(1.0)),)),
        ),
        connections=(
            DspConnection(2, 2, 1, from_tap=True),
            DspConnection(3, 1, 0),
        ),
    )
    return Genome(cppn=cppn, dsp=dsp, innovation=3, lineage_id=_new_lineage_id(rng), parent_id=None)


# =====================================================
# Mutation
# =====================================================

class _Draft:
    """Mutable working copy used while a child is assembled."""

    def __init__(self, parent: Genome):
        self.cppn_nodes: List[CppnNode] = list(parent.cppn.nodes)
        self.cppn_conns: List[CppnConnection] = list(parent.cppn.connections)
        self.dsp_nodes: List[DspNode] = list(parent.dsp.nodes)
        self.dsp_conns: List[DspConnection] = list(parent.dsp.connections)
        self.innovation = parent.innovation

    def next_innovation(self) -> int:
        self.innovation += 1
        return self.innovation

    def next_cppn_id(self) -> int:
        return max(n.id for n in self.cppn_nodes) + 1

    def next_dsp_id(self) -> int:
        return max(n.id for n in self.dsp_nodes) + 1

    def taps(self) -> List[int]:
        return sorted(n.id for n in self.cppn_nodes if n.role == "output")

    def cppn_edges(self):
        return [(c.source, c.target) for c in self.cppn_conns]

    def dsp_node_edges(self):
        return [(c.source, c.target) for c in self.dsp_conns if not c.from_tap]

    def add_tap(self, rng: np.random.Generator) -> int:
        """New CPPN output node fed from a random input or hidden node."""
        tap_id = self.next_cppn_id()
        self.cppn_nodes.append(CppnNode(tap_id, "output", "identity", "tap"))
        sources = sorted(n.id for n in self.cppn_nodes if n.role in ("input", "hidden"))
        src = int(sources[rng.integers(len(sources))])
        self.cppn_conns.append(
            CppnConnection(self.next_innovation(), src, tap_id, float(rng.uniform(-1.0, 1.0)), True)
        )
        return tap_id

    def freeze(self, lineage_id: str, parent_id: Optional[str]) -> Genome:
        return Genome(
            cppn=CppnGraph(tuple(self.cppn_nodes), tuple(self.cppn_conns)),
            dsp=DspGraph(tuple(self.dsp_nodes), tuple(self.dsp_conns)),
            innovation=self.innovation,
            lineage_id=lineage_id,
            parent_id=parent_id,
        )


def _random_params(kind: str, rng: np.random.Generator, taps: Sequence[int]) -> Tuple[Tuple[str, ParamSlot], ...]:
    params = []
    for name, (lo, hi) in PARAM_RANGES[kind].items():
        value = float(rng.uniform(lo, hi))
        tap = None
        if taps and rng.random() < TAP_BIND_PROB:
            tap = int(taps[rng.integers(len(taps))])
        params.append((name, ParamSlot(value, tap)))
    return tuple(params)


def _op_perturb_weight(d: _Draft, rng, retries) -> bool:
    if not d.cppn_conns:
        return False
    noise = rng.normal(0.0, WEIGHT_SIGMA, size=len(d.cppn_conns))
    d.cppn_conns = [
        replace(c, weight=float(np.clip(c.weight + n, -WEIGHT_LIMIT, WEIGHT_LIMIT)))
        for c, n in zip(d.cppn_conns, noise)
    ]
    return True


def _op_add_cppn_node(d: _Draft, rng, retries) -> bool:
    enabled = [i for i, c in enumerate(d.cppn_conns) if c.enabled]
    if not enabled:
        return False
    idx = enabled[rng.integers(len(enabled))]
    old = d.cppn_conns[idx]
    new_id = d.next_cppn_id()
    activation = ACTIVATIONS[rng.integers(len(ACTIVATIONS))]
    d.cppn_conns[idx] = replace(old, enabled=False)
    d.cppn_nodes.append(CppnNode(new_id, "hidden", activation, ""))
    d.cppn_conns.append(CppnConnection(d.next_innovation(), old.source, new_id, 1.0, True))
    d.cppn_conns.append(CppnConnection(d.next_innovation(), new_id, old.target, old.weight, True))
    return True


def _op_add_cppn_connection(d: _Draft, rng, retries) -> bool:
    sources = sorted(n.id for n in d.cppn_nodes if n.role in ("input", "hidden"))
    targets = sorted(n.id for n in d.cppn_nodes if n.role in ("hidden", "output"))
    existing = set(d.cppn_edges())
    for _ in range(retries):
        src = int(sources[rng.integers(len(sources))])
        tgt = int(targets[rng.integers(len(targets))])
        if src == tgt or (src, tgt) in existing:
            continue
        if _reaches(tgt, src, existing):
            continue  # would close a cycle
        d.cppn_conns.append(
            CppnConnection(d.next_innovation(), src, tgt, float(rng.uniform(-1.0, 1.0)), True)
        )
        return True
    return False


def _op_add_dsp_node(d: _Draft, rng, retries) -> bool:
    enabled = [i for i, c in enumerate(d.dsp_conns) if c.enabled]
    if not enabled:
        return False
    idx = enabled[rng.integers(len(enabled))]
    old = d.dsp_conns[idx]
    kind = PROCESSOR_KINDS[rng.integers(len(PROCESSOR_KINDS))]
    new_id = d.next_dsp_id()
    taps = d.taps()
    d.dsp_conns[idx] = replace(old, enabled=False)
    d.dsp_nodes.append(DspNode(new_id, kind, _random_params(kind, rng, taps)))
    d.dsp_conns.append(DspConnection(d.next_innovation(), old.source, new_id, old.from_tap, True))
    d.dsp_conns.append(DspConnection(d.next_innovation(), new_id, old.target, False, True))
    if kind == "mix":
        extra = int(taps[rng.integers(len(taps))])
        if extra != old.source or not old.from_tap:
            d.dsp_conns.append(DspConnection(d.next_innovation(), extra, new_id, True, True))
    return True


def _op_add_dsp_connection(d: _Draft, rng, retries) -> bool:
    existing = {(c.source, c.target, c.from_tap) for c in d.dsp_conns}
    node_edges = set(d.dsp_node_edges())
    processors = sorted(n.id for n in d.dsp_nodes if n.kind != "output")
    targets = sorted(n.id for n in d.dsp_nodes)
    for _ in range(retries):
        tgt = int(targets[rng.integers(len(targets))])
        if rng.random() < NEW_TAP_PROB:
            src = d.add_tap(rng)
            d.dsp_conns.append(DspConnection(d.next_innovation(), src, tgt, True, True))
            return True
        taps = d.taps()
        pool = [(t, True) for t in taps] + [(p, False) for p in processors]
        src, from_tap = pool[rng.integers(len(pool))]
        if (src, tgt, from_tap) in existing:
            continue
        if not from_tap and (src == tgt or _reaches(tgt, src, node_edges)):
            continue
        d.dsp_conns.append(DspConnection(d.next_innovation(), int(src), tgt, from_tap, True))
        return True
    return False


def _op_perturb_dsp_parameter(d: _Draft, rng, retries) -> bool:
    slots = [
        (i, name)
        for i, n in enumerate(d.dsp_nodes)
        for name, slot in n.params
        if slot.tap is None
    ]
    if not slots:
        return False
    i, name = slots[rng.integers(len(slots))]
    node = d.dsp_nodes[i]
    lo, hi = PARAM_RANGES[node.kind][name]
    slot = node.param(name)
    value = float(np.clip(slot.value + rng.normal(0.0, DSP_PARAM_SIGMA * (hi - lo)), lo, hi))
    params = tuple((k, ParamSlot(value, s.tap) if k == name else s) for k, s in node.params)
    d.dsp_nodes[i] = replace(node, params=params)
    return True


def _op_toggle_connection(d: _Draft, rng, retries) -> bool:
    total = len(d.cppn_conns) + len(d.dsp_conns)
    for _ in range(retries):
        pick = int(rng.integers(total))
        if pick < len(d.cppn_conns):
            old = d.cppn_conns[pick]
            d.cppn_conns[pick] = replace(old, enabled=not old.enabled)
            if _cppn_has_io_path(d.cppn_nodes, d.cppn_conns):
                return True
            d.cppn_conns[pick] = old
        else:
            j = pick - len(d.cppn_conns)
            old = d.dsp_conns[j]
            d.dsp_conns[j] = replace(old, enabled=not old.enabled)
            if _dsp_output_fed(d.dsp_nodes, d.dsp_conns):
                return True
            d.dsp_conns[j] = old
    return False


_OPERATORS = {
    "perturb_weight": _op_perturb_weight,
    "add_cppn_node": _op_add_cppn_node,
    "add_cppn_connection": _op_add_cppn_connection,
    "add_dsp_node": _op_add_dsp_node,
    "add_dsp_connection": _op_add_dsp_connection,
    "perturb_dsp_parameter": _op_perturb_dsp_parameter,
    "toggle_connection": _op_toggle_connection,
}

STRUCTURAL_OPERATORS = ("add_cppn_node", "add_cppn_connection", "add_dsp_node", "add_dsp_connection")


def mutate(parent: Genome, rng: np.random.Generator, rates: Optional[MutationRates] = None,
           max_retries: int = MAX_STRUCTURAL_RETRIES) -> Genome:
    """
    Return a mutated child of `parent`; the parent is left untouched.
    Each operator fires independently with its rate; rolls repeat until at
    least one operator actually changed the draft.
    """
    rates = rates or MutationRates()
    if all(rate == 0.0 for _, rate in rates.items()):
        raise MutationError("all mutation rates are zero")

    draft = _Draft(parent)
    for _ in range(MAX_RESAMPLES):
        applied = False
        for name, rate in rates.items():
            if rate > 0.0 and rng.random() < rate:
                applied |= _OPERATORS[name](draft, rng, max_retries)
        if applied:
            break
    else:
        raise MutationError(f"no mutation applicable to genome {parent.lineage_id}")

    child = draft.freeze(_new_lineage_id(rng), parent.lineage_id)
    return validate(child)


# =====================================================
# Serialization
# =====================================================

def genome_to_dict(g: Genome) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "lineage_id": g.lineage_id,
        "parent_id": g.parent_id,
        "innovation": g.innovation,
        "cppn": {
            "nodes": [asdict(n) for n in g.cppn.nodes],
            "connections": [
                {**asdict(c), "weight": float(c.weight)} for c in g.cppn.connections
            ],
        },
        "dsp": {
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind,
                    "params": {k: {"value": float(s.value), "tap": s.tap} for k, s in n.params},
                }
                for n in g.dsp.nodes
            ],
            "connections": [asdict(c) for c in g.dsp.connections],
        },
    }


def _field(obj, key, path, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise GenomeDecodeError(f"{path}.{key}" if path else key, "missing")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise GenomeDecodeError(f"{path}.{key}", f"expected number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise GenomeDecodeError(f"{path}.{key}", f"expected integer, got {type(value).__name__}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise GenomeDecodeError(f"{path}.{key}", f"expected boolean, got {type(value).__name__}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise GenomeDecodeError(f"{path}.{key}", f"expected string, got {type(value).__name__}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise GenomeDecodeError(f"{path}.{key}", "expected list")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise GenomeDecodeError(f"{path}.{key}", "expected object")
        return value
    return value


def genome_from_dict(payload: dict) -> Genome:
    version = _field(payload, "schema_version", "", int)
    if version != SCHEMA_VERSION:
        raise GenomeDecodeError("schema_version", f"unsupported version {version}")
    parent_id = payload.get("parent_id")
    if parent_id is not None and not isinstance(parent_id, str):
        raise GenomeDecodeError("parent_id", "expected string or null")

    cppn = _field(payload, "cppn", "", dict)
    nodes = []
    for i, n in enumerate(_field(cppn, "nodes", "cppn", list)):
        path = f"cppn.nodes[{i}]"
        nodes.append(CppnNode(
            _field(n, "id", path, int),
            _field(n, "role", path, str),
            _field(n, "activation", path, str),
            _field(n, "label", path, str),
        ))
    conns = []
    for i, c in enumerate(_field(cppn, "connections", "cppn", list)):
        path = f"cppn.connections[{i}]"
        conns.append(CppnConnection(
            _field(c, "innovation", path, int),
            _field(c, "source", path, int),
            _field(c, "target", path, int),
            _field(c, "weight", path, float),
            _field(c, "enabled", path, bool),
        ))

    dsp = _field(payload, "dsp", "", dict)
    dsp_nodes = []
    for i, n in enumerate(_field(dsp, "nodes", "dsp", list)):
        path = f"dsp.nodes[{i}]"
        params = []
        for name, slot in _field(n, "params", path, dict).items():
            tap = slot.get("tap") if isinstance(slot, dict) else None
            if tap is not None and (isinstance(tap, bool) or not isinstance(tap, int)):
                raise GenomeDecodeError(f"{path}.params.{name}.tap", "expected integer or null")
            params.append((name, ParamSlot(_field(slot, "value", f"{path}.params.{name}", float), tap)))
        kind = _field(n, "kind", path, str)
        order = list(PARAM_RANGES.get(kind, {}))
        params.sort(key=lambda item: order.index(item[0]) if item[0] in order else len(order))
        dsp_nodes.append(DspNode(_field(n, "id", path, int), kind, tuple(params)))
    dsp_conns = []
    for i, c in enumerate(_field(dsp, "connections", "dsp", list)):
        path = f"dsp.connections[{i}]"
        dsp_conns.append(DspConnection(
            _field(c, "innovation", path, int),
            _field(c, "source", path, int),
            _field(c, "target", path, int),
            _field(c, "from_tap", path, bool),
            _field(c, "enabled", path, bool),
        ))

    g = Genome(
        cppn=CppnGraph(tuple(nodes), tuple(conns)),
        dsp=DspGraph(tuple(dsp_nodes), tuple(dsp_conns)),
        innovation=_field(payload, "innovation", "", int),
        lineage_id=_field(payload, "lineage_id", "", str),
        parent_id=parent_id,
    )
    try:
        return validate(g)
    except GenomeError as e:
        raise GenomeDecodeError("genome", str(e)) from e


def serialize(g: Genome) -> bytes:
    return json.dumps(genome_to_dict(g), ensure_ascii=False, sort_keys=True).encode("utf-8")


def deserialize(data: bytes) -> Genome:
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise GenomeDecodeError("document", f"not a JSON genome ({e})") from e
    if not isinstance(payload, dict):
        raise GenomeDecodeError("document", "top level must be an object")
    return genome_from_dict(payload)
