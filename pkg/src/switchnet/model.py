"""Switched linear subsystems, mode-dependent topologies and switching signals.

A network is a collection of discrete-time switched linear subsystems

    x_i(k+1) = A_s x_i(k) + D_s w_i(k) + B_s u_i(k) [+ H_s d_i(k)]
    y_i(k)   = C_s x_i(k)

coupled through the interconnection constraint w_ij(k) = y_ji(k), where the
in-neighbor sets may depend on each subsystem's current mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DanglingEdge,
    DimensionMismatch,
    HorizonExceeded,
    SelfLoop,
    ValidationError,
)


def _as_matrix(value, rows, cols, name):
    m = np.asarray(value, dtype=float)
    if m.shape != (rows, cols):
        raise DimensionMismatch(f"{name}: expected shape {(rows, cols)}, got {m.shape}")
    m = m.copy()
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class ModeDynamics:
    """Matrices of one switching mode: (A, B, C, D) plus optional exogenous H."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    h: Optional[np.ndarray] = None


@dataclass(frozen=True)
class OutputPartition:
    """Row ranges of C marking the external block and per-target internal blocks.

    Ranges are half-open (start, stop) row indices. Blocks may alias the same
    rows: a subsystem whose full output feeds every neighbor declares the whole
    range everywhere, which is the default.
    """

    external: tuple
    internal: dict  # target index -> (start, stop)

    def internal_width(self, target):
        blk = self.internal.get(target)
        return 0 if blk is None else blk[1] - blk[0]


class SwitchedSubsystem:
    """One switched linear subsystem with per-mode matrices and output partition.

    Modes are labeled 1..r. Dimensions (n, m, q, w, d) are shared by all modes.
    Instances are immutable after construction and safe to share across threads.
    """

    def __init__(self, index, dynamics, partitions=None):
        if index < 1:
            raise ValidationError(f"subsystem index must be positive, got {index}")
        if not dynamics:
            raise ValidationError(f"subsystem {index}: needs at least one mode")
        self.index = int(index)
        self.num_modes = len(dynamics)
        self.modes = tuple(range(1, self.num_modes + 1))

        first = dynamics[0]
        a0 = np.asarray(first.a, dtype=float)
        if a0.ndim != 2 or a0.shape[0] != a0.shape[1]:
            raise DimensionMismatch(f"subsystem {index} mode 1: A must be square, got {a0.shape}")
        self.n = a0.shape[0]
        self.m = np.asarray(first.b).shape[1] if np.asarray(first.b).size else 0
        self.q = np.asarray(first.c).shape[0]
        self.w = np.asarray(first.d).shape[1] if np.asarray(first.d).size else 0
        self.d_dim = 0
        if first.h is not None and np.asarray(first.h).size:
            self.d_dim = np.asarray(first.h).shape[1]

        checked = []
        for s, dyn in enumerate(dynamics, start=1):
            tag = f"subsystem {index} mode {s}"
            a = _as_matrix(dyn.a, self.n, self.n, f"{tag} A")
            b = _as_matrix(dyn.b, self.n, self.m, f"{tag} B")
            c = _as_matrix(dyn.c, self.q, self.n, f"{tag} C")
            d = _as_matrix(dyn.d, self.n, self.w, f"{tag} D")
            h = None
            if self.d_dim:
                if dyn.h is None:
                    raise DimensionMismatch(f"{tag}: H missing but exogenous width is {self.d_dim}")
                h = _as_matrix(dyn.h, self.n, self.d_dim, f"{tag} H")
            elif dyn.h is not None and np.asarray(dyn.h).size:
                raise DimensionMismatch(f"{tag}: unexpected H (mode 1 declared none)")
            checked.append(ModeDynamics(a, b, c, d, h))
        self._dynamics = tuple(checked)

        if partitions is None:
            partitions = [None] * self.num_modes
        if len(partitions) != self.num_modes:
            raise ValidationError(f"subsystem {index}: {len(partitions)} partitions for {self.num_modes} modes")
        parts = []
        for s, part in enumerate(partitions, start=1):
            if part is None:
                part = OutputPartition(external=(0, self.q), internal={})
            ext = tuple(part.external)
            if not (0 <= ext[0] <= ext[1] <= self.q):
                raise DimensionMismatch(f"subsystem {index} mode {s}: external block {ext} outside 0..{self.q}")
            for tgt, blk in part.internal.items():
                if not (0 <= blk[0] <= blk[1] <= self.q):
                    raise DimensionMismatch(
                        f"subsystem {index} mode {s}: block for {tgt} {blk} outside 0..{self.q}")
            parts.append(OutputPartition(external=ext, internal=dict(part.internal)))
        self._partitions = tuple(parts)

    def dynamics(self, mode) -> ModeDynamics:
        return self._dynamics[self._check_mode(mode)]

    def partition(self, mode) -> OutputPartition:
        return self._partitions[self._check_mode(mode)]

    def block_for(self, target, mode):
        """Row range of the internal output block feeding `target`, default full."""
        part = self._partitions[self._check_mode(mode)]
        return part.internal.get(target, (0, self.q))

    def _check_mode(self, mode):
        if not 1 <= mode <= self.num_modes:
            raise ValidationError(f"subsystem {self.index}: mode {mode} not in 1..{self.num_modes}")
        return mode - 1

    def __repr__(self):
        return (f"SwitchedSubsystem(index={self.index}, modes={self.num_modes}, "
                f"n={self.n}, m={self.m}, q={self.q}, w={self.w}, d={self.d_dim})")


class NetworkTopology:
    """Mode-dependent in/out neighbor sets over subsystems 1..n.

    `in_neighbors[(i, s)]` is the ordered tuple of subsystems feeding i while i
    is in mode s. Out-neighbors are derived: j is an out-neighbor of i whenever
    some mode of j lists i as an in-neighbor.
    """

    def __init__(self, n, in_neighbors, num_modes):
        self.n = int(n)
        self.num_modes = dict(num_modes)  # subsystem index -> mode count
        table = {}
        for (i, s), nbrs in in_neighbors.items():
            if not 1 <= i <= self.n:
                raise ValidationError(f"topology: subsystem {i} outside 1..{self.n}")
            nbrs = tuple(int(j) for j in nbrs)
            for j in nbrs:
                if j == i:
                    raise SelfLoop(f"subsystem {i} mode {s}: lists itself as in-neighbor")
                if not 1 <= j <= self.n:
                    raise ValidationError(f"subsystem {i} mode {s}: in-neighbor {j} outside 1..{self.n}")
            table[(i, s)] = nbrs
        self._in = table
        for i, r in self.num_modes.items():
            for s in range(1, r + 1):
                self._in.setdefault((i, s), ())

        out = {}
        for (i, s), nbrs in self._in.items():
            for j in nbrs:
                out.setdefault(j, set()).add(i)
        for i in range(1, self.n + 1):
            if i in out.get(i, ()):  # pragma: no cover - blocked earlier
                raise SelfLoop(f"subsystem {i}: self-loop")
        self._out = {i: tuple(sorted(out.get(i, ()))) for i in range(1, self.n + 1)}

    def in_neighbors(self, i, mode):
        return self._in[(i, mode)]

    def out_neighbors(self, i):
        """Union over all receiver modes of subsystems fed by i."""
        return self._out[i]

    def in_neighbor_union(self, i):
        seen = []
        for s in range(1, self.num_modes[i] + 1):
            for j in self._in[(i, s)]:
                if j not in seen:
                    seen.append(j)
        return tuple(seen)

    def max_in_degree(self, i):
        return max(len(self._in[(i, s)]) for s in range(1, self.num_modes[i] + 1))

    def edges(self, mode_of):
        """All (i, j) pairs with j feeding i under the given per-subsystem modes."""
        pairs = []
        for i in range(1, self.n + 1):
            for j in self._in[(i, mode_of[i - 1])]:
                pairs.append((i, j))
        return pairs


@dataclass(frozen=True)
class RingTemplate:
    """Spatially invariant neighbor rule: per mode, relative offsets of in-neighbors.

    Instantiating at size n wraps offsets modulo n, giving the circular networks
    used by the case study. Only finite truncations are ever materialized.
    """

    offsets: dict  # mode -> tuple of relative offsets (nonzero)
    num_modes: int

    def __post_init__(self):
        for s, offs in self.offsets.items():
            if any(o % 1 for o in offs) or any(o == 0 for o in offs):
                raise ValidationError(f"template mode {s}: offsets must be nonzero integers")

    def instantiate(self, n) -> NetworkTopology:
        if n < 2:
            raise ValidationError(f"template instantiation needs n >= 2, got {n}")
        table = {}
        for i in range(1, n + 1):
            for s in range(1, self.num_modes + 1):
                table[(i, s)] = tuple((i - 1 + o) % n + 1 for o in self.offsets.get(s, ()))
        return NetworkTopology(n, table, {i: self.num_modes for i in range(1, n + 1)})


@dataclass
class Truncation:
    """First n_keep subsystems with cross-boundary edges rerouted to a boundary channel.

    `boundary[(i, s)]` lists the dropped in-neighbors of i in mode s, in their
    original assembly order; the simulator feeds their output blocks from the
    exogenous boundary signal instead.
    """

    topology: NetworkTopology
    boundary: dict
    parent_n: int


def truncate_topology(topology: NetworkTopology, n_keep) -> Truncation:
    if not 1 <= n_keep <= topology.n:
        raise ValidationError(f"truncation size {n_keep} outside 1..{topology.n}")
    table = {}
    boundary = {}
    modes = {}
    for i in range(1, n_keep + 1):
        r = topology.num_modes[i]
        modes[i] = r
        for s in range(1, r + 1):
            kept, dropped = [], []
            for j in topology.in_neighbors(i, s):
                (kept if j <= n_keep else dropped).append(j)
            table[(i, s)] = tuple(kept)
            if dropped:
                boundary[(i, s)] = tuple(dropped)
    return Truncation(NetworkTopology(n_keep, table, modes), boundary, topology.n)


# ---------------------------------------------------------------------------
# switching signals
# ---------------------------------------------------------------------------

class SwitchingSignal:
    """Deterministic map from step index to mode; subclasses fix the rule."""

    def mode_at(self, k):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantSignal(SwitchingSignal):
    mode: int

    def mode_at(self, k):
        if k < 0:
            raise ValidationError(f"step {k} < 0")
        return self.mode


@dataclass(frozen=True)
class PeriodicSignal(SwitchingSignal):
    """Cycles through `sequence`, dwelling `dwell` steps on each entry."""

    sequence: tuple
    dwell: int
    offset: int = 0

    def __post_init__(self):
        if self.dwell < 1:
            raise ValidationError(f"dwell must be >= 1, got {self.dwell}")
        if not self.sequence:
            raise ValidationError("empty switching sequence")

    def mode_at(self, k):
        if k < 0:
            raise ValidationError(f"step {k} < 0")
        return self.sequence[((k + self.offset) // self.dwell) % len(self.sequence)]


@dataclass(frozen=True)
class TableSignal(SwitchingSignal):
    table: tuple

    def mode_at(self, k):
        if k < 0:
            raise ValidationError(f"step {k} < 0")
        if k >= len(self.table):
            raise HorizonExceeded(f"step {k} beyond table horizon {len(self.table)}")
        return self.table[k]


def eval_switching(signals: Sequence[SwitchingSignal], k) -> np.ndarray:
    """Mode vector of the network at step k (1-based modes, one per subsystem)."""
    return np.array([sig.mode_at(k) for sig in signals], dtype=int)


# ---------------------------------------------------------------------------
# network assembly
# ---------------------------------------------------------------------------

@dataclass
class Network:
    """Validated collection of subsystems plus their interconnection topology."""

    subsystems: list
    topology: NetworkTopology

    @property
    def n(self):
        return len(self.subsystems)

    def subsystem(self, i) -> SwitchedSubsystem:
        return self.subsystems[i - 1]


@dataclass
class NetworkState:
    """Per-subsystem state vectors at one time step."""

    x: list  # list of 1-d arrays

    def copy(self):
        return NetworkState([xi.copy() for xi in self.x])


def build_network(subsystems, topology) -> Network:
    """Validate subsystems against a topology and return the assembled network.

    Checks index contiguity, per-mode internal input widths against the
    in-neighbors' declared output blocks, and block availability (every edge
    must have a source block of consistent width in every source mode).
    """
    subs = list(subsystems)
    if [s.index for s in subs] != list(range(1, len(subs) + 1)):
        raise ValidationError("subsystem indices must be 1..n in order")
    if topology.n != len(subs):
        raise DimensionMismatch(f"topology has {topology.n} subsystems, got {len(subs)}")
    for sub in subs:
        if topology.num_modes.get(sub.index) != sub.num_modes:
            raise DimensionMismatch(
                f"subsystem {sub.index}: topology declares {topology.num_modes.get(sub.index)} modes, "
                f"subsystem has {sub.num_modes}")

    for sub in subs:
        i = sub.index
        for s in sub.modes:
            width = 0
            for j in topology.in_neighbors(i, s):
                src = subs[j - 1]
                widths = set()
                for sj in src.modes:
                    blk = src.partition(sj).internal.get(i)
                    if blk is None and src.partition(sj).internal:
                        raise DanglingEdge(
                            f"subsystem {i} mode {s}: neighbor {j} declares no output block for {i} "
                            f"in mode {sj}")
                    lo, hi = blk if blk is not None else (0, src.q)
                    widths.add(hi - lo)
                if len(widths) != 1:
                    raise DimensionMismatch(
                        f"edge {j}->{i}: block width varies across modes of {j}: {sorted(widths)}")
                width += widths.pop()
            if width != sub.w:
                raise DimensionMismatch(
                    f"subsystem {i} mode {s}: declared internal width {sub.w}, "
                    f"neighbor outputs total {width}")
    return Network(subs, topology)


def network_outputs(network: Network, state: NetworkState, modes) -> list:
    """y_i = C_{i, s_i} x_i for every subsystem."""
    out = []
    for sub, xi in zip(network.subsystems, state.x):
        c = sub.dynamics(int(modes[sub.index - 1])).c
        out.append(c @ xi)
    return out


def assemble_internal_inputs(network: Network, state: NetworkState, modes,
                             boundary=None, boundary_values=None) -> list:
    """Ordered concatenation w_i of neighbor output blocks y_{ji}.

    `boundary` maps (i, mode) to dropped neighbors of a truncation;
    `boundary_values[(i, mode)]` then supplies their blocks (the exogenous
    channel). Assembly is a pure function of (state, topology, modes).
    """
    ys = network_outputs(network, state, modes)
    ws = []
    for sub in network.subsystems:
        i = sub.index
        s = int(modes[i - 1])
        pieces = []
        for j in network.topology.in_neighbors(i, s):
            src = network.subsystems[j - 1]
            lo, hi = src.block_for(i, int(modes[j - 1]))
            pieces.append(ys[j - 1][lo:hi])
        if boundary:
            dropped = boundary.get((i, s), ())
            if dropped:
                if boundary_values is None or (i, s) not in boundary_values:
                    raise DanglingEdge(f"subsystem {i} mode {s}: boundary neighbors {dropped} "
                                       f"have no supplied values")
                pieces.append(np.asarray(boundary_values[(i, s)], dtype=float))
        wi = np.concatenate(pieces) if pieces else np.zeros(0)
        if wi.shape[0] != sub.w:
            raise DimensionMismatch(
                f"subsystem {i} mode {s}: assembled w has length {wi.shape[0]}, expected {sub.w}")
        ws.append(wi)
    return ws


def check_edge_symmetry(network: Network):
    """Structural check: every in-edge has a source block of matching width.

    Returns the list of (i, mode, j) triples checked; raises DanglingEdge on
    the first inconsistency.
    """
    checked = []
    for sub in network.subsystems:
        for s in sub.modes:
            for j in network.topology.in_neighbors(sub.index, s):
                src = network.subsystems[j - 1]
                for sj in src.modes:
                    lo, hi = src.block_for(sub.index, sj)
                    if hi - lo <= 0:
                        raise DanglingEdge(f"edge {j}->{sub.index}: empty source block in mode {sj}")
                checked.append((sub.index, s, j))
    return checked
