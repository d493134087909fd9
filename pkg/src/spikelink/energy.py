"""Deterministic accumulate/multiply operation ledger and pJ cost model.

Counting rules
--------------
Spike-driven (decoupled) layers only accumulate:

  * propagation: every input spike at node j triggers one addition per
    stored operator entry in column j, so the exact count is
    sum_t sum_j degree(j) * spikes_j(t) and the multiply count is zero.
  * transformation (and the decoder's linear map): every input spike
    gathers one weight row, costing C_out additions; exact count is
    sum_t nnz(input_t) * C_out, multiplies zero.
  * weighted inner product: one addition per co-active latent channel of
    the scored pair, multiplies zero.

Coupled (non-decoupled) layers pay the classical dense cost:
T * C * (operator nnz) multiplies for propagation and T * N * C_in *
C_out for the weight product, with one fewer addition per output element.

The ledger stores exact integer totals; report time divides by N for
per-node numbers and doubles them (plus the pair term) for per-link
numbers. A "paper-average" reporting mode replaces the exact counts with
the occupancy-average approximations for comparison purposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ForwardTrace, LayerStats, WipStats


@dataclass(frozen=True)
class EnergyModel:
    """Unit energy per operation, picojoules."""

    e_ac_float: float = 0.9
    e_mul_float: float = 3.7
    e_ac_int: float = 0.1
    e_mul_int: float = 3.7

    def __post_init__(self) -> None:
        for name in ("e_ac_float", "e_mul_float", "e_ac_int", "e_mul_int"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


def energy_cost(n_ac: float, n_mul: float, model: EnergyModel) -> tuple[float, float]:
    """(floating-point, integer) energy in pJ for the given op counts."""
    e_float = model.e_ac_float * n_ac + model.e_mul_float * n_mul
    e_int = model.e_ac_int * n_ac + model.e_mul_int * n_mul
    return e_float, e_int


@dataclass
class LedgerEntry:
    layer: str
    kind: str  # "propagation" | "transformation"
    n_ac: int
    n_mul: int
    coupled: bool
    steps: int
    num_nodes: int
    in_width: int
    out_width: int
    input_nnz_total: int
    operator_nnz: int | None = None


@dataclass
class WipCounts:
    n_ac_pairs_total: int  # exact additions over all scored pairs
    n_mul: int
    pair_count: int
    z_nnz: list[int]
    num_nodes: int
    steps: int


def count_propagation(stats: LayerStats) -> tuple[int, int]:
    """Exact (N_AC, N_MUL) for one propagation layer."""
    if stats.operator_nnz is None or stats.input_degree_weighted is None:
        raise ValueError(f"layer {stats.name}: missing propagation occupancy")
    if stats.coupled:
        n_mul = stats.steps * stats.in_width * stats.operator_nnz
        n_ac = n_mul - stats.steps * stats.in_width * stats.num_nodes
        return n_ac, n_mul
    return int(sum(stats.input_degree_weighted)), 0


def count_transformation(stats: LayerStats) -> tuple[int, int]:
    """Exact (N_AC, N_MUL) for one transformation / linear layer."""
    if stats.coupled:
        n_mul = stats.steps * stats.num_nodes * stats.in_width * stats.out_width
        n_ac = n_mul - stats.steps * stats.num_nodes * stats.out_width
        return n_ac, n_mul
    return int(sum(stats.input_nnz)) * stats.out_width, 0


def count_wip(wip: WipStats) -> WipCounts:
    """Exact pair-scoring additions; the multiply count is always zero."""
    return WipCounts(
        n_ac_pairs_total=int(wip.pair_intersections_total),
        n_mul=0,
        pair_count=int(wip.pair_count),
        z_nnz=list(wip.z_nnz),
        num_nodes=wip.num_nodes,
        steps=wip.steps,
    )


@dataclass
class EnergyLedger:
    """Per-layer integer counters plus the pair-scoring counts."""

    entries: list[LedgerEntry] = field(default_factory=list)
    wip: WipCounts | None = None
    num_nodes: int = 0
    decoupled: bool = True

    @property
    def total_n_ac(self) -> int:
        return sum(e.n_ac for e in self.entries)

    @property
    def total_n_mul(self) -> int:
        return sum(e.n_mul for e in self.entries)

    def assert_zero_mul(self) -> None:
        """Decoupled spiking mode must never record a multiply."""
        for e in self.entries:
            if e.n_mul != 0:
                raise AssertionError(f"layer {e.layer} recorded {e.n_mul} multiplies")
        if self.wip is not None and self.wip.n_mul != 0:
            raise AssertionError("pair scoring recorded multiplies")

    @classmethod
    def merge(cls, ledgers: list["EnergyLedger"]) -> "EnergyLedger":
        """Associative sum of sub-ledgers with identical layer layouts."""
        if not ledgers:
            return cls()
        base = ledgers[0]
        out = cls(num_nodes=base.num_nodes, decoupled=base.decoupled)
        for i, proto in enumerate(base.entries):
            merged = LedgerEntry(**vars(proto))
            for other in ledgers[1:]:
                merged.n_ac += other.entries[i].n_ac
                merged.n_mul += other.entries[i].n_mul
                merged.input_nnz_total += other.entries[i].input_nnz_total
            out.entries.append(merged)
        return out


def build_ledger(trace: ForwardTrace, decoupled: bool = True) -> EnergyLedger:
    """Turn a forward trace's occupancy into exact operation counters."""
    ledger = EnergyLedger(num_nodes=trace.wip_stats.num_nodes, decoupled=decoupled)
    for stats in trace.layer_stats:
        if stats.kind == "propagation":
            n_ac, n_mul = count_propagation(stats)
        else:
            n_ac, n_mul = count_transformation(stats)
        ledger.entries.append(
            LedgerEntry(
                layer=stats.name,
                kind=stats.kind,
                n_ac=n_ac,
                n_mul=n_mul,
                coupled=stats.coupled,
                steps=stats.steps,
                num_nodes=stats.num_nodes,
                in_width=stats.in_width,
                out_width=stats.out_width,
                input_nnz_total=int(sum(stats.input_nnz)),
                operator_nnz=stats.operator_nnz,
            )
        )
    ledger.wip = count_wip(trace.wip_stats)
    if decoupled:
        ledger.assert_zero_mul()
    return ledger


def _paper_average_layer(entry: LedgerEntry) -> float:
    """Occupancy-average per-node AC count for one spiking layer."""
    if entry.kind == "propagation":
        return entry.input_nnz_total * entry.operator_nnz / entry.num_nodes
    return entry.input_nnz_total * entry.out_width / entry.num_nodes


def energy_report(
    ledger: EnergyLedger,
    model: EnergyModel | None = None,
    mode: str = "exact",
) -> dict:
    """Per-layer breakdown and per-link totals with the pJ cost model.

    ``mode="exact"`` uses the ledger's integer counters; per-node numbers
    divide by N and per-link numbers double them (both endpoints) and add
    the mean pair-scoring count. ``mode="paper-average"`` swaps in the
    occupancy-average formulas, including the quadratic latent-occupancy
    pair estimate.
    """
    if model is None:
        model = EnergyModel()
    if mode not in ("exact", "paper-average"):
        raise ValueError(f"unknown energy report mode: {mode!r}")
    n = ledger.num_nodes
    wip = ledger.wip

    per_layer = []
    if mode == "exact":
        for e in ledger.entries:
            per_layer.append({"layer": e.layer, "n_ac": int(e.n_ac), "n_mul": int(e.n_mul)})
        node_ac = ledger.total_n_ac / n
        node_mul = ledger.total_n_mul / n
        if wip is not None and wip.pair_count > 0:
            wip_link_ac = wip.n_ac_pairs_total / wip.pair_count
        else:
            wip_link_ac = 0.0
    else:
        node_ac = 0.0
        node_mul = 0.0
        for e in ledger.entries:
            if e.coupled:
                ac, mul = e.n_ac / n, e.n_mul / n
            else:
                ac, mul = _paper_average_layer(e), 0.0
            per_layer.append({"layer": e.layer, "n_ac": ac, "n_mul": mul})
            node_ac += ac
            node_mul += mul
        wip_link_ac = sum(z * z for z in wip.z_nnz) / n if wip is not None else 0.0

    link_ac = 2.0 * node_ac + wip_link_ac
    link_mul = 2.0 * node_mul
    e_float, e_int = energy_cost(link_ac, link_mul, model)

    report = {
        "mode": mode,
        "decoupled": ledger.decoupled,
        "num_nodes": n,
        "per_layer": per_layer,
        "wip": {
            "n_ac_per_link": wip_link_ac,
            "n_mul": 0 if wip is None else int(wip.n_mul),
            "pair_count": 0 if wip is None else int(wip.pair_count),
        },
        "per_node": {"n_ac": node_ac, "n_mul": node_mul},
        "per_link": {
            "n_ac": link_ac,
            "n_mul": link_mul,
            "e_float_pJ": e_float,
            "e_int_pJ": e_int,
        },
    }
    return report
