"""Synthetic multi-week banking populations with planted structure.

Core current accounts get a region (one dominant region plus uniform others)
and an age band. Purchases go preferentially to merchants in the home region,
transfers preferentially stay within region and age band, savings accounts
only ever move money to and from their parent, and merchant popularity is
Zipf-distributed so that a few merchants become hubs. Money-mule rings are
injected on top as hub-and-spoke motifs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .graph import NodeType, TransactionRecord

__all__ = [
    "PopulationConfig",
    "MuleConfig",
    "Account",
    "Population",
    "MuleScheme",
    "generate_population",
    "generate_week",
    "inject_mules",
    "write_truth",
    "read_truth",
    "WEEK_SECONDS",
]

WEEK_SECONDS = 7 * 24 * 3600
EPOCH0 = 1_700_000_000
DEFAULT_AGE_BANDS = ("<16", "16-29", "30-39", "40-49", "50-64", "65+")


@dataclass(frozen=True)
class PopulationConfig:
    n_core: int = 5000
    n_noncore: int = 1500
    n_foreign: int = 300
    n_merchants: int = 400
    n_regions: int = 16
    age_bands: tuple[str, ...] = DEFAULT_AGE_BANDS
    weeks: int = 5
    dominant_region_share: float = 0.12
    savings_fraction: float = 0.2
    region_homophily: float = 0.8
    age_homophily: float = 0.5
    merchant_zipf: float = 1.1
    activity_sigma: float = 0.5
    # expected weekly transactions per core account (savings: per savings account)
    pos_rate: float = 8.0
    refund_rate: float = 0.02
    transfer_rate: float = 2.5
    noncore_rate: float = 1.5
    foreign_rate: float = 0.2
    savings_rate: float = 1.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "age_bands", tuple(self.age_bands))
        counts = (self.n_core, self.n_noncore, self.n_foreign, self.n_merchants)
        rates = (self.pos_rate, self.refund_rate, self.transfer_rate, self.noncore_rate,
                 self.foreign_rate, self.savings_rate)
        if min(counts) < 0 or min(rates) < 0:
            raise ValueError("counts and rates must be non-negative")
        if self.n_regions < 1 or not self.age_bands:
            raise ValueError("need at least one region and one age band")
        for p in (self.dominant_region_share, self.savings_fraction, self.region_homophily,
                  self.age_homophily):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability out of range: {p}")


@dataclass(frozen=True)
class Account:
    node_id: str
    node_type: NodeType
    region: str = ""
    age_band: str = ""
    subtype: str = "current"
    is_mule: bool = False
    parent: str = ""


@dataclass
class Population:
    """Roster plus per-type index arrays used by the weekly generator.

    ``accounts`` doubles as the ground truth: node id -> :class:`Account`.
    """

    accounts: dict[str, Account]
    core: list[str]
    core_region: np.ndarray
    core_age: np.ndarray
    core_activity: np.ndarray
    external: list[str]
    external_region: np.ndarray
    savings: list[str]
    savings_parent: list[str]
    foreign: list[str]
    merchants: list[str]
    merchant_region: np.ndarray
    merchant_weight: np.ndarray

    @property
    def truth(self) -> dict[str, Account]:
        return self.accounts


def _region_draw(rng, n, n_regions, dominant_share):
    if n_regions == 1:
        return np.zeros(n, dtype=np.int64)
    p = np.full(n_regions, (1.0 - dominant_share) / (n_regions - 1))
    p[0] = dominant_share
    return rng.choice(n_regions, size=n, p=p)


def generate_population(cfg: PopulationConfig) -> Population:
    rng = np.random.default_rng([cfg.seed, 1])
    regions = [f"R{r:02d}" for r in range(cfg.n_regions)]
    accounts: dict[str, Account] = {}

    core = [f"C{i:06d}" for i in range(cfg.n_core)]
    core_region = _region_draw(rng, cfg.n_core, cfg.n_regions, cfg.dominant_region_share)
    core_age = rng.integers(0, len(cfg.age_bands), size=cfg.n_core)
    core_activity = rng.lognormal(-cfg.activity_sigma ** 2 / 2, cfg.activity_sigma, size=cfg.n_core)
    for cid, r, a in zip(core, core_region, core_age):
        accounts[cid] = Account(cid, NodeType.CORE, regions[r], cfg.age_bands[a])

    has_savings = np.flatnonzero(rng.random(cfg.n_core) < cfg.savings_fraction)
    savings = [f"S{i:06d}" for i in range(len(has_savings))]
    savings_parent = [core[i] for i in has_savings]
    for sid, i in zip(savings, has_savings):
        parent = accounts[core[i]]
        accounts[sid] = Account(sid, NodeType.NONCORE, parent.region, parent.age_band,
                                subtype="savings", parent=parent.node_id)

    external = [f"N{i:06d}" for i in range(cfg.n_noncore)]
    external_region = _region_draw(rng, cfg.n_noncore, cfg.n_regions, cfg.dominant_region_share)
    for nid, r in zip(external, external_region):
        accounts[nid] = Account(nid, NodeType.NONCORE, regions[r])

    foreign = [f"F{i:06d}" for i in range(cfg.n_foreign)]
    for fid in foreign:
        accounts[fid] = Account(fid, NodeType.FOREIGN)

    merchants = [f"M{i:06d}" for i in range(cfg.n_merchants)]
    merchant_region = rng.integers(0, cfg.n_regions, size=cfg.n_merchants)
    ranks = rng.permutation(cfg.n_merchants) + 1
    merchant_weight = ranks.astype(np.float64) ** -cfg.merchant_zipf
    for mid, r in zip(merchants, merchant_region):
        accounts[mid] = Account(mid, NodeType.MERCHANT, regions[r], subtype="merchant")

    return Population(accounts, core, core_region, core_age, core_activity, external,
                      external_region, savings, savings_parent, foreign, merchants,
                      merchant_region, merchant_weight)


def _weighted_pick(rng, pool: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return pool[np.minimum(idx, len(pool) - 1)]


def _transfer_partners(rng, pop: Population, senders, strength, age_strength, n_regions, n_ages):
    """Core -> core receivers, homophilous in region and, within region, in age band."""
    n = len(senders)
    reg = pop.core_region
    age = pop.core_age
    by_region = [np.flatnonzero(reg == k) for k in range(n_regions)]
    by_region_age = {}
    for k in range(n_regions):
        m = by_region[k]
        for a in range(n_ages):
            by_region_age[k, a] = m[age[m] == a]
    n_core = len(reg)
    out = np.full(n, -1, dtype=np.int64)
    same_region = rng.random(n) < strength
    same_age = rng.random(n) < age_strength
    u = rng.random((n, 8))
    for i, s in enumerate(senders):
        k = reg[s]
        if same_region[i] or n_regions == 1:
            pool = by_region_age[k, age[s]] if same_age[i] else by_region[k]
            if len(pool) <= 1:
                pool = by_region[k]
            if len(pool) <= 1:
                continue
            for t in range(8):
                j = pool[int(u[i, t] * len(pool))]
                if j != s:
                    out[i] = j
                    break
        else:
            for t in range(8):
                j = int(u[i, t] * n_core)
                if reg[j] != k:
                    out[i] = j
                    break
            else:
                others = np.flatnonzero(reg != k)
                if len(others):
                    out[i] = others[rng.integers(0, len(others))]
    return out


def _amounts(rng, n, mu, sigma):
    return np.round(rng.lognormal(mu, sigma, size=n), 2)


def generate_week(pop: Population, truth, week_index: int, cfg: PopulationConfig,
                  rng: np.random.Generator) -> list[TransactionRecord]:
    """One week of transactions for the population (mules excluded; see :func:`inject_mules`)."""
    if not pop.accounts:
        raise ValueError("empty roster")
    n_core = len(pop.core)
    t0 = EPOCH0 + week_index * WEEK_SECONDS
    C, N, F, M = NodeType.CORE, NodeType.NONCORE, NodeType.FOREIGN, NodeType.MERCHANT
    out: list[TransactionRecord] = []

    def stamp(n):
        return t0 + rng.integers(0, WEEK_SECONDS, size=n)

    def emit(s_ids, s_type, r_ids, r_type, amounts, times):
        for s, r, a, t in zip(s_ids, r_ids, amounts, times):
            out.append(TransactionRecord(s, s_type, r, r_type, float(a), int(t)))

    act = pop.core_activity
    core_arr = np.array(pop.core, dtype=object)

    # point-of-sale purchases and refunds
    if n_core and pop.merchants and cfg.pos_rate > 0:
        k = rng.poisson(cfg.pos_rate * act)
        buyers = np.repeat(np.arange(n_core), k)
        local = rng.random(len(buyers)) < cfg.region_homophily
        m_idx = np.empty(len(buyers), dtype=np.int64)
        all_m = np.arange(len(pop.merchants))
        g = ~local
        m_idx[g] = _weighted_pick(rng, all_m, pop.merchant_weight, int(g.sum()))
        for r in range(cfg.n_regions):
            sel = np.flatnonzero(local & (pop.core_region[buyers] == r))
            pool = all_m[pop.merchant_region == r]
            if len(pool) == 0:
                pool = all_m
            m_idx[sel] = _weighted_pick(rng, pool, pop.merchant_weight[pool], len(sel))
        m_arr = np.array(pop.merchants, dtype=object)
        emit(core_arr[buyers], C, m_arr[m_idx], M, _amounts(rng, len(buyers), 3.0, 0.9),
             stamp(len(buyers)))
        refund = np.flatnonzero(rng.random(len(buyers)) < cfg.refund_rate)
        emit(m_arr[m_idx[refund]], M, core_arr[buyers[refund]], C,
             _amounts(rng, len(refund), 3.0, 0.9), stamp(len(refund)))

    # core -> core transfers
    if n_core > 1 and cfg.transfer_rate > 0:
        k = rng.poisson(cfg.transfer_rate * act)
        senders = np.repeat(np.arange(n_core), k)
        recv = _transfer_partners(rng, pop, senders, cfg.region_homophily, cfg.age_homophily,
                                  cfg.n_regions, len(cfg.age_bands))
        ok = recv >= 0
        emit(core_arr[senders[ok]], C, core_arr[recv[ok]], C,
             _amounts(rng, int(ok.sum()), 4.0, 1.0), stamp(int(ok.sum())))

    # core <-> external UK accounts, homophilous in region
    if n_core and pop.external and cfg.noncore_rate > 0:
        k = rng.poisson(cfg.noncore_rate * act)
        who = np.repeat(np.arange(n_core), k)
        ext_reg = pop.external_region
        same = rng.random(len(who)) < cfg.region_homophily
        partner = rng.integers(0, len(pop.external), size=len(who))
        for r in range(cfg.n_regions):
            inside = np.flatnonzero(ext_reg == r)
            outside = np.flatnonzero(ext_reg != r)
            sel = np.flatnonzero((pop.core_region[who] == r) & same)
            if len(inside):
                partner[sel] = inside[rng.integers(0, len(inside), size=len(sel))]
            sel = np.flatnonzero((pop.core_region[who] == r) & ~same)
            if len(outside):
                partner[sel] = outside[rng.integers(0, len(outside), size=len(sel))]
        ext_arr = np.array(pop.external, dtype=object)
        outgoing = rng.random(len(who)) < 0.5
        amounts = _amounts(rng, len(who), 4.5, 1.0)
        times = stamp(len(who))
        emit(core_arr[who[outgoing]], C, ext_arr[partner[outgoing]], N, amounts[outgoing], times[outgoing])
        emit(ext_arr[partner[~outgoing]], N, core_arr[who[~outgoing]], C, amounts[~outgoing], times[~outgoing])

    # core <-> foreign
    if n_core and pop.foreign and cfg.foreign_rate > 0:
        k = rng.poisson(cfg.foreign_rate * act)
        who = np.repeat(np.arange(n_core), k)
        partner = rng.integers(0, len(pop.foreign), size=len(who))
        f_arr = np.array(pop.foreign, dtype=object)
        outgoing = rng.random(len(who)) < 0.5
        amounts = _amounts(rng, len(who), 5.0, 1.2)
        times = stamp(len(who))
        emit(core_arr[who[outgoing]], C, f_arr[partner[outgoing]], F, amounts[outgoing], times[outgoing])
        emit(f_arr[partner[~outgoing]], F, core_arr[who[~outgoing]], C, amounts[~outgoing], times[~outgoing])

    # savings <-> parent only
    if pop.savings and cfg.savings_rate > 0:
        k = rng.poisson(cfg.savings_rate, size=len(pop.savings))
        idx = np.repeat(np.arange(len(pop.savings)), k)
        s_arr = np.array(pop.savings, dtype=object)
        p_arr = np.array(pop.savings_parent, dtype=object)
        deposit = rng.random(len(idx)) < 0.6
        amounts = _amounts(rng, len(idx), 4.5, 0.8)
        times = stamp(len(idx))
        emit(p_arr[idx[deposit]], C, s_arr[idx[deposit]], N, amounts[deposit], times[deposit])
        emit(s_arr[idx[~deposit]], N, p_arr[idx[~deposit]], C, amounts[~deposit], times[~deposit])

    return out


@dataclass(frozen=True)
class MuleConfig:
    """Hub-and-spoke mule motif knobs (synthetic conventions, not measured values)."""

    n_mules: int = 100
    spokes_per_mule: int = 4
    dispersal: int = 3
    ring_size: int = 10
    pool_per_ring: int = 12
    window_seconds: int = 48 * 3600
    inflow_mu: float = 5.0
    inflow_sigma: float = 0.6
    max_retention: float = 0.1


@dataclass
class MuleScheme:
    """Which accounts are mules and which controller pools feed and drain them."""

    mules: list[str]
    ring_of: dict[str, int]
    sources: list[list[str]]
    sinks: list[list[str]]


def _plan_mules(truth: dict[str, Account], cfg: MuleConfig, rng) -> MuleScheme:
    eligible = sorted(a.node_id for a in truth.values()
                      if a.node_type is NodeType.CORE and a.subtype == "current" and not a.is_mule)
    if cfg.n_mules > len(eligible):
        raise ValueError(f"need {cfg.n_mules} eligible accounts, only {len(eligible)} available")
    mules = sorted(rng.choice(eligible, size=cfg.n_mules, replace=False).tolist()) if cfg.n_mules else []
    n_rings = -(-cfg.n_mules // max(cfg.ring_size, 1)) if cfg.n_mules else 0
    order = rng.permutation(len(mules))
    ring_of = {mules[j]: int(i // max(cfg.ring_size, 1)) for i, j in enumerate(order)}
    mule_set = set(mules)
    outer = sorted(a.node_id for a in truth.values()
                   if (a.node_type is NodeType.FOREIGN
                       or (a.node_type is NodeType.NONCORE and a.subtype == "current")))
    core = [c for c in eligible if c not in mule_set]
    candidates = outer + core
    sources, sinks = [], []
    for _ in range(n_rings):
        need = 2 * cfg.pool_per_ring
        if need > len(candidates):
            raise ValueError("not enough accounts to form mule controller pools")
        pick = rng.choice(len(candidates), size=need, replace=False)
        sources.append([candidates[i] for i in pick[:cfg.pool_per_ring]])
        sinks.append([candidates[i] for i in pick[cfg.pool_per_ring:]])
    return MuleScheme(mules, ring_of, sources, sinks)


def inject_mules(records: list[TransactionRecord], truth: dict[str, Account], n_mules: int,
                 spokes_per_mule: int, rng: np.random.Generator, cfg: MuleConfig | None = None,
                 scheme: MuleScheme | None = None, week_index: int = 0):
    """Add hub-and-spoke mule activity to a week of records.

    Each mule receives one transfer from each of ``spokes_per_mule`` ring
    sources it has no prior edge with, inside a short window, then forwards
    the inflow minus a retention of at most ``max_retention`` to ``dispersal``
    fresh sinks. Pass the returned ``scheme`` back in to keep the same mules
    and rings in later weeks.

    Returns ``(records, truth, scheme)``; the inputs are not modified.
    """
    cfg = replace(cfg or MuleConfig(), n_mules=n_mules, spokes_per_mule=spokes_per_mule)
    if scheme is None:
        scheme = _plan_mules(truth, cfg, rng)
    if not scheme.mules:
        return list(records), dict(truth), scheme

    linked: dict[str, set[str]] = {}
    for r in records:
        linked.setdefault(r.sender_id, set()).add(r.receiver_id)
        linked.setdefault(r.receiver_id, set()).add(r.sender_id)

    out = list(records)
    t_base = EPOCH0 + week_index * WEEK_SECONDS
    truth = dict(truth)
    for mule in scheme.mules:
        truth[mule] = replace(truth[mule], is_mule=True)
        ring = scheme.ring_of[mule]
        seen = linked.get(mule, set())
        srcs = [s for s in scheme.sources[ring] if s not in seen]
        if len(srcs) < cfg.spokes_per_mule:
            raise ValueError(f"mule {mule}: only {len(srcs)} unconnected sources for "
                             f"{cfg.spokes_per_mule} spokes")
        spokes = [srcs[i] for i in sorted(rng.choice(len(srcs), size=cfg.spokes_per_mule, replace=False))]
        blocked = seen | set(spokes)
        dsts = [s for s in scheme.sinks[ring] if s not in blocked]
        n_out = min(cfg.dispersal, len(dsts))
        if n_out < 1:
            raise ValueError(f"mule {mule}: no fresh counterparty to disperse to")
        fresh = [dsts[i] for i in sorted(rng.choice(len(dsts), size=n_out, replace=False))]

        start = t_base + int(rng.integers(0, WEEK_SECONDS - cfg.window_seconds))
        half = cfg.window_seconds // 2
        inflow = np.round(rng.lognormal(cfg.inflow_mu, cfg.inflow_sigma, size=len(spokes)), 2)
        for s, a in zip(spokes, inflow):
            out.append(TransactionRecord(s, truth[s].node_type, mule, NodeType.CORE, float(a),
                                         start + int(rng.integers(0, half))))
        total_out = float(inflow.sum()) * (1.0 - rng.uniform(0.0, cfg.max_retention))
        shares = rng.dirichlet(np.ones(n_out)) * total_out
        for d, a in zip(fresh, shares):
            out.append(TransactionRecord(mule, NodeType.CORE, d, truth[d].node_type,
                                         float(np.floor(a * 100) / 100),
                                         start + half + int(rng.integers(0, half))))
    return out, truth, scheme


TRUTH_HEADER = ("node_id", "node_type", "region", "age_band", "subtype", "is_mule")


def write_truth(path, truth: dict[str, Account]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for nid in sorted(truth):
            a = truth[nid]
            w.writerow([nid, a.node_type.value, a.region, a.age_band, a.subtype, int(a.is_mule)])


def read_truth(path) -> dict[str, Account]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRUTH_HEADER:
            raise ValueError(f"{path}: bad truth header {reader.fieldnames}")
        for row in reader:
            out[row["node_id"]] = Account(row["node_id"], NodeType(row["node_type"]), row["region"],
                                          row["age_band"], row["subtype"], row["is_mule"] == "1")
    return out
