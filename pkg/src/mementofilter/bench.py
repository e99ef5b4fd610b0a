"""Workloads, error bounds and the experiments behind the CLI.

Every experiment returns a list of flat dict rows.  Query workloads only contain
ranges that are truly empty, so the fraction answered positive is the false
positive rate.
"""

from __future__ import annotations

import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import box_slots
from .core import CapacityError, FilterParams, MementoFilter, TableFullError, size_for
from .expandable import ExpandableMementoFilter
from .keyspace import KEY_MASK, memento_bits_for
from .oracle import ExactSet, ranges_nonempty

DATASETS = ("uniform", "normal")
QUERY_KINDS = ("uncorrelated", "correlated", "real")
TIMING_COLUMNS = ("construction_s", "mean_query_ns", "p99_query_ns", "insert_ns_per_key", "bulk_s", "incremental_s")


# ---------------------------------------------------------------- bounds


def point_fpr_bound(alpha: float, ell: float, f: int) -> float:
    return alpha / ell * 2.0**-f


def range_fpr_bound(alpha: float, ell: float, f: int) -> float:
    return alpha / ell * 2.0 ** (1 - f)


def expandable_fpr_bound(expansions: int, alpha: float, ell: float, f: int) -> float:
    """``alpha`` is the load at which the filter expands, not its current load."""
    return (expansions + 2) * alpha / ell * 2.0**-f


def memory_formula(alpha: float, f: int, r: int, expandable: bool = False) -> float:
    """Bits per key predicted for a table at load ``alpha``."""
    return (3.125 + f + r + (1 if expandable else 0)) / alpha


def cluster_length_bound(alpha: float, ell: int, f: int, r: int) -> float:
    """Upper bound on the mean cluster length with ``ell`` keys per box."""
    beta = int(box_slots(ell, r, f + r, False))
    gamma = ell / beta
    return alpha * gamma / ((1 - math.exp(-alpha / ell)) * (gamma - alpha) ** 2)


# ---------------------------------------------------------------- data


def make_dataset(kind: str, n: int, rng: np.random.Generator, path: str | Path | None = None) -> np.ndarray:
    """``n`` distinct sorted 64-bit keys."""
    if path is not None:
        keys = np.unique(np.fromfile(path, dtype="<u8"))
        if keys.size < n:
            raise ValueError(f"{path} holds only {keys.size} distinct keys")
        return np.sort(rng.choice(keys, n, replace=False))
    if kind not in DATASETS:
        raise ValueError(f"unknown dataset {kind!r}")
    keys = np.zeros(0, np.uint64)
    while keys.size < n:
        need = n - keys.size
        if kind == "uniform":
            fresh = rng.integers(0, KEY_MASK, need, dtype=np.uint64, endpoint=True)
        else:
            x = rng.normal(2.0**63, 0.1 * 2.0**63, need)
            fresh = np.clip(x, 0, 2.0**64 - 4096).astype(np.uint64)
        keys = np.unique(np.concatenate((keys, fresh)))
    if keys.size > n:
        keys = np.sort(rng.choice(keys, n, replace=False))
    return keys


def split_real(keys: np.ndarray, n_queries: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pick query anchors from the data and drop them from it."""
    pick = rng.choice(keys.size, min(n_queries, keys.size // 2), replace=False)
    mask = np.ones(keys.size, bool)
    mask[pick] = False
    return keys[mask], np.sort(keys[pick])


def make_queries(
    keys: np.ndarray,
    n_queries: int,
    range_len: int,
    rng: np.random.Generator,
    kind: str = "uncorrelated",
    correlation: float = 0.0,
    anchors: np.ndarray | None = None,
    max_rounds: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Empty ranges ``[x, x + range_len - 1]`` against the sorted ``keys``."""
    if kind not in QUERY_KINDS:
        raise ValueError(f"unknown query kind {kind!r}")
    if not 0.0 <= correlation <= 1.0:
        raise ValueError("correlation must be in [0, 1]")
    top = np.uint64(KEY_MASK - (range_len - 1))
    span = np.uint64(range_len - 1)
    lefts = np.empty(0, np.uint64)
    for _ in range(max_rounds):
        need = n_queries - lefts.size
        if need <= 0:
            break
        if kind == "uncorrelated":
            x = rng.integers(0, top, need, dtype=np.uint64, endpoint=True)
        elif kind == "correlated":
            base = keys[rng.integers(0, keys.size, need)]
            width = int(2 ** (30 * (1 - correlation)))
            jump = rng.integers(0, width, need, dtype=np.uint64, endpoint=True)
            x = np.minimum(base, top - np.minimum(jump, top)) + jump
        else:
            if anchors is None or anchors.size == 0:
                raise ValueError("real queries need anchors")
            x = np.minimum(anchors[rng.integers(0, anchors.size, need)], top)
        empty = ~ranges_nonempty(keys, x, x + span)
        lefts = np.concatenate((lefts, x[empty]))
    if lefts.size < n_queries:
        raise RuntimeError("could not generate enough empty queries")
    return lefts, lefts + span


@dataclass
class FprResult:
    n_queries: int
    false_positives: int
    mean_query_ns: float
    p99_query_ns: float
    probes_per_query: float

    @property
    def fpr(self) -> float:
        return self.false_positives / self.n_queries

    @property
    def std_error(self) -> float:
        p = max(self.fpr, 1.0 / self.n_queries)
        return math.sqrt(p * (1 - p) / self.n_queries)


def measure_fpr(flt, lefts: np.ndarray, rights: np.ndarray, chunk: int = 2048, threads: int = 1) -> FprResult:
    """False-positive rate over empty queries, with per-query latency from chunked timing."""
    flt.range_query_many(lefts[:chunk], rights[:chunk])  # warm-up
    probes0, queries0 = flt.partition_probes, flt.queries

    def work(lo: int, hi: int) -> tuple[int, list[float]]:
        hits, lat = 0, []
        for i in range(lo, hi, chunk):
            j = min(i + chunk, hi)
            t0 = time.perf_counter_ns()
            res = flt.range_query_many(lefts[i:j], rights[i:j])
            lat.append((time.perf_counter_ns() - t0) / res.size)
            hits += int(res.sum())
        return hits, lat

    bounds = np.linspace(0, lefts.size, threads + 1).astype(int)
    if threads == 1:
        parts = [work(0, lefts.size)]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda k: work(bounds[k], bounds[k + 1]), range(threads)))
    fps = sum(p[0] for p in parts)
    per_query = [x for p in parts for x in p[1]]
    probes = (flt.partition_probes - probes0) / max(1, flt.queries - queries0)
    return FprResult(lefts.size, fps, float(np.mean(per_query)), float(np.percentile(per_query, 99)), probes)


# ---------------------------------------------------------------- experiments


def _sized(n_keys: int, bpk: float, range_len: int, expandable: bool, seed: int, r: int | None = None) -> FilterParams:
    if r is None:
        return size_for(n_keys, bpk, range_len, expandable=expandable, seed=seed)
    base = size_for(n_keys, bpk, 2, expandable=expandable, seed=seed)
    f = base.fingerprint_bits + base.memento_bits - r
    if f < 1:
        raise ValueError("memory budget too small for this memento size")
    return FilterParams(base.n_slots, f, r, base.max_load_factor, seed)


def build(keys: np.ndarray, params: FilterParams, expandable: bool = False):
    if expandable:
        flt = ExpandableMementoFilter(params)
        flt.insert_many(keys)
        return flt
    return MementoFilter.bulk_load(params, keys)


def run_fpr(
    dataset: str = "uniform",
    n_keys: int = 100_000,
    bits_per_key: float = 20.0,
    range_len: int = 32,
    correlation: float = 0.0,
    n_queries: int = 100_000,
    seed: int = 0,
    expandable: bool = False,
    query_kind: str | None = None,
    data_path: str | None = None,
    threads: int = 1,
) -> list[dict]:
    rng = np.random.default_rng(seed)
    keys = make_dataset(dataset, n_keys, rng, data_path)
    anchors = None
    kind = query_kind or ("correlated" if correlation > 0 else "uncorrelated")
    if kind == "real":
        keys, anchors = split_real(keys, n_queries, rng)
    params = _sized(keys.size, bits_per_key, range_len, expandable, seed)
    t0 = time.perf_counter()
    flt = build(keys, params, expandable)
    construction = time.perf_counter() - t0
    lefts, rights = make_queries(keys, n_queries, range_len, rng, kind, correlation, anchors)
    res = measure_fpr(flt, lefts, rights, threads=threads)
    st = flt.stats()
    ell = st.avg_partition_size or 1.0
    bound = range_fpr_bound(st.load_factor, ell, params.fingerprint_bits)
    if range_len == 1:
        bound = point_fpr_bound(st.load_factor, ell, params.fingerprint_bits)
    return [
        dict(
            experiment="fpr",
            dataset=dataset,
            query_kind=kind,
            n_keys=int(keys.size),
            bits_per_key_budget=bits_per_key,
            bits_per_key=round(st.bits_per_key, 4),
            range_len=range_len,
            correlation=correlation,
            expandable=expandable,
            f=params.fingerprint_bits,
            r=params.memento_bits,
            n_slots=st.n_slots,
            load_factor=round(st.load_factor, 6),
            avg_partition_size=round(ell, 6),
            n_queries=res.n_queries,
            false_positives=res.false_positives,
            fpr=res.fpr,
            fpr_std_error=res.std_error,
            fpr_bound=bound,
            probes_per_query=round(res.probes_per_query, 4),
            construction_s=round(construction, 4),
            mean_query_ns=round(res.mean_query_ns, 1),
            p99_query_ns=round(res.p99_query_ns, 1),
        )
    ]


def run_expand(
    dataset: str = "uniform",
    n_keys: int = 1_000_000,
    bits_per_key: float = 20.0,
    range_len: int = 32,
    correlation: float = 0.0,
    n_queries: int = 100_000,
    seed: int = 0,
    start_fraction: int = 64,
    data_path: str | None = None,
) -> list[dict]:
    """Grow from ``1/start_fraction`` of the data, measuring after every expansion."""
    rng = np.random.default_rng(seed)
    keys = make_dataset(dataset, n_keys, rng, data_path)
    order = rng.permutation(keys.size)
    stream = keys[order]
    first = max(1, keys.size // start_fraction)
    params = _sized(first, bits_per_key, range_len, True, seed)
    flt = ExpandableMementoFilter(params)
    flt.insert_many(stream[:first])
    kind = "correlated" if correlation > 0 else "uncorrelated"
    rows = []
    pos = first
    while pos < stream.size:
        e0 = flt.expansions
        t0 = time.perf_counter()
        step = 4096
        while pos < stream.size and flt.expansions == e0:
            chunk = stream[pos : pos + step]
            # insert one key at a time near the boundary so the expansion point is exact
            if flt.main.table.stored_slots + chunk.size >= flt.main.capacity:
                flt.insert(int(chunk[0]))
                pos += 1
            else:
                flt.insert_many(chunk)
                pos += chunk.size
        elapsed = time.perf_counter() - t0
        if flt.expansions == e0:
            break
        inserted = np.sort(stream[:pos])
        lefts, rights = make_queries(inserted, n_queries, range_len, rng, kind, correlation)
        res = measure_fpr(flt, lefts, rights)
        st = flt.stats()
        ell = st.avg_partition_size or 1.0
        rows.append(
            dict(
                experiment="expand",
                dataset=dataset,
                expansions=flt.expansions,
                n_keys=pos,
                n_slots=flt.n_slots,
                f=params.fingerprint_bits,
                r=params.memento_bits,
                load_factor=round(st.load_factor, 6),
                avg_partition_size=round(ell, 6),
                secondaries=len(flt.secondaries),
                bits_per_key=round(st.bits_per_key, 4),
                n_queries=res.n_queries,
                false_positives=res.false_positives,
                fpr=res.fpr,
                fpr_std_error=res.std_error,
                fpr_bound=expandable_fpr_bound(flt.expansions, params.max_load_factor, ell, params.fingerprint_bits),
                insert_ns_per_key=round(1e9 * elapsed / max(1, pos - first), 1),
                mean_query_ns=round(res.mean_query_ns, 1),
                p99_query_ns=round(res.p99_query_ns, 1),
            )
        )
        first = pos
    return rows


def run_sweep(
    dataset: str = "uniform",
    n_keys: int = 100_000,
    bits_per_key: float = 20.0,
    range_len: int = 32,
    correlation: float = 0.8,
    n_queries: int = 100_000,
    seed: int = 0,
    extra: int = 3,
    data_path: str | None = None,
) -> list[dict]:
    """Vary the memento width at a fixed memory budget."""
    rng = np.random.default_rng(seed)
    keys = make_dataset(dataset, n_keys, rng, data_path)
    kind = "correlated" if correlation > 0 else "uncorrelated"
    lefts, rights = make_queries(keys, n_queries, range_len, rng, kind, correlation)
    r_star = memento_bits_for(range_len)
    rows = []
    for r in range(1, r_star + extra + 1):
        try:
            params = _sized(keys.size, bits_per_key, range_len, False, seed, r)
        except ValueError:
            continue
        flt = build(keys, params)
        res = measure_fpr(flt, lefts, rights)
        st = flt.stats()
        rows.append(
            dict(
                experiment="sweep",
                dataset=dataset,
                r=r,
                r_star=r_star,
                f=params.fingerprint_bits,
                n_keys=int(keys.size),
                range_len=range_len,
                correlation=correlation,
                load_factor=round(st.load_factor, 6),
                avg_partition_size=round(st.avg_partition_size, 6),
                n_queries=res.n_queries,
                false_positives=res.false_positives,
                fpr=res.fpr,
                fpr_std_error=res.std_error,
                probes_per_query=round(res.probes_per_query, 4),
                expected_probes=2 ** max(0, r_star - r) + 1,
                mean_query_ns=round(res.mean_query_ns, 1),
                p99_query_ns=round(res.p99_query_ns, 1),
            )
        )
    return rows


def run_bulk(
    dataset: str = "uniform",
    n_keys: int = 1_000_000,
    bits_per_key: float = 20.0,
    range_len: int = 32,
    seed: int = 0,
    data_path: str | None = None,
) -> list[dict]:
    """Bulk load against key-by-key insertion of the same keys."""
    rng = np.random.default_rng(seed)
    keys = make_dataset(dataset, n_keys, rng, data_path)
    params = _sized(keys.size, bits_per_key, range_len, False, seed)
    t0 = time.perf_counter()
    bulk = MementoFilter.bulk_load(params, keys)
    t_bulk = time.perf_counter() - t0
    inc = MementoFilter(params)
    t0 = time.perf_counter()
    inc.insert_many(keys)
    t_inc = time.perf_counter() - t0
    return [
        dict(
            experiment="bulkbench",
            dataset=dataset,
            n_keys=int(keys.size),
            f=params.fingerprint_bits,
            r=params.memento_bits,
            load_factor=round(bulk.load_factor, 6),
            identical=bulk.to_bytes() == inc.to_bytes(),
            bulk_s=round(t_bulk, 4),
            incremental_s=round(t_inc, 4),
        )
    ]


# ---------------------------------------------------------------- fuzzing


@dataclass
class FuzzReport:
    sequences: int = 0
    operations: int = 0
    checks: int = 0
    false_negatives: int = 0
    first_failure: str | None = None

    def fail(self, what: str) -> None:
        self.false_negatives += 1
        if self.first_failure is None:
            self.first_failure = what


def _fuzz_one(rng: random.Random, report: FuzzReport, expandable: bool, universe_bits: int, max_ops: int) -> None:
    r = rng.randint(1, 5)
    f = rng.randint(1, 6) if expandable else rng.randint(2, 8)
    n = rng.choice((1, 2, 4, 8, 16)) if expandable else rng.choice((16, 32, 64, 128))
    params = FilterParams(n, f, r, rng.choice((0.5, 0.8, 0.95)), rng.randrange(1 << 20))
    flt = ExpandableMementoFilter(params) if expandable else MementoFilter(params)
    truth = ExactSet()
    umax = (1 << universe_bits) - 1
    hot = [rng.randrange(umax + 1) for _ in range(4)]
    tag = f"{'expandable' if expandable else 'static'} {params}"

    def key() -> int:
        if truth.keys and rng.random() < 0.3:
            return min(umax, max(0, rng.choice(truth.keys) + rng.randint(-3, 3)))
        if rng.random() < 0.3:
            return min(umax, rng.choice(hot) + rng.randrange(1 << (r + 1)))
        return rng.randrange(umax + 1)

    for _ in range(rng.randint(1, max_ops)):
        report.operations += 1
        op = rng.random()
        if op < 0.45:
            k = key()
            try:
                flt.insert(k)
            except (CapacityError, TableFullError):
                continue
            truth.insert(k)
        elif op < 0.6 and truth.keys:
            k = rng.choice(truth.keys)
            flt.delete(k)
            truth.delete(k)
        elif op < 0.8:
            k = key()
            if k in truth:
                report.checks += 1
                if not flt.point_query(k):
                    report.fail(f"{tag}: point {k}")
        elif op < 0.95:
            lo = key()
            hi = min(umax, lo + rng.randrange(1 << rng.randint(0, r + 2)))
            if truth.range_nonempty(lo, hi):
                report.checks += 1
                if not flt.range_query(lo, hi):
                    report.fail(f"{tag}: range [{lo}, {hi}]")
        elif expandable:
            if truth.keys and rng.random() < 0.5:
                flt.rejuvenate(rng.choice(truth.keys))
            elif rng.random() < 0.7:
                flt.expand()
            elif flt.n_slots > 1:
                try:
                    flt.contract()
                except CapacityError:
                    pass
    if truth.keys:
        report.checks += len(truth.keys)
        got = flt.point_query_many(np.array(truth.keys, np.uint64))
        for k in np.array(truth.keys)[~got].tolist():
            report.fail(f"{tag}: final point {k}")


def fuzz(n_sequences: int = 1000, seed: int = 0, universe_bits: int = 16, max_ops: int = 16) -> FuzzReport:
    """Random operation sequences checked against an exact set."""
    if not 1 <= universe_bits <= 64:
        raise ValueError("universe_bits must be in [1, 64]")
    rng = random.Random(seed)
    report = FuzzReport()
    for i in range(n_sequences):
        _fuzz_one(rng, report, expandable=bool(i & 1), universe_bits=universe_bits, max_ops=max_ops)
        report.sequences += 1
    return report
