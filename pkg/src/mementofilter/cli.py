"""Command line entry point: ``memento <experiment> [options]``.

Each experiment writes CSV rows to stdout (or ``--output``).
"""

from __future__ import annotations

import csv
import sys
from typing import Callable

import click

from . import bench


def _emit(rows: list[dict], output: str | None) -> None:
    if not rows:
        return
    fields = list(rows[0])
    for row in rows[1:]:
        fields += [k for k in row if k not in fields]
    handle = open(output, "w", newline="") if output else sys.stdout
    try:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if output:
            handle.close()


def _common(fn: Callable) -> Callable:
    opts = [
        click.option("--dataset", type=click.Choice(bench.DATASETS), default="uniform", show_default=True),
        click.option("--data-file", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Raw little-endian uint64 keys to sample from instead of a synthetic dataset."),
        click.option("--n-keys", type=click.IntRange(min=1), default=100_000, show_default=True),
        click.option("--bits-per-key", type=click.FloatRange(min=1.0), default=20.0, show_default=True),
        click.option("--range-len", type=click.IntRange(min=1), default=32, show_default=True),
        click.option("--correlation", type=click.FloatRange(0.0, 1.0), default=0.0, show_default=True),
        click.option("--queries", type=click.IntRange(min=1), default=100_000, show_default=True),
        click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True),
        click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
                     help="Query threads for the fpr experiment."),
        click.option("--output", type=click.Path(dir_okay=False, writable=True), default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _run(rows_fn: Callable[[], list[dict]], output: str | None) -> None:
    try:
        rows = rows_fn()
    except (ValueError, RuntimeError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _emit(rows, output)


@click.group()
def main() -> None:
    """Benchmarks and checks for the memento range filter."""


@main.command()
@_common
@click.option("--expandable", is_flag=True, help="Use the expandable filter.")
@click.option("--query-kind", type=click.Choice(bench.QUERY_KINDS), default=None,
              help="Defaults to correlated when --correlation > 0.")
def fpr(dataset, data_file, n_keys, bits_per_key, range_len, correlation, queries, seed, threads, output, expandable, query_kind):
    """False-positive rate and latency of range queries."""
    _run(
        lambda: bench.run_fpr(
            dataset, n_keys, bits_per_key, range_len, correlation, queries, seed, expandable, query_kind, data_file, threads
        ),
        output,
    )


@main.command()
@_common
@click.option("--start-fraction", type=click.IntRange(min=1), default=64, show_default=True)
def expand(dataset, data_file, n_keys, bits_per_key, range_len, correlation, queries, seed, threads, output, start_fraction):
    """Grow an expandable filter from a fraction of the data."""
    _run(
        lambda: bench.run_expand(dataset, n_keys, bits_per_key, range_len, correlation, queries, seed, start_fraction, data_file),
        output,
    )


@main.command()
@_common
def sweep(dataset, data_file, n_keys, bits_per_key, range_len, correlation, queries, seed, threads, output):
    """False-positive rate across memento widths at a fixed budget."""
    _run(lambda: bench.run_sweep(dataset, n_keys, bits_per_key, range_len, correlation, queries, seed, 3, data_file), output)


@main.command()
@_common
def bulkbench(dataset, data_file, n_keys, bits_per_key, range_len, correlation, queries, seed, threads, output):
    """Bulk load versus key-by-key insertion."""
    _run(lambda: bench.run_bulk(dataset, n_keys, bits_per_key, range_len, seed, data_file), output)


@main.command()
@click.option("--sequences", type=click.IntRange(min=1), default=10_000, show_default=True)
@click.option("--universe-bits", type=click.IntRange(1, 64), default=16, show_default=True)
@click.option("--max-ops", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--output", type=click.Path(dir_okay=False, writable=True), default=None)
def fuzz(sequences, universe_bits, max_ops, seed, output):
    """Random operation sequences against an exact set; exits 1 on a false negative."""
    report = bench.fuzz(sequences, seed, universe_bits, max_ops)
    _emit(
        [dict(experiment="fuzz", seed=seed, sequences=report.sequences, operations=report.operations,
              checks=report.checks, false_negatives=report.false_negatives, first_failure=report.first_failure or "")],
        output,
    )
    if report.false_negatives:
        sys.exit(1)


if __name__ == "__main__":
    main()
