"""Range filters over 64-bit integer keys built on a rank-and-select quotient filter."""

from .concurrency import RegionLockedFilter
from .core import (
    CapacityError,
    FilterParams,
    FilterStats,
    MementoFilter,
    NotFoundError,
    TableFullError,
    size_for,
)
from .expandable import ExpandableMementoFilter, fluid_age, fluid_decode, fluid_encode
from .keyspace import HashAddress, KeyParts, address_of, join_key, memento_bits_for, split_key
from .rsqf import RsqfTable

__all__ = [
    "CapacityError",
    "ExpandableMementoFilter",
    "FilterParams",
    "FilterStats",
    "HashAddress",
    "KeyParts",
    "MementoFilter",
    "NotFoundError",
    "RegionLockedFilter",
    "RsqfTable",
    "TableFullError",
    "address_of",
    "fluid_age",
    "fluid_decode",
    "fluid_encode",
    "join_key",
    "memento_bits_for",
    "size_for",
    "split_key",
]
