"""Toolkit for catalog-driven VM contextualization, identity mapping,
embarrassingly parallel parameter scans and process benchmarking."""

from phenocloud.catalog import Catalog, parse_catalog, validate_catalog, effective_version
from phenocloud.resolver import resolve, check_cycles

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "parse_catalog",
    "validate_catalog",
    "effective_version",
    "resolve",
    "check_cycles",
]
