"""Bundled example graphs: the solar system and the Rutherford atom."""

from __future__ import annotations

from importlib import resources

from .ir import RelGraph, parse_sexpr

# statement numbers of the bundled listings -> parsed node ids
ATOM_IDS = {k: k - 1 for k in range(1, 8)}
SOLAR_IDS = {**{k: k - 8 for k in range(8, 18)}, 18: 11, 19: 12}
SOLAR_AND = 10


def sexp_text(name: str) -> str:
    return resources.files("structmap.data").joinpath(f"{name}.sexp").read_text(encoding="utf-8")


def load(name: str) -> RelGraph:
    """Parse a bundled graph (``"atom"`` or ``"solar"``)."""
    return parse_sexpr(sexp_text(name))


def solar_atom() -> tuple[RelGraph, RelGraph]:
    return load("solar"), load("atom")
