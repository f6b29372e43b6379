"""
JSON literals for grids, elements and fragment masks
Floats are written with repr precision, so a literal reloads to an identical object
"""
import json
import logging
from pathlib import Path
import numpy as np
from ..lattice import CellGrid, FragmentMask, StepElement
from .errors import ContractError, SpecError

serialization_logger = logging.getLogger("serialization")
serialization_logger.setLevel(logging.DEBUG)
serialization_logger.addHandler(logging.NullHandler())


def load_json(path: str | Path) -> dict:
    """
    Reads a JSON document, syntax errors become SpecError with the line and column
    :param path: file to read
    :returns: parsed document
    """
    path = Path(path)
    if not path.is_file():
        raise SpecError(f"File {str(path)!r} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"Invalid JSON in {path.name}: {e.msg} at column {e.colno}", line=e.lineno)


def dump_json(document, path: str | Path | None = None) -> str:
    """Canonical text form: sorted keys, 2-space indent"""
    text = json.dumps(document, indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


# region grids and elements

def grid_to_spec(grid: CellGrid) -> dict:
    return {"weights": grid.weights.tolist(), "base_interval": list(grid.base_interval)}


def grid_from_spec(spec, field: str = "grid") -> CellGrid:
    """
    :param spec: {"weights": [...], "base_interval": [a, b]} or {"n_cells": n} for a uniform grid on [0, 1]
    :param field: path reported in errors
    """
    if not isinstance(spec, dict):
        raise SpecError("Grid literal must be an object", field=field)
    base = tuple(spec.get("base_interval", (0.0, 1.0)))
    try:
        if "weights" in spec:
            return CellGrid(spec["weights"], base)
        if "n_cells" in spec:
            return CellGrid.uniform(int(spec["n_cells"]), base)
    except (ContractError, TypeError, ValueError) as e:
        raise SpecError(f"Invalid grid: {e}", field=field)
    raise SpecError("Grid literal needs 'weights' or 'n_cells'", field=field)


def element_to_spec(x: StepElement) -> dict:
    return {"weights": x.grid.weights.tolist(), "base_interval": list(x.grid.base_interval),
            "values": x.values.tolist()}


def element_from_spec(spec, grid: CellGrid | None = None, field: str = "element") -> StepElement:
    """
    Builds an element from one of the literal forms
    {"weights": [...], "values": [...]}  full literal with its own grid
    {"values": [...]}                    values on the given grid
    {"constant": c}                      x = c on every cell
    {"expression": "sin(t)"}             sympy expression in t sampled at the cell centers
    :param spec: literal
    :param grid: grid for the grid-free forms
    :param field: path reported in errors
    """
    if not isinstance(spec, dict):
        raise SpecError("Element literal must be an object", field=field)
    if "weights" in spec:
        grid = grid_from_spec(spec, field)
    if grid is None:
        raise SpecError("Element literal needs a grid", field=field)
    try:
        if "values" in spec:
            return StepElement(grid, spec["values"])
        if "constant" in spec:
            return StepElement.constant(grid, float(spec["constant"]))
        if "expression" in spec:
            # local import keeps sympy off the lattice import path
            from .kernels import CoefficientFunction
            return StepElement(grid, CoefficientFunction(str(spec["expression"]))(grid.centers))
    except (ContractError, TypeError, ValueError) as e:
        raise SpecError(f"Invalid element: {e}", field=field)
    raise SpecError("Element literal needs 'values', 'constant' or 'expression'", field=field)

# endregion


def mask_to_hex(mask: FragmentMask) -> str:
    return mask.to_hex()


def mask_from_hex(base: StepElement, text: str, field: str = "mask") -> FragmentMask:
    try:
        return FragmentMask.from_hex(base, text)
    except (ValueError, TypeError):
        raise SpecError(f"Invalid hex mask {text!r}", field=field)


def vector_to_list(v: np.ndarray) -> list[float]:
    return np.asarray(v, dtype=float).reshape(-1).tolist()
