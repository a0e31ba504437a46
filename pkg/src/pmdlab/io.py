"""File formats: versioned JSON for the core objects, CSV for samples.

Every JSON document carries ``"schema": "pmdlab/1"``. Parameter matrices are
``{"n", "k", "rows"}``; pmf tables are ``{"k", "points": [{"x", "p"}, ...]}``.
Sample files are CSV with one lattice point per line (optional header,
auto-detected).
"""

import json

import numpy as np

from .core import (
    BlockGaussian,
    GaussianBlock,
    ParamMatrix,
    SparsePmf,
    StructuralDecomposition,
)

SCHEMA = "pmdlab/1"


class FormatError(ValueError):
    """Raised when a document does not match the expected schema."""


def _check_schema(doc):
    tag = doc.get("schema", SCHEMA)
    if tag != SCHEMA:
        raise FormatError(f"unsupported schema {tag!r}")


def param_matrix_to_json(pm: ParamMatrix) -> dict:
    return {
        "schema": SCHEMA,
        "n": pm.n,
        "k": pm.k,
        "rows": [[float(v) for v in row] for row in pm.rows],
    }


def param_matrix_from_json(doc: dict) -> ParamMatrix:
    _check_schema(doc)
    try:
        n = int(doc["n"])
        k = int(doc["k"])
        rows = doc["rows"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad parameter-matrix document: {exc}") from exc
    arr = np.asarray(rows, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, k)
    if arr.shape != (n, k):
        raise FormatError(f"rows have shape {arr.shape}, header says ({n}, {k})")
    try:
        return ParamMatrix(arr)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def sparse_pmf_to_json(pmf: SparsePmf) -> dict:
    points = [{"x": [int(v) for v in x], "p": float(p)}
              for x, p in sorted(pmf.table.items())]
    return {"schema": SCHEMA, "k": pmf.dims, "points": points}


def sparse_pmf_from_json(doc: dict) -> SparsePmf:
    _check_schema(doc)
    try:
        k = int(doc["k"])
        table = {tuple(int(v) for v in entry["x"]): float(entry["p"])
                 for entry in doc["points"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad pmf document: {exc}") from exc
    try:
        return SparsePmf(k, table)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def block_gaussian_to_json(bg: BlockGaussian) -> dict:
    return {
        "schema": SCHEMA,
        "dims": bg.dims,
        "blocks": [
            {
                "coords": list(b.coords),
                "pivot": b.pivot,
                "total": b.total,
                "mean": [float(v) for v in b.mean],
                "cov": [float(v) for v in np.asarray(b.cov).ravel()],
            }
            for b in bg.blocks
        ],
    }


def block_gaussian_from_json(doc: dict) -> BlockGaussian:
    _check_schema(doc)
    blocks = []
    for entry in doc["blocks"]:
        d = len(entry["coords"]) - 1
        blocks.append(GaussianBlock(
            entry["coords"], entry["pivot"], entry["total"],
            np.asarray(entry["mean"], dtype=np.float64),
            np.asarray(entry["cov"], dtype=np.float64).reshape(d, d),
        ))
    return BlockGaussian(int(doc["dims"]), blocks)


def decomposition_to_json(sd: StructuralDecomposition) -> dict:
    return {
        "schema": SCHEMA,
        "gaussian": block_gaussian_to_json(sd.gaussian),
        "sparse": param_matrix_to_json(sd.sparse),
    }


def decomposition_from_json(doc: dict) -> StructuralDecomposition:
    _check_schema(doc)
    return StructuralDecomposition(
        block_gaussian_from_json(doc["gaussian"]),
        param_matrix_from_json(doc["sparse"]),
    )


def hypothesis_to_json(h) -> dict:
    """Serialize any learner output (imports deferred: core pulls nothing
    from here, but the hypothesis classes live there)."""
    from .core import (
        ExactPmdHypothesis,
        GaussianPlusSparseHypothesis,
        SiirvFormHypothesis,
        TabulatedHypothesis,
    )
    if isinstance(h, TabulatedHypothesis):
        return {"schema": SCHEMA, "kind": "tabulated",
                "pmf": sparse_pmf_to_json(h.pmf)}
    if isinstance(h, GaussianPlusSparseHypothesis):
        return {"schema": SCHEMA, "kind": "gaussian-plus-sparse",
                "decomposition": decomposition_to_json(h.sd)}
    if isinstance(h, SiirvFormHypothesis):
        return {"schema": SCHEMA, "kind": "siirv-form", "scale": int(h.scale),
                "mu": float(h.mu), "sigma": float(h.sigma),
                "residue": [float(r) for r in h.residue]}
    if isinstance(h, ExactPmdHypothesis):
        return {"schema": SCHEMA, "kind": "exact-pmd",
                "matrix": param_matrix_to_json(h.pm)}
    raise FormatError(f"cannot serialize hypothesis of type {type(h)!r}")


def hypothesis_from_json(doc: dict):
    from .core import (
        ExactPmdHypothesis,
        GaussianPlusSparseHypothesis,
        SiirvFormHypothesis,
        TabulatedHypothesis,
    )
    _check_schema(doc)
    kind = doc.get("kind")
    if kind == "tabulated":
        return TabulatedHypothesis(sparse_pmf_from_json(doc["pmf"]))
    if kind == "gaussian-plus-sparse":
        return GaussianPlusSparseHypothesis(
            decomposition_from_json(doc["decomposition"]))
    if kind == "siirv-form":
        return SiirvFormHypothesis(doc["scale"], doc["mu"], doc["sigma"],
                                   np.asarray(doc["residue"]))
    if kind == "exact-pmd":
        return ExactPmdHypothesis(param_matrix_from_json(doc["matrix"]))
    raise FormatError(f"unknown hypothesis kind {kind!r}")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def dump_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_distribution(path):
    """Load either a parameter matrix or a pmf table, sniffing by keys."""
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise FormatError("top-level JSON must be an object")
    if "rows" in doc:
        return param_matrix_from_json(doc)
    if "points" in doc:
        return sparse_pmf_from_json(doc)
    raise FormatError("document is neither a parameter matrix nor a pmf")


def save_samples_csv(samples, path):
    arr = np.atleast_2d(np.asarray(samples, dtype=np.int64))
    with open(path, "w", encoding="utf-8") as fh:
        for row in arr:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def load_samples_csv(path) -> np.ndarray:
    """Read one lattice point per line; a non-numeric first line is a header."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                if lineno == 0:
                    continue
                raise FormatError(f"line {lineno + 1}: non-integer entry")
    if not rows:
        raise FormatError("no samples in file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise FormatError("inconsistent column counts")
    return np.asarray(rows, dtype=np.int64)
