"""JSON model documents with a canonical, byte-stable encoding.

Keys are sorted, indentation is two spaces, floats carry 17 significant
digits (always with a decimal point or exponent so they reload as floats)
and non-finite floats are written as ``null``.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .copulas import CopulaFamily, PairCopula
from .data import RESPONSE, Dataset
from .estimation import FitReport, ModelParams
from .margins import MarginKind, MarginSet
from .vine import Edge, VineStructure, validate

FORMAT_VERSION = 1


class DocumentError(ValueError):
    """A model document is malformed."""


def _float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".e"):
        s += ".0"
    return s


def _encode(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_encode(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    return json.dumps(str(obj))


def dumps(doc: dict) -> str:
    return _encode(doc) + "\n"


def _floats(values) -> list:
    return [None if not math.isfinite(float(v)) else float(v) for v in values]


def _unfloats(values) -> np.ndarray:
    return np.array([math.nan if v is None else float(v) for v in values], dtype=float)


def build_document(report: FitReport, data: Dataset, columns: list[tuple[str, str]], levels: dict,
                   tau: float, max_trees: int, families) -> dict:
    """Assemble the document for a fitted model.

    ``columns`` are the declared ``(name, kind)`` pairs of the training file
    (before categorical expansion); edges refer to 0-based design columns.
    """
    prm = report.params
    m = prm.margins
    edges = [
        {
            "tree": e.tree,
            "conditioned": list(e.conditioned),
            "conditioning": sorted(e.conditioning),
            "family0": e.cop0.family.value,
            "theta0": e.cop0.theta,
            "family1": e.cop1.family.value,
            "theta1": e.cop1.theta,
        }
        for e in prm.structure.edges
    ]
    se = report.std_errors
    return {
        "format_version": FORMAT_VERSION,
        "columns": [{"name": n, "kind": k} for n, k in columns],
        "levels": {k: list(v) for k, v in levels.items()},
        "design": list(data.names),
        "beta": _floats(prm.beta),
        "edges": edges,
        "margins": {
            "kinds": [k.value for k in m.kinds],
            "pi_y": float(m.pi_y),
            "param0": _floats(m.param0),
            "param1": _floats(m.param1),
            "sigma": _floats(m.sigma),
        },
        "training": {
            "n": data.n,
            "means": _floats(prm.means),
            "variances": _floats(prm.variances),
            "pi_hint": float(prm.pi_hint),
        },
        "fit": {
            "tau": float(tau),
            "max_trees": int(max_trees),
            "families": [CopulaFamily.parse(f).value if isinstance(f, str) else f.value for f in families],
            "loglik": float(report.loglik),
            "converged": bool(report.converged),
            "std_errors": None if se is None else _floats(se),
            "trace": [{"step": t.step, "loglik": float(t.loglik)} for t in report.trace],
        },
    }


REQUIRED = ("format_version", "columns", "levels", "design", "beta", "edges", "margins", "training", "fit")


def loads(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DocumentError("model file must hold a JSON object")
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise DocumentError(f"model file lacks {missing}")
    if doc["format_version"] != FORMAT_VERSION:
        raise DocumentError(f"unsupported format_version {doc['format_version']!r}")
    try:
        to_params(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"model file is inconsistent: {exc}") from exc
    return doc


def to_params(doc: dict) -> ModelParams:
    m = doc["margins"]
    kinds = tuple(MarginKind(k) for k in m["kinds"])
    margins = MarginSet(kinds, _unfloats(m["param0"]), _unfloats(m["param1"]), _unfloats(m["sigma"]), float(m["pi_y"]))
    p = len(kinds)
    edges = []
    for e in doc["edges"]:
        edges.append(
            Edge(
                int(e["tree"]),
                tuple(e["conditioned"]),
                frozenset(e["conditioning"]),
                PairCopula(CopulaFamily(e["family0"]), float(e["theta0"])),
                PairCopula(CopulaFamily(e["family1"]), float(e["theta1"])),
            )
        )
    continuous = frozenset(j for j, k in enumerate(kinds) if k is MarginKind.CONTINUOUS)
    structure = VineStructure(tuple(edges), int(doc["fit"]["max_trees"]), continuous)
    check = validate(structure)
    if not check.ok:
        raise ValueError(check.violation.message)
    beta = _unfloats(doc["beta"])
    if beta.size != p + 1 or len(doc["design"]) != p:
        raise ValueError("beta, design and margins disagree on the number of columns")
    t = doc["training"]
    return ModelParams(beta, structure, margins, _unfloats(t["means"]), _unfloats(t["variances"]), float(t["pi_hint"]))


def declarations(doc: dict) -> dict[str, str]:
    return {c["name"]: c["kind"] for c in doc["columns"]}


def feature_declarations(doc: dict) -> dict[str, str]:
    return {n: k for n, k in declarations(doc).items() if k != RESPONSE}
