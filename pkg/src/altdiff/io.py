"""Problem files: a single JSON document per problem.

Schema:

    {"n": int,
     "objective": {"type": "quadratic", "P": [[...]], "q": [...]}
                | {"type": "sparsemax", "y": [...], "u": [...]}
                | {"type": "softmax_entropy", "y": [...], "u": [...]},
     "A": [[...]], "b": [...], "G": [[...]], "h": [...]}

Absent constraint blocks are empty arrays. The constraint blocks are always
written explicitly, including for the layer types whose polyhedron is implied
by their data.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .layers import SoftmaxEntropyObjective, SoftmaxLayer, SparsemaxLayer, build
from .problem import Polyhedron, ProblemSpec, QuadraticObjective


def problem_to_dict(p: ProblemSpec) -> dict:
    obj = p.objective
    if isinstance(obj, SoftmaxEntropyObjective):
        u = p.constraints.h[p.n:]
        objective = {"type": "softmax_entropy", "y": obj.y.tolist(), "u": u.tolist()}
    elif isinstance(obj, QuadraticObjective):
        objective = {"type": "quadratic", "P": obj.P.tolist(), "q": obj.q.tolist()}
    else:
        raise ValueError("only quadratic and entropy-layer objectives are serializable")
    con = p.constraints
    return {
        "n": p.n,
        "objective": objective,
        "A": con.A.tolist(),
        "b": con.b.tolist(),
        "G": con.G.tolist(),
        "h": con.h.tolist(),
    }


def problem_from_dict(doc: dict) -> ProblemSpec:
    try:
        n = int(doc["n"])
        obj_doc = doc["objective"]
        kind = obj_doc["type"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed problem document: {exc}") from exc

    constraints = Polyhedron.build(
        n,
        A=np.array(doc.get("A", []), dtype=float).reshape(-1, n),
        b=doc.get("b", []),
        G=np.array(doc.get("G", []), dtype=float).reshape(-1, n),
        h=doc.get("h", []),
    )
    if kind == "quadratic":
        objective = QuadraticObjective(
            P=np.array(obj_doc["P"], dtype=float).reshape(n, n),
            q=np.array(obj_doc["q"], dtype=float),
        )
        return ProblemSpec(n=n, objective=objective, constraints=constraints)
    if kind == "sparsemax":
        p = build(SparsemaxLayer(y=np.array(obj_doc["y"], dtype=float),
                                 u=np.array(obj_doc["u"], dtype=float)))
    elif kind == "softmax_entropy":
        p = build(SoftmaxLayer(y=np.array(obj_doc["y"], dtype=float),
                               u=np.array(obj_doc["u"], dtype=float)))
    else:
        raise ValueError(f"unknown objective type {kind!r}")
    # Explicit blocks in the file win over the implied box/simplex.
    if constraints.n_eq or constraints.n_ineq:
        return ProblemSpec(n=n, objective=p.objective, constraints=constraints)
    return p


def save_problem(p: ProblemSpec, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(p), indent=1))


def load_problem(path: Union[str, Path]) -> ProblemSpec:
    return problem_from_dict(json.loads(Path(path).read_text()))


def sparsemax_to_dict(layer: SparsemaxLayer) -> dict:
    doc = problem_to_dict(build(layer))
    doc["objective"] = {"type": "sparsemax", "y": np.asarray(layer.y, dtype=float).tolist(),
                        "u": np.asarray(layer.u, dtype=float).tolist()}
    return doc
