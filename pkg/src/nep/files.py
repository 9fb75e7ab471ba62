"""JSON game/graph files and the ``kind:args`` generator shorthands.

Game file::

    {
      "N": 2,
      "dims": [1, 1],
      "blocks": [{"i": 0, "j": 0, "matrix": [[1.0]]},
                 {"i": 0, "j": 1, "matrix": [[0.5]]}, ...],
      "linear": [[0.0], [0.0]],
      "box": {"lower": [0.1, 0.1], "upper": [0.5, 0.5]}
    }

``blocks`` lists the cost blocks ``A_ij`` of ``J_i = x_i' A_ii x_i + b_i' x_i
+ sum_{j != i} x_i' A_ij x_j`` (indices 0-based, missing blocks are zero).
``linear`` holds one ``b_i`` per agent and may be omitted.  ``box`` may be
``null``; otherwise ``lower``/``upper`` are length-``n`` arrays (``null``
entries mean unbounded) or scalars applied to every coordinate.

Graph file::

    {"N": 3, "edges": [[0, 1], [1, 2]], "weights": [[...], ...]}

``weights`` is optional: an ``N x N`` mixing matrix used instead of
Metropolis weights (doubly stochastic mode) or as the raw weights of the
degree variant.
"""

from __future__ import annotations

import json
import math
from os import PathLike
from pathlib import Path

import numpy as np

from .game import BoxSet, GameError, QuadraticGame
from .network import (
    Graph,
    MixingMatrix,
    NetworkError,
    Topology,
    check_mixing_matrix,
    complete_graph,
    erdos_renyi,
    metropolis_weights,
    path_graph,
    ring_graph,
    star_graph,
)


def _bounds(value, n: int, default: float) -> np.ndarray:
    if value is None:
        return np.full(n, default)
    if isinstance(value, (int, float)):
        return np.full(n, float(value))
    if len(value) != n:
        raise GameError(f"box bounds need {n} entries, got {len(value)}")
    return np.array([default if v is None else float(v) for v in value])


def game_from_dict(data: dict) -> QuadraticGame:
    try:
        dims = [int(d) for d in data["dims"]]
        blocks_in = data["blocks"]
    except (KeyError, TypeError) as exc:
        raise GameError(f"game file is missing field {exc}") from None
    if "N" in data and int(data["N"]) != len(dims):
        raise GameError(f"N={data['N']} does not match {len(dims)} dims")
    blocks = {}
    for b in blocks_in:
        key = (int(b["i"]), int(b["j"]))
        if key in blocks:
            raise GameError(f"duplicate block {key}")
        blocks[key] = np.array(b["matrix"], dtype=float)
    sets = None
    box = data.get("box")
    if box is not None:
        n = sum(dims)
        lower = _bounds(box.get("lower"), n, -math.inf)
        upper = _bounds(box.get("upper"), n, math.inf)
        offsets = np.concatenate([[0], np.cumsum(dims)])
        sets = [BoxSet(lower[offsets[i]:offsets[i + 1]], upper[offsets[i]:offsets[i + 1]]) for i in range(len(dims))]
    return QuadraticGame.from_blocks(dims, blocks, data.get("linear"), sets)


def _finite_or_none(a):
    return [float(v) if math.isfinite(v) else None for v in a]


def game_to_dict(game: QuadraticGame) -> dict:
    blocks = []
    for i in range(game.N):
        for j in range(game.N):
            A = game.block(i, j)
            if i == j or np.any(A):
                blocks.append({"i": i, "j": j, "matrix": A.tolist()})
    out = {
        "N": game.N,
        "dims": list(game.dims),
        "blocks": blocks,
        "linear": [game.g[sl].tolist() for sl in game.slices],
        "box": None,
    }
    if game.is_constrained:
        out["box"] = {"lower": _finite_or_none(game.box.lower), "upper": _finite_or_none(game.box.upper)}
    return out


def graph_from_dict(data: dict) -> tuple[Graph, np.ndarray | None]:
    try:
        g = Graph(int(data["N"]), data["edges"])
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"graph file is missing field {exc}") from None
    weights = data.get("weights")
    if weights is not None:
        weights = np.array(weights, dtype=float)
        if weights.shape != (g.N, g.N):
            raise NetworkError(f"weights must be {g.N}x{g.N}")
    return g, weights


def _read_json(path: str | PathLike) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_json(path: str | PathLike, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def load_game(source: str, base: str | PathLike | None = None) -> QuadraticGame:
    """Game from ``connectivity:<N>:<seed>[:box]`` or a JSON file path."""
    parts = source.split(":")
    if parts[0] == "connectivity":
        from .harness import CONNECTIVITY_BOX, generate_connectivity_game

        if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "box"):
            raise ValueError(f"bad game generator {source!r}; use connectivity:<N>:<seed>[:box]")
        box = CONNECTIVITY_BOX if len(parts) == 4 else None
        return generate_connectivity_game(int(parts[1]), int(parts[2]), box=box)
    path = Path(source) if base is None else Path(base) / source
    return game_from_dict(_read_json(path))


def load_graph(source: str, base: str | PathLike | None = None) -> tuple[Graph, np.ndarray | None]:
    """Graph from ``er:<N>:<p>:<seed>``, ``complete|path|ring|star:<N>`` or a JSON file."""
    parts = source.split(":")
    kind = parts[0]
    simple = {"complete": complete_graph, "path": path_graph, "ring": ring_graph, "star": star_graph}
    if kind == "er":
        if len(parts) != 4:
            raise ValueError(f"bad graph generator {source!r}; use er:<N>:<p>:<seed>")
        return erdos_renyi(int(parts[1]), float(parts[2]), int(parts[3])), None
    if kind in simple:
        if len(parts) != 2:
            raise ValueError(f"bad graph generator {source!r}; use {kind}:<N>")
        return simple[kind](int(parts[1])), None
    path = Path(source) if base is None else Path(base) / source
    return graph_from_dict(_read_json(path))


def make_topology(graph: Graph, weights: np.ndarray | None = None, mode: str = "doubly_stochastic") -> Topology:
    """Doubly stochastic: given weights or Metropolis.  Degree variant: given weights or ``A + I``."""
    if mode == "doubly_stochastic":
        if weights is None:
            return Topology.doubly_stochastic(metropolis_weights(graph))
        check_mixing_matrix(weights, graph)
        return Topology.doubly_stochastic(MixingMatrix(weights))
    if mode == "degree_variant":
        if weights is None:
            weights = graph.adjacency() + np.eye(graph.N)
        return Topology.degree_variant(graph, weights)
    raise ValueError(f"unknown mode {mode!r}")
