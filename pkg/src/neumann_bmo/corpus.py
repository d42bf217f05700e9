"""The fixed family of test functions used by the experiments.

Entries are parametric profiles in the normal variable ``x_n``; for ``n >= 2``
they are modulated by a box-periodic factor in ``x_1``.  Parameters are drawn
once from a seeded generator and stored in ``data/corpus.json`` so that every
run sees bit-identical inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridSpec, ScalarField

CORPUS_PATH = Path(__file__).with_name("data") / "corpus.json"
KINDS = ("clipped_log", "lacunary", "bump", "atom", "step")
# entries per kind in the shipped corpus
LAYOUT = {"clipped_log": 6, "lacunary": 5, "bump": 3, "atom": 3, "step": 3}


def _profile(kind: str, p: dict, x: np.ndarray, half_width: float) -> np.ndarray:
    if kind == "clipped_log":
        return 0.5 * np.log((x - p["a"]) ** 2 + p["delta"] ** 2)
    if kind == "lacunary":
        w = math.pi / half_width
        return sum(c * np.cos(2 ** k * w * x + ph)
                   for k, (c, ph) in enumerate(zip(p["coeffs"], p["phases"])))
    if kind == "bump":
        return p["c"] * np.exp(-(((x - p["a"]) / p["w"]) ** 2))
    if kind == "atom":
        z = (x - p["a"]) / p["w"]
        return p["c"] * z * np.exp(-z * z)
    if kind == "step":
        return np.tanh((x - p["a"]) / p["delta"])
    raise ValueError(f"unknown corpus kind {kind!r}")


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    kind: str
    params: dict = field(default_factory=dict)
    tangential: float = 0.0

    def values(self, spec: GridSpec) -> np.ndarray:
        mesh = spec.mesh()
        out = _profile(self.kind, self.params, mesh[-1], spec.half_width)
        if spec.dimension > 1:
            out = out * (1.0 + self.tangential * np.cos(math.pi * mesh[0] / spec.half_width))
        return np.broadcast_to(out, spec.shape).copy()

    def field(self, spec: GridSpec) -> ScalarField:
        return ScalarField(spec, self.values(spec))

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "params": self.params,
                "tangential": self.tangential}


def _draw(kind: str, rng: np.random.Generator) -> dict:
    side = rng.choice([-1.0, 1.0])
    if kind == "clipped_log":
        return {"a": float(rng.uniform(-2.0, 2.0)), "delta": float(rng.uniform(0.2, 0.35))}
    if kind == "lacunary":
        return {"coeffs": [float(c) for c in rng.uniform(-1.0, 1.0, 4)],
                "phases": [float(ph) for ph in rng.uniform(0.0, 2 * math.pi, 4)]}
    if kind in ("bump", "atom"):
        return {"a": float(side * rng.uniform(0.8, 2.5)), "w": float(rng.uniform(0.3, 0.8)),
                "c": float(rng.uniform(0.5, 2.0))}
    if kind == "step":
        return {"a": float(rng.uniform(-1.5, 1.5)), "delta": float(rng.uniform(0.2, 0.5))}
    raise ValueError(f"unknown corpus kind {kind!r}")


def generate_corpus(seed: int = 20240611) -> list[CorpusEntry]:
    rng = np.random.default_rng(seed)
    entries = []
    for kind, count in LAYOUT.items():
        for j in range(count):
            params = _draw(kind, rng)
            entries.append(CorpusEntry(f"{kind}-{j:02d}", kind, params,
                                       float(rng.uniform(0.0, 0.5))))
    return entries


def save_corpus(entries, path=CORPUS_PATH, seed: int | None = None) -> None:
    payload = {"seed": seed, "entries": [e.to_dict() for e in entries]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_corpus(path=CORPUS_PATH, kinds=None) -> list[CorpusEntry]:
    payload = json.loads(Path(path).read_text())
    entries = [CorpusEntry(e["id"], e["kind"], e["params"], e.get("tangential", 0.0))
               for e in payload["entries"]]
    if kinds is not None:
        entries = [e for e in entries if e.kind in kinds]
    return entries
