"""Cell-based architecture space, shared-weight supergraph and child networks.

A cell is FC -> BatchNorm -> ReLU -> Dropout, plus a skip branch taken from
the cell input, the FC output or the BN output and added to the dropout
output.  Cell 0 reads the stem; cell ``i > 0`` reads the output of cell
``i - 1`` or of cell ``i - 2`` (the stem for cell 1).  One cell output feeds
the similarity term and one feeds the classifier.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .nn import BatchNorm, Dropout, Linear, Mode, Param, relu
from .numerics import DimensionError, Rng, as_matrix


class FCSize(Enum):
    SAME = "same"
    HALF = "half"


class SkipFrom(Enum):
    CELL_INPUT = "cell_input"
    AFTER_FC = "after_fc"
    AFTER_BN = "after_bn"


class InputFrom(Enum):
    PREV_CELL = "prev_cell"
    PREV_PREV_CELL = "prev_prev_cell"


# index order inside each decision is the enum declaration order
_FC = list(FCSize)
_SKIP = list(SkipFrom)
_INPUT = list(InputFrom)


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class CellChoice:
    fc_size: FCSize
    skip_from: SkipFrom


@dataclass(frozen=True)
class ArchitectureChoice:
    n_cells: int
    cells: Tuple[CellChoice, ...]
    input_from: Tuple[InputFrom, ...]
    pc_tap: int
    classifier_tap: int

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "input_from", tuple(self.input_from))
        n = self.n_cells
        if n < 1:
            raise ArchitectureError("an architecture needs at least one cell")
        if len(self.cells) != n:
            raise ArchitectureError(f"{len(self.cells)} cell choices for {n} cells")
        if len(self.input_from) != n - 1:
            raise ArchitectureError(f"{len(self.input_from)} wiring choices for {n} cells (need {n - 1})")
        for name in ("pc_tap", "classifier_tap"):
            tap = getattr(self, name)
            if not 0 <= tap < n:
                raise ArchitectureError(f"{name}={tap} out of range for {n} cells")

    def source_of(self, i: int) -> int:
        """Index into ``[stem, cell 0, cell 1, ...]`` that cell ``i`` reads."""
        if i == 0:
            return 0
        return i if self.input_from[i - 1] is InputFrom.PREV_CELL else i - 1

    def describe(self) -> List[str]:
        lines = []
        for i, c in enumerate(self.cells):
            src = "stem" if self.source_of(i) == 0 else f"cell {self.source_of(i) - 1}"
            lines.append(f"Cell {i}: FC {c.fc_size.value}, skip from {c.skip_from.value}, input from {src}")
        lines.append(f"PC tap: cell {self.pc_tap}")
        lines.append(f"Classifier tap: cell {self.classifier_tap}")
        return lines


def count_configurations(n_cells: int) -> int:
    if n_cells < 1:
        raise ValueError("need at least one cell")
    return 6**n_cells * 2 ** (n_cells - 1) * n_cells**2


def decision_arities(n_cells: int) -> List[int]:
    return [2, 3] * n_cells + [2] * (n_cells - 1) + [n_cells, n_cells]


def decision_types(n_cells: int) -> List[str]:
    return ["fc_size", "skip_from"] * n_cells + ["input_from"] * (n_cells - 1) + ["pc_tap", "classifier_tap"]


def encode_decisions(arch: ArchitectureChoice) -> List[int]:
    seq = []
    for c in arch.cells:
        seq += [_FC.index(c.fc_size), _SKIP.index(c.skip_from)]
    seq += [_INPUT.index(w) for w in arch.input_from]
    seq += [arch.pc_tap, arch.classifier_tap]
    return seq


def decode_decisions(seq: Sequence[int], n_cells: int) -> ArchitectureChoice:
    arities = decision_arities(n_cells)
    seq = [int(s) for s in seq]
    if len(seq) != len(arities):
        raise ArchitectureError(f"expected {len(arities)} decisions for {n_cells} cells, got {len(seq)}")
    for pos, (s, a) in enumerate(zip(seq, arities)):
        if not 0 <= s < a:
            raise ArchitectureError(f"decision {pos} = {s} outside [0, {a})")
    cells = tuple(CellChoice(_FC[seq[2 * i]], _SKIP[seq[2 * i + 1]]) for i in range(n_cells))
    k = 2 * n_cells
    wiring = tuple(_INPUT[s] for s in seq[k:k + n_cells - 1])
    return ArchitectureChoice(n_cells, cells, wiring, seq[-2], seq[-1])


def enumerate_architectures(n_cells: int):
    for seq in itertools.product(*[range(a) for a in decision_arities(n_cells)]):
        yield decode_decisions(seq, n_cells)


def serialize_arch(arch: ArchitectureChoice) -> str:
    obj = {
        "n_cells": arch.n_cells,
        "cells": [{"fc_size": c.fc_size.value, "skip_from": c.skip_from.value} for c in arch.cells],
        "input_from": [w.value for w in arch.input_from],
        "pc_tap": arch.pc_tap,
        "classifier_tap": arch.classifier_tap,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def parse_arch(text: str) -> ArchitectureChoice:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchitectureError(f"malformed architecture JSON at line {e.lineno} column {e.colno} (char {e.pos}): {e.msg}") from e
    try:
        cells = tuple(CellChoice(FCSize(c["fc_size"]), SkipFrom(c["skip_from"])) for c in obj["cells"])
        wiring = tuple(InputFrom(w) for w in obj["input_from"])
        for key in ("n_cells", "pc_tap", "classifier_tap"):
            if type(obj[key]) is not int:
                raise ArchitectureError(f"{key} must be an integer")
        return ArchitectureChoice(obj["n_cells"], cells, wiring, obj["pc_tap"], obj["classifier_tap"])
    except (KeyError, TypeError) as e:
        raise ArchitectureError(f"architecture JSON missing or mistyped field: {e}") from e
    except ValueError as e:
        if isinstance(e, ArchitectureError):
            raise
        raise ArchitectureError(str(e)) from e


def cell_dims(arch: ArchitectureChoice, stem_dim: int) -> List[Tuple[int, int]]:
    """(in_dim, out_dim) per cell."""
    outs = [stem_dim]
    dims = []
    for i, c in enumerate(arch.cells):
        d_in = outs[arch.source_of(i)]
        if c.fc_size is FCSize.HALF:
            if d_in % 2:
                raise DimensionError(f"cell {i} cannot halve odd input dimension {d_in}")
            d_out = d_in // 2
        else:
            d_out = d_in
        dims.append((d_in, d_out))
        outs.append(d_out)
    return dims


class SuperGraph:
    """Shared weight store, keyed by ``(cell, role, in_dim, out_dim)``.

    Layers are created on first request and returned as the same objects
    afterwards.  The classifier key uses cell ``-1`` so every architecture
    whose tapped cell has the same width shares one head.  ``stem`` is an
    optional fixed (untrained) projection applied to raw features.
    """

    def __init__(self, stem_dim: int, n_classes: int, dropout_rate: float = 0.5,
                 seed: int = 0, stem: Optional[np.ndarray] = None):
        self.stem = None if stem is None else np.asarray(stem, dtype=np.float64)
        self.input_dim = stem_dim if stem is None else self.stem.shape[0]
        self.stem_dim = stem_dim if stem is None else self.stem.shape[1]
        self.n_classes = n_classes
        self.dropout = Dropout(dropout_rate)
        self.rng = Rng(seed)
        self.store: Dict[tuple, object] = {}

    def get(self, key: tuple):
        layer = self.store.get(key)
        if layer is None:
            _, role, d_in, d_out = key
            if role == "bn":
                layer = BatchNorm(d_out)
            else:
                layer = Linear(d_in, d_out, self.rng)
            self.store[key] = layer
        return layer

    def params(self) -> List[Param]:
        out = []
        for key in sorted(self.store, key=repr):
            out += self.store[key].params()
        return out

    def apply_stem(self, X) -> np.ndarray:
        X = as_matrix(X)
        if X.shape[1] != self.input_dim:
            raise DimensionError(f"expected {self.input_dim} input features, got {X.shape[1]}")
        return X if self.stem is None else X @ self.stem

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {}
        for key, layer in self.store.items():
            name = "|".join(str(k) for k in key)
            if isinstance(layer, BatchNorm):
                out[name + "|gamma"] = layer.gamma.value
                out[name + "|beta"] = layer.beta.value
                out[name + "|running_mean"] = layer.running_mean
                out[name + "|running_var"] = layer.running_var
            else:
                out[name + "|W"] = layer.W.value
                out[name + "|b"] = layer.b.value
        return out

    def save(self, path) -> None:
        meta = json.dumps({"stem_dim": self.stem_dim, "n_classes": self.n_classes,
                           "dropout_rate": self.dropout.rate})
        arrays = dict(self.state_dict())
        if self.stem is not None:
            arrays["__stem__"] = self.stem
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(meta), **arrays)

    @classmethod
    def load(cls, path) -> "SuperGraph":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            stem = z["__stem__"] if "__stem__" in z.files else None
            sg = cls(meta["stem_dim"], meta["n_classes"], meta["dropout_rate"], stem=stem)
            for name in z.files:
                if name.startswith("__"):
                    continue
                cell, role, d_in, d_out, field_ = name.split("|")
                layer = sg.get((int(cell), role, int(d_in), int(d_out)))
                arr = np.array(z[name], dtype=np.float64)
                if field_ in ("running_mean", "running_var"):
                    setattr(layer, field_, arr)
                else:
                    getattr(layer, field_).value = arr
        return sg


def classifier_key(dim: int, n_classes: int) -> tuple:
    return (-1, "classifier", dim, n_classes)


class ChildNetwork:
    """One architecture's view of a supergraph; layers are shared, never copied."""

    def __init__(self, sg: SuperGraph, arch: ArchitectureChoice):
        self.sg = sg
        self.arch = arch
        self.dims = cell_dims(arch, sg.stem_dim)
        self.cells = []
        for i, (c, (d_in, d_out)) in enumerate(zip(arch.cells, self.dims)):
            fc = sg.get((i, "fc", d_in, d_out))
            bn = sg.get((i, "bn", d_out, d_out))
            skip_dim = d_in if c.skip_from is SkipFrom.CELL_INPUT else d_out
            proj = sg.get((i, "skip_proj", skip_dim, d_out)) if skip_dim != d_out else None
            self.cells.append((fc, bn, proj))
        self.classifier = sg.get(classifier_key(self.dims[arch.classifier_tap][1], sg.n_classes))

    def site_keys(self) -> List[tuple]:
        keys = []
        for i, (c, (d_in, d_out)) in enumerate(zip(self.arch.cells, self.dims)):
            keys += [(i, "fc", d_in, d_out), (i, "bn", d_out, d_out)]
            skip_dim = d_in if c.skip_from is SkipFrom.CELL_INPUT else d_out
            if skip_dim != d_out:
                keys.append((i, "skip_proj", skip_dim, d_out))
        return keys

    def params(self) -> List[Param]:
        out = []
        for fc, bn, proj in self.cells:
            out += fc.params() + bn.params() + (proj.params() if proj is not None else [])
        return out + self.classifier.params()

    def forward(self, X, mode: Mode = Mode.EVAL, rng: Optional[Rng] = None, track_stats: bool = True):
        """Run the child.

        Returns ``(cell_outputs, pc_features, logits, backward)`` where
        ``backward(d_pc_features, d_logits)`` accumulates parameter gradients
        and returns the gradient with respect to the stem output.
        ``track_stats=False`` leaves batch-norm running statistics untouched.
        """
        if rng is None:
            rng = Rng(0)
        H0 = self.sg.apply_stem(X)
        outs = [H0]
        tapes = []
        for i, (c, (fc, bn, proj)) in enumerate(zip(self.arch.cells, self.cells)):
            src = self.arch.source_of(i)
            x = outs[src]
            h_fc, b_fc = fc.forward(x)
            h_bn, b_bn = bn.forward(h_fc, mode, track_stats)
            h_relu, b_relu = relu(h_bn)
            h_drop, b_drop = self.sg.dropout.forward(h_relu, mode, rng)
            skip = {SkipFrom.CELL_INPUT: x, SkipFrom.AFTER_FC: h_fc, SkipFrom.AFTER_BN: h_bn}[c.skip_from]
            b_proj = None
            if proj is not None:
                skip, b_proj = proj.forward(skip)
            outs.append(h_drop + skip)
            tapes.append((src, c.skip_from, b_fc, b_bn, b_relu, b_drop, b_proj))
        pc_features = outs[1 + self.arch.pc_tap]
        logits, b_cls = self.classifier.forward(outs[1 + self.arch.classifier_tap])

        def backward(d_pc=None, d_logits=None):
            grads = [np.zeros_like(o) for o in outs]
            if d_pc is not None:
                grads[1 + self.arch.pc_tap] += d_pc
            if d_logits is not None:
                grads[1 + self.arch.classifier_tap] += b_cls(d_logits)
            for i in range(len(tapes) - 1, -1, -1):
                src, skip_from, b_fc, b_bn, b_relu, b_drop, b_proj = tapes[i]
                g = grads[i + 1]
                d_skip = b_proj(g) if b_proj is not None else g
                d_bn = b_relu(b_drop(g))
                if skip_from is SkipFrom.AFTER_BN:
                    d_bn = d_bn + d_skip
                d_fc = b_bn(d_bn)
                if skip_from is SkipFrom.AFTER_FC:
                    d_fc = d_fc + d_skip
                d_x = b_fc(d_fc)
                if skip_from is SkipFrom.CELL_INPUT:
                    d_x = d_x + d_skip
                grads[src] += d_x
            return grads[0]

        return outs[1:], pc_features, logits, backward


def instantiate_child(sg: SuperGraph, arch: ArchitectureChoice) -> ChildNetwork:
    return ChildNetwork(sg, arch)


def child_fwd_bwd(child: ChildNetwork, X, mode: Mode = Mode.EVAL, rng: Optional[Rng] = None,
                  track_stats: bool = True):
    return child.forward(X, mode, rng, track_stats)
