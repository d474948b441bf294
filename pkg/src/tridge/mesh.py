"""Tripartitioned adaptive Cartesian space-tree in one and two dimensions.

Leaves tile the domain exactly; refinement splits a cell into 3 per axis so
subcell centres persist across levels.  Traversal is a deterministic
depth-first sweep with the serpentine (boustrophedon) child order of the
Peano curve; face enumeration emits hanging faces from the fine side.
A 1-irregularity constraint (face-adjacent leaves differ by at most one
level) is enforced on every mutation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

MAX_BASE_CELLS = 10**7


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned computational domain."""

    offset: tuple[float, ...]
    width: tuple[float, ...]

    def __post_init__(self):
        if len(self.offset) != len(self.width):
            raise ConfigurationError("offset and width must have equal length")
        if not all(w > 0 for w in self.width):
            raise ConfigurationError("domain width components must be positive")
        if len(self.width) not in (1, 2):
            raise ConfigurationError("engine supports 1D and 2D domains only")

    @property
    def dim(self) -> int:
        return len(self.width)


@dataclass(frozen=True)
class CellRef:
    """Position of one cell: refinement level plus per-axis index."""

    level: int
    index: tuple[int, ...]
    base_dims: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.index)

    def cells_per_axis(self) -> tuple[int, ...]:
        return tuple(b * 3**self.level for b in self.base_dims)

    def child(self, offsets: tuple[int, ...]) -> "CellRef":
        return CellRef(
            self.level + 1,
            tuple(3 * i + o for i, o in zip(self.index, offsets)),
            self.base_dims,
        )

    def parent(self) -> "CellRef":
        return CellRef(self.level - 1, tuple(i // 3 for i in self.index), self.base_dims)

    def key(self) -> tuple:
        return (self.level, self.index)


@dataclass(frozen=True)
class FaceRecord:
    """One face of the leaf tiling.

    kind 'interior': owner is the minus-side leaf, neighbor the plus side,
    both at the same level.  kind 'hanging': owner is the fine leaf,
    neighbor the coarse one; ``fine_on_minus`` says which side of the face
    the fine cell occupies and ``sub_index`` which tangential third of the
    coarse face it covers.  kind 'boundary': neighbor is None and ``side``
    is -1/+1 for the low/high domain side.
    """

    kind: str
    axis: int
    owner: CellRef
    neighbor: Optional[CellRef] = None
    side: int = 0
    fine_on_minus: bool = True
    sub_index: int = 0


_SERPENTINE2 = [
    (0, 0), (1, 0), (2, 0),
    (2, 1), (1, 1), (0, 1),
    (0, 2), (1, 2), (2, 2),
]


class MeshTree:
    """Leaf set plus refinement bookkeeping and cached traversal order."""

    def __init__(self, box: DomainBox, base_dims, max_depth: int = 0, periodic=None):
        self.box = box
        self.base_dims = tuple(int(b) for b in base_dims)
        if len(self.base_dims) != box.dim or any(b < 1 for b in self.base_dims):
            raise ConfigurationError("base dims must give >= 1 cell per axis")
        self.max_depth = int(max_depth)
        self.periodic = tuple(periodic) if periodic is not None else (False,) * box.dim
        self._leaves: set[tuple] = set()
        self._refined: set[tuple] = set()
        self.warnings: list[str] = []
        self._order: Optional[list[CellRef]] = None
        for idx in itertools.product(*(range(b) for b in self.base_dims)):
            self._leaves.add((0, idx))

    # -- basic queries ------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.box.dim

    def __len__(self) -> int:
        return len(self._leaves)

    def is_leaf(self, cell: CellRef) -> bool:
        return cell.key() in self._leaves

    def ref(self, level: int, index) -> CellRef:
        return CellRef(level, tuple(index), self.base_dims)

    def cell_size(self, cell: CellRef) -> tuple[float, ...]:
        n = cell.cells_per_axis()
        return tuple(w / nk for w, nk in zip(self.box.width, n))

    def cell_origin(self, cell: CellRef) -> tuple[float, ...]:
        h = self.cell_size(cell)
        return tuple(o + i * hk for o, i, hk in zip(self.box.offset, cell.index, h))

    def copy(self) -> "MeshTree":
        out = MeshTree.__new__(MeshTree)
        out.box = self.box
        out.base_dims = self.base_dims
        out.max_depth = self.max_depth
        out.periodic = self.periodic
        out._leaves = set(self._leaves)
        out._refined = set(self._refined)
        out.warnings = list(self.warnings)
        out._order = None
        return out

    @classmethod
    def from_leaves(cls, box, base_dims, max_depth, periodic, leaf_keys) -> "MeshTree":
        """Rebuild a tree from its leaf keys (traversal order is derived)."""
        tree = cls(box, base_dims, max_depth, periodic)
        tree._leaves = set(leaf_keys)
        tree._refined = set()
        for level, index in leaf_keys:
            lv, idx = level, index
            while lv > 0:
                lv, idx = lv - 1, tuple(i // 3 for i in idx)
                tree._refined.add((lv, idx))
        return tree

    # -- neighbour resolution ----------------------------------------------

    def _shift(self, cell_level: int, index: tuple, axis: int, step: int):
        """Index of the same-level neighbour, or None at a physical boundary."""
        n = self.base_dims[axis] * 3**cell_level
        j = index[axis] + step
        if 0 <= j < n:
            return index[:axis] + (j,) + index[axis + 1:]
        if self.periodic[axis]:
            return index[:axis] + (j % n,) + index[axis + 1:]
        return None

    def covering_leaf(self, level: int, index: tuple) -> Optional[CellRef]:
        """The leaf at (level, index) or the coarser leaf covering it."""
        lv, idx = level, index
        while lv >= 0:
            if (lv, idx) in self._leaves:
                return CellRef(lv, idx, self.base_dims)
            lv, idx = lv - 1, tuple(i // 3 for i in idx)
        return None

    def leaves_across_face(self, cell: CellRef, axis: int, step: int) -> list[CellRef]:
        """All leaves sharing the given face of ``cell`` (empty at boundary)."""
        pos = self._shift(cell.level, cell.index, axis, step)
        if pos is None:
            return []
        if (cell.level, pos) in self._leaves:
            return [CellRef(cell.level, pos, self.base_dims)]
        cov = self.covering_leaf(cell.level, pos)
        if cov is not None:
            return [cov]
        out: list[CellRef] = []
        touch = 0 if step > 0 else 2  # child layer touching the shared face
        stack = [(cell.level, pos)]
        while stack:
            lv, idx = stack.pop()
            if (lv, idx) in self._leaves:
                out.append(CellRef(lv, idx, self.base_dims))
                continue
            for off in itertools.product(*(
                ((touch,) if ax == axis else (0, 1, 2)) for ax in range(self.dim)
            )):
                stack.append((lv + 1, tuple(3 * i + o for i, o in zip(idx, off))))
        out.sort(key=lambda c: (c.level, c.index))
        return out

    # -- mutation -----------------------------------------------------------

    def refine(self, cell: CellRef) -> "MeshTree":
        """Tripartition a leaf, cascading to keep 1-irregularity."""
        if cell.key() not in self._leaves:
            raise RuntimeError(f"refine target is not a leaf: {cell}")
        if cell.level >= self.max_depth:
            msg = f"refine beyond max depth {self.max_depth} ignored at {cell.key()}"
            self.warnings.append(msg)
            logger.debug(msg)
            return self
        # Coarser face neighbours must be refined first.
        for axis in range(self.dim):
            for step in (-1, 1):
                pos = self._shift(cell.level, cell.index, axis, step)
                if pos is None:
                    continue
                cov = self.covering_leaf(cell.level, pos)
                if cov is not None and cov.level < cell.level:
                    self.refine(cov)
        self._leaves.discard(cell.key())
        self._refined.add(cell.key())
        for off in itertools.product((0, 1, 2), repeat=self.dim):
            self._leaves.add(cell.child(off).key())
        self._order = None
        return self

    def children(self, cell: CellRef) -> list[CellRef]:
        return [
            cell.child(off) for off in itertools.product((0, 1, 2), repeat=self.dim)
        ]

    def coarsen(self, parent: CellRef, status=None) -> tuple[bool, Optional[str]]:
        """Replace the 3^d children of ``parent`` by the parent itself.

        Guarded no-op (with reason) when the children are not all plain
        leaves, when any child is limited (``status`` callable, 0 == Ok), or
        when coarsening would break 1-irregularity.
        """
        if parent.key() not in self._refined:
            return False, "not refined"
        kids = self.children(parent)
        if any(k.key() not in self._leaves for k in kids):
            return False, "children not leaves"
        if status is not None and any(status(k) != 0 for k in kids):
            return False, "limiter"
        for axis in range(self.dim):
            for step in (-1, 1):
                for nb in self.leaves_across_face_region(parent, axis, step):
                    if nb.level > parent.level + 1:
                        return False, "balance"
        for k in kids:
            self._leaves.discard(k.key())
        self._refined.discard(parent.key())
        self._leaves.add(parent.key())
        self._order = None
        return True, None

    def leaves_across_face_region(self, cell: CellRef, axis: int, step: int):
        """Leaves across a face of ``cell`` even while cell is not a leaf."""
        pos = self._shift(cell.level, cell.index, axis, step)
        if pos is None:
            return []
        if (cell.level, pos) in self._leaves:
            return [CellRef(cell.level, pos, self.base_dims)]
        cov = self.covering_leaf(cell.level, pos)
        if cov is not None:
            return [cov]
        return self.leaves_across_face(cell, axis, step)

    # -- traversal and faces --------------------------------------------------

    def traverse(self) -> list[CellRef]:
        """Leaves in deterministic depth-first serpentine (Peano child) order."""
        if self._order is not None:
            return self._order
        order: list[CellRef] = []

        def visit(key):
            if key in self._leaves:
                order.append(CellRef(key[0], key[1], self.base_dims))
                return
            level, idx = key
            if self.dim == 1:
                kids = [(3 * idx[0] + m,) for m in range(3)]
            else:
                kids = [
                    (3 * idx[0] + a, 3 * idx[1] + b) for (a, b) in _SERPENTINE2
                ]
            for k in kids:
                visit((level + 1, k))

        if self.dim == 1:
            base = [(i,) for i in range(self.base_dims[0])]
        else:
            nx, ny = self.base_dims
            base = []
            for j in range(ny):
                cols = range(nx) if j % 2 == 0 else range(nx - 1, -1, -1)
                base.extend((i, j) for i in cols)
        for idx in base:
            visit((0, idx))
        self._order = order
        return order

    def faces(self) -> list[FaceRecord]:
        """Every face exactly once; hanging faces emitted at the fine level."""
        out: list[FaceRecord] = []
        for cell in self.traverse():
            for axis in range(self.dim):
                for step in (-1, 1):
                    pos = self._shift(cell.level, cell.index, axis, step)
                    if pos is None:
                        out.append(FaceRecord("boundary", axis, cell, side=step))
                        continue
                    if (cell.level, pos) in self._leaves:
                        if step == 1:
                            nb = CellRef(cell.level, pos, self.base_dims)
                            out.append(FaceRecord("interior", axis, cell, nb))
                        continue
                    cov = self.covering_leaf(cell.level, pos)
                    if cov is not None:
                        sub = 0
                        if self.dim == 2:
                            sub = cell.index[1 - axis] % 3
                        out.append(
                            FaceRecord(
                                "hanging", axis, cell, cov,
                                fine_on_minus=(step == 1), sub_index=sub,
                            )
                        )
                    # else: finer neighbours emit this face themselves
        return out

    # -- invariant audits (used by tests and debug runs) ----------------------

    def check_tiling(self, tol: float = 1e-12) -> bool:
        total = 0.0
        for cell in self.traverse():
            total += float(np.prod(self.cell_size(cell)))
        domain = float(np.prod(self.box.width))
        return abs(total - domain) <= tol * domain

    def check_balance(self) -> bool:
        for cell in self.traverse():
            for axis in range(self.dim):
                for step in (-1, 1):
                    for nb in self.leaves_across_face(cell, axis, step):
                        if abs(nb.level - cell.level) > 1:
                            return False
        return True


def derive_base_dims(box: DomainBox, max_mesh_size: float) -> tuple[int, ...]:
    """Per axis, the smallest power-of-three count meeting the size bound."""
    if max_mesh_size <= 0:
        raise ConfigurationError("maximum-mesh-size must be positive")
    dims = []
    for w in box.width:
        n = 1
        while w / n > max_mesh_size:
            n *= 3
        dims.append(n)
    return tuple(dims)


def build_mesh(
    box: DomainBox,
    base_dims=None,
    max_mesh_size: Optional[float] = None,
    max_depth: int = 0,
    periodic=None,
) -> MeshTree:
    """Uniform level-0 tree; base dims derived from the mesh-size bound if absent."""
    if base_dims is None:
        if max_mesh_size is None:
            raise ConfigurationError("need either base dims or maximum-mesh-size")
        base_dims = derive_base_dims(box, max_mesh_size)
    base_dims = tuple(int(b) for b in base_dims)
    ncells = int(np.prod(base_dims))
    if ncells > MAX_BASE_CELLS:
        raise ConfigurationError(
            f"base grid of {ncells} cells exceeds the {MAX_BASE_CELLS} limit"
        )
    return MeshTree(box, base_dims, max_depth=max_depth, periodic=periodic)
