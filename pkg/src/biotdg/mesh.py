"""Structured rectangular meshes on ``[0, lx] x [0, ly]``.

Cells are numbered row by row, ``cell = i + nx * j`` for column ``i`` and
row ``j``. Faces are numbered with all horizontal faces first, row line by
row line (``i + nx * j`` for ``j = 0..ny``), followed by all vertical faces,
column line by column line (``nx * (ny + 1) + j + ny * i`` for ``i = 0..nx``).

Every face carries a fixed unit normal. Interior faces point from
``cell_minus`` (below / left) to ``cell_plus`` (above / right); boundary
faces point outward and have no ``cell_plus``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERIOR, LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3, 4
TAG_NAMES = {INTERIOR: "interior", LEFT: "left", RIGHT: "right", BOTTOM: "bottom", TOP: "top"}
BOUNDARY_TAGS = ("left", "right", "bottom", "top")

# local face slots of a cell
FACE_BOTTOM, FACE_TOP, FACE_LEFT, FACE_RIGHT = 0, 1, 2, 3


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    nx: int
    ny: int
    lx: float
    ly: float
    face_cells: np.ndarray = field(repr=False)  # (nf, 2), -1 marks no plus cell
    face_normal: np.ndarray = field(repr=False)  # (nf, 2)
    face_length: np.ndarray = field(repr=False)
    face_tag: np.ndarray = field(repr=False)
    face_center: np.ndarray = field(repr=False)
    face_horizontal: np.ndarray = field(repr=False)
    cell_faces: np.ndarray = field(repr=False)  # (nc, 4) bottom, top, left, right
    cell_face_sign: np.ndarray = field(repr=False)  # +1 if the face normal is outward for the cell

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_faces(self) -> int:
        return self.face_cells.shape[0]

    @property
    def cell_area(self) -> np.ndarray:
        return np.full(self.n_cells, self.hx * self.hy)

    @property
    def cell_origin(self) -> np.ndarray:
        """Lower-left corner of every cell, shape (nc, 2)."""
        c = np.arange(self.n_cells)
        return np.column_stack([(c % self.nx) * self.hx, (c // self.nx) * self.hy])

    @property
    def cell_center(self) -> np.ndarray:
        return self.cell_origin + 0.5 * np.array([self.hx, self.hy])

    @property
    def cells(self) -> list[tuple[float, float, float, float]]:
        """Cells as ``(x0, y0, x1, y1)`` rectangles."""
        o = self.cell_origin
        return [(x, y, x + self.hx, y + self.hy) for x, y in o]

    def boundary_faces(self, tag: str | int | None = None) -> np.ndarray:
        if tag is None:
            return np.flatnonzero(self.face_tag != INTERIOR)
        if isinstance(tag, str):
            tag = {v: k for k, v in TAG_NAMES.items()}[tag]
        return np.flatnonzero(self.face_tag == tag)

    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_tag == INTERIOR)

    def face_h(self) -> np.ndarray:
        """Cell extent normal to each face, |K| / |F|."""
        return np.where(self.face_horizontal, self.hy, self.hx)

    def node_coordinates(self) -> np.ndarray:
        """Grid nodes ordered x-fastest, shape ((nx+1)(ny+1), 2)."""
        xs = np.linspace(0.0, self.lx, self.nx + 1)
        ys = np.linspace(0.0, self.ly, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])


def build_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Mesh:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (lx > 0 and ly > 0):
        raise MeshError(f"domain lengths must be positive, got lx={lx}, ly={ly}")
    nx, ny = int(nx), int(ny)
    lx, ly = float(lx), float(ly)
    hx, hy = lx / nx, ly / ny
    nh = nx * (ny + 1)
    nv = (nx + 1) * ny
    nf = nh + nv

    face_cells = np.full((nf, 2), -1, dtype=np.int64)
    face_normal = np.zeros((nf, 2))
    face_length = np.zeros(nf)
    face_tag = np.zeros(nf, dtype=np.int64)
    face_center = np.zeros((nf, 2))
    face_horizontal = np.zeros(nf, dtype=bool)

    # horizontal faces
    i, j = np.meshgrid(np.arange(nx), np.arange(ny + 1))
    i, j = i.ravel(), j.ravel()
    f = i + nx * j
    below = i + nx * (j - 1)
    above = i + nx * j
    face_horizontal[f] = True
    face_length[f] = hx
    face_center[f] = np.column_stack([(i + 0.5) * hx, j * hy])
    face_normal[f] = (0.0, 1.0)
    face_cells[f, 0] = below
    face_cells[f, 1] = above
    bot = j == 0
    face_cells[f[bot], 0] = above[bot]
    face_cells[f[bot], 1] = -1
    face_normal[f[bot]] = (0.0, -1.0)
    face_tag[f[bot]] = BOTTOM
    top = j == ny
    face_cells[f[top], 1] = -1
    face_tag[f[top]] = TOP

    # vertical faces
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    f = nh + j + ny * i
    left_cell = (i - 1) + nx * j
    right_cell = i + nx * j
    face_length[f] = hy
    face_center[f] = np.column_stack([i * hx, (j + 0.5) * hy])
    face_normal[f] = (1.0, 0.0)
    face_cells[f, 0] = left_cell
    face_cells[f, 1] = right_cell
    lb = i == 0
    face_cells[f[lb], 0] = right_cell[lb]
    face_cells[f[lb], 1] = -1
    face_normal[f[lb]] = (-1.0, 0.0)
    face_tag[f[lb]] = LEFT
    rb = i == nx
    face_cells[f[rb], 1] = -1
    face_tag[f[rb]] = RIGHT

    c = np.arange(nx * ny)
    ci, cj = c % nx, c // nx
    cell_faces = np.column_stack([
        ci + nx * cj,
        ci + nx * (cj + 1),
        nh + cj + ny * ci,
        nh + cj + ny * (ci + 1),
    ]).astype(np.int64)
    cell_face_sign = np.where(face_cells[cell_faces, 0] == c[:, None], 1.0, -1.0)

    for a in (face_cells, face_normal, face_length, face_tag, face_center, face_horizontal, cell_faces, cell_face_sign):
        a.setflags(write=False)
    return Mesh(nx, ny, lx, ly, face_cells, face_normal, face_length, face_tag, face_center,
                face_horizontal, cell_faces, cell_face_sign)


def face_adjacency(mesh: Mesh, face_index: int) -> tuple[int, int | None, tuple[float, float]]:
    """Return ``(cell_minus, cell_plus or None, unit normal)`` for one face."""
    if not 0 <= face_index < mesh.n_faces:
        raise IndexError(f"face index {face_index} out of range [0, {mesh.n_faces})")
    minus, plus = mesh.face_cells[face_index]
    n = mesh.face_normal[face_index]
    return int(minus), (None if plus < 0 else int(plus)), (float(n[0]), float(n[1]))
