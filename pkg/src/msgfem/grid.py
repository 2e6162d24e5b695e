"""Structured Q1 mesh, boundary tags, coefficient fields and problem data."""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
SIDES = ("left", "right", "bottom", "top")


class CoefficientFileError(ValueError):
    """Base class for coefficient file problems."""


class CoefficientFormatError(CoefficientFileError):
    pass


class CoefficientShapeError(CoefficientFileError):
    pass


class CoefficientValueError(CoefficientFileError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Uniform ``nx`` x ``ny`` grid of bilinear rectangles.

    Node ``(i, j)`` has index ``i + j * (nx + 1)``, element ``(i, j)`` has index
    ``i + j * nx``; element nodes are listed counterclockwise starting at the
    lower-left corner.
    """

    nx: int
    ny: int
    rect: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        for name in ("nx", "ny"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        x0, x1, y0, y1 = self.rect
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate rectangle {self.rect}")

    @property
    def hx(self):
        return (self.rect[1] - self.rect[0]) / self.nx

    @property
    def hy(self):
        return (self.rect[3] - self.rect[2]) / self.ny

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self):
        return self.nx * self.ny

    def node_index(self, i, j):
        return np.asarray(i) + np.asarray(j) * (self.nx + 1)

    def element_index(self, i, j):
        return np.asarray(i) + np.asarray(j) * self.nx

    def node_coords(self):
        x0, x1, y0, y1 = self.rect
        xs = np.linspace(x0, x1, self.nx + 1)
        ys = np.linspace(y0, y1, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def element_nodes(self, elements=None):
        if elements is None:
            elements = np.arange(self.n_elements)
        elements = np.asarray(elements)
        i = elements % self.nx
        j = elements // self.nx
        n0 = i + j * (self.nx + 1)
        return np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])

    def element_centers(self):
        x0, _, y0, _ = self.rect
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        X, Y = np.meshgrid(x0 + (i + 0.5) * self.hx, y0 + (j + 0.5) * self.hy)
        return np.column_stack([X.ravel(), Y.ravel()])

    def block_elements(self, i0, i1, j0, j1):
        """Element indices of the index box ``[i0, i1) x [j0, j1)``."""
        I, J = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1))
        return (I + J * self.nx).ravel()

    def block_nodes(self, i0, i1, j0, j1):
        """Node indices of the closed index box ``[i0, i1] x [j0, j1]``."""
        I, J = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
        return (I + J * (self.nx + 1)).ravel()


def build_mesh(nx, ny, rect=(0.0, 1.0, 0.0, 1.0)):
    return Mesh(nx, ny, tuple(float(v) for v in rect))


@dataclass(frozen=True)
class BoundaryTags:
    """Per-node tag (``INTERIOR``/``DIRICHLET``/``NEUMANN``) and boundary edges.

    ``edges`` has one row per boundary edge: ``(node_a, node_b, element, tag)``.
    """

    node_tag: np.ndarray
    edges: np.ndarray
    sides: dict

    @property
    def dirichlet_nodes(self):
        return np.flatnonzero(self.node_tag == DIRICHLET)

    @property
    def neumann_edges(self):
        return self.edges[self.edges[:, 3] == NEUMANN]


BENCHMARK_SIDES = {"left": "D", "right": "D", "bottom": "N", "top": "N"}


def classify_boundary(mesh, sides=None):
    """Tag boundary nodes and edges from a side -> ``"D"``/``"N"`` mapping.

    A node on both a Dirichlet and a Neumann side is tagged Dirichlet.
    """
    sides = dict(BENCHMARK_SIDES if sides is None else sides)
    for s in SIDES:
        if sides.get(s) not in ("D", "N"):
            raise ValueError(f"side {s!r} must be 'D' or 'N', got {sides.get(s)!r}")
    nx, ny = mesh.nx, mesh.ny
    tag = np.zeros(mesh.n_nodes, dtype=np.int8)
    side_nodes = {
        "left": mesh.node_index(0, np.arange(ny + 1)),
        "right": mesh.node_index(nx, np.arange(ny + 1)),
        "bottom": mesh.node_index(np.arange(nx + 1), 0),
        "top": mesh.node_index(np.arange(nx + 1), ny),
    }
    for s in SIDES:
        if sides[s] == "N":
            nodes = side_nodes[s]
            tag[nodes[tag[nodes] == INTERIOR]] = NEUMANN
    for s in SIDES:
        if sides[s] == "D":
            tag[side_nodes[s]] = DIRICHLET

    rows = []
    i = np.arange(nx)
    j = np.arange(ny)
    val = {"D": DIRICHLET, "N": NEUMANN}
    for s, a, b, e in (
        ("bottom", mesh.node_index(i, 0), mesh.node_index(i + 1, 0), mesh.element_index(i, 0)),
        ("top", mesh.node_index(i, ny), mesh.node_index(i + 1, ny), mesh.element_index(i, ny - 1)),
        ("left", mesh.node_index(0, j), mesh.node_index(0, j + 1), mesh.element_index(0, j)),
        ("right", mesh.node_index(nx, j), mesh.node_index(nx, j + 1), mesh.element_index(nx - 1, j)),
    ):
        rows.append(np.column_stack([a, b, e, np.full_like(a, val[sides[s]])]))
    return BoundaryTags(tag, np.vstack(rows).astype(np.int64), sides)


@dataclass(frozen=True)
class CoefficientField:
    """Elementwise scalar coefficient, ``A = a_e I`` on element ``e``."""

    values: np.ndarray
    nx: int
    ny: int
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.nx * self.ny:
            raise CoefficientShapeError(f"expected {self.nx * self.ny} values, got {v.size}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise CoefficientValueError("coefficient values must be finite and positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "alpha", float(v.min()))
        object.__setattr__(self, "beta", float(v.max()))

    @property
    def contrast(self):
        return self.beta / self.alpha

    def scaled(self, c):
        return CoefficientField(self.values * c, self.nx, self.ny)


def load_coefficient(path, mesh=None):
    """Read the text format: ``"nx ny"`` then ``nx*ny`` values, x fastest."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.strip().splitlines()
    if not lines:
        raise CoefficientFormatError(f"{path}: empty file")
    head = lines[0].split()
    try:
        if len(head) != 2:
            raise ValueError
        nx, ny = int(head[0]), int(head[1])
    except ValueError:
        raise CoefficientFormatError(f"{path}: header must be 'nx ny', got {lines[0]!r}") from None
    try:
        vals = np.array([float(t) for t in " ".join(lines[1:]).split()])
    except ValueError as exc:
        raise CoefficientFormatError(f"{path}: {exc}") from None
    if vals.size != nx * ny:
        raise CoefficientShapeError(f"{path}: header says {nx}x{ny} but found {vals.size} values")
    if mesh is not None and (nx, ny) != (mesh.nx, mesh.ny):
        raise CoefficientShapeError(f"{path}: field is {nx}x{ny}, mesh is {mesh.nx}x{mesh.ny}")
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise CoefficientValueError(f"{path}: non-positive or non-finite value")
    return CoefficientField(vals, nx, ny)


def save_coefficient(path, coeff):
    v = coeff.values.reshape(coeff.ny, coeff.nx)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{coeff.nx} {coeff.ny}\n")
        for row in v:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def builtin_coefficient(name, mesh, **params):
    """Generate a named coefficient field.

    ``constant``: ``value`` (1).
    ``channels``: stripes of width ``period // 2`` elements alternating
    1 and ``contrast``; ``orientation`` is ``"horizontal"`` or ``"vertical"``.
    ``inclusions``: ``count`` discs of radius ``radius`` (physical units) at
    uniformly random centres drawn from ``seed``, value ``contrast`` inside.
    ``channels_inclusions``: horizontal channels of physical width
    ``channel_width`` every ``channel_spacing`` plus inclusions; resolution
    independent, used as the default heterogeneous field.
    """
    nx, ny = mesh.nx, mesh.ny
    if name == "constant":
        vals = np.full(nx * ny, float(params.get("value", 1.0)))
    elif name == "channels":
        contrast = float(params.get("contrast", 1e3))
        period = int(params.get("period", 8))
        if period < 2:
            raise ValueError("channel period must be >= 2 elements")
        half = period // 2
        I, J = np.meshgrid(np.arange(nx), np.arange(ny))
        idx = J if params.get("orientation", "horizontal") == "horizontal" else I
        vals = np.where((idx // half) % 2 == 1, contrast, 1.0).ravel()
    elif name in ("inclusions", "channels_inclusions"):
        contrast = float(params.get("contrast", 1e4))
        rng = np.random.default_rng(int(params.get("seed", 0)))
        count = int(params.get("count", 40))
        radius = float(params.get("radius", 0.03))
        x0, x1, y0, y1 = mesh.rect
        centers = rng.uniform([x0, y0], [x1, y1], size=(count, 2))
        xc = mesh.element_centers()
        d2 = ((xc[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        inside = (d2 <= radius ** 2).any(axis=1)
        if name == "channels_inclusions":
            width = float(params.get("channel_width", 0.02))
            spacing = float(params.get("channel_spacing", 0.125))
            yrel = (xc[:, 1] - y0) % spacing
            inside |= np.abs(yrel - 0.5 * spacing) <= 0.5 * width
        vals = np.where(inside, contrast, 1.0)
    else:
        raise ValueError(f"unknown coefficient generator {name!r}")
    return CoefficientField(vals, nx, ny)


def eval_source(x1, x2):
    """Gaussian heat source peaked at (0.15, 0.55)."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return 1e3 * np.exp(-10.0 * (x1 - 0.15) ** 2 - 10.0 * (x2 - 0.55) ** 2)


def _const(c):
    def fn(x1, x2):
        return np.full(np.broadcast(np.asarray(x1), np.asarray(x2)).shape, float(c))
    return fn


@dataclass(frozen=True)
class ProblemData:
    """Source ``f``, Neumann flux ``g`` and Dirichlet value ``q``.

    All three are vectorized callables ``(x1, x2) -> values``.
    """

    f: Callable
    g: Callable
    q: Callable


def benchmark_problem():
    return ProblemData(eval_source, _const(1.0), _const(1.0))


def constant_problem(f=0.0, g=0.0, q=1.0):
    return ProblemData(_const(f), _const(g), _const(q))
