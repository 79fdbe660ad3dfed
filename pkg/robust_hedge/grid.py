"""Time grids, sample paths and quadrature along paths.

Functionals of (s, path-prefix) are evaluated on a whole path at once: the
caller passes the node times and the path values and receives one value per
node. The value at node j may only depend on values at nodes 0..j.
"""

import numbers

import numpy as np
from scipy.integrate import trapezoid as _trapezoid

from robust_hedge.errors import GridError, QuadratureError, ConfigError
from robust_hedge.utils import write_csv, read_csv


class TimeGrid:
    def __init__(self, nodes):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise GridError("A time grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise GridError("Time grid nodes must be finite")
        if nodes[0] != 0.0:
            raise GridError("Time grid must start at 0, got {}".format(nodes[0]))
        if np.any(np.diff(nodes) <= 0.0):
            raise GridError("Time grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        self.nodes = nodes

    @property
    def t_end(self):
        return float(self.nodes[-1])

    @property
    def n_steps(self):
        return len(self.nodes) - 1

    @property
    def steps(self):
        return np.diff(self.nodes)

    @property
    def uniform(self):
        steps = self.steps
        return bool(np.allclose(steps, steps[0], rtol=1e-12, atol=0.0))

    def refine(self, factor):
        """Split every interval into factor equal pieces"""
        if factor < 1:
            raise GridError("Refinement factor must be >= 1")
        fractions = np.arange(factor) / factor
        left = self.nodes[:-1, None] + fractions[None, :] * self.steps[:, None]
        return TimeGrid(np.append(left.ravel(), self.nodes[-1]))

    def to_dict(self):
        return {"t_end": self.t_end, "n_steps": self.n_steps, "uniform": self.uniform}

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())

    def __repr__(self):
        return "TimeGrid(t_end={}, n_steps={})".format(self.t_end, self.n_steps)


def make_grid(t_end, n_steps):
    if isinstance(n_steps, bool) or not isinstance(n_steps, numbers.Integral):
        raise GridError("n_steps must be an integer, got {!r}".format(n_steps))
    if not t_end > 0:
        raise GridError("t_end must be positive, got {}".format(t_end))
    if n_steps < 1:
        raise GridError("n_steps must be >= 1, got {}".format(n_steps))
    return TimeGrid(np.linspace(0.0, float(t_end), int(n_steps) + 1))


class SamplePath:
    """Values of a d-dimensional process at the nodes of a TimeGrid"""

    def __init__(self, grid, values):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] < 1:
            raise ConfigError("Path values must be a sequence of vectors")
        if values.shape[0] != len(grid.nodes):
            raise ConfigError(
                "Path has {} values but the grid has {} nodes".format(
                    values.shape[0], len(grid.nodes)
                )
            )
        if not np.all(np.isfinite(values)):
            raise ConfigError("Path values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def s(self):
        return self.grid.nodes

    @property
    def x(self):
        """Values of a one-dimensional path as a flat array"""
        if self.d != 1:
            raise ConfigError("Path is {}-dimensional, expected 1".format(self.d))
        return self.values[:, 0]

    def component(self, j):
        return SamplePath(self.grid, self.values[:, j])

    def increments(self):
        return np.diff(self.values, axis=0)

    def at(self, s):
        """Piecewise-linear interpolation between nodes"""
        s = np.asarray(s, dtype=float)
        if np.any(s < 0.0) or np.any(s > self.grid.t_end):
            raise ConfigError("Query time outside [0, {}]".format(self.grid.t_end))
        out = np.stack(
            [np.interp(s, self.s, self.values[:, j]) for j in range(self.d)], axis=-1
        )
        return out[..., 0] if self.d == 1 else out

    def __repr__(self):
        return "SamplePath(d={}, {!r})".format(self.d, self.grid)


def trapezoid(values, grid):
    """Trapezoid integral over the node axis (axis 0) of values"""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != len(grid.nodes):
        raise QuadratureError(
            "Integrand has {} nodes, grid has {}".format(values.shape[0], len(grid.nodes))
        )
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values.reshape(len(grid.nodes), -1)))[0][0]
        raise QuadratureError(
            "Non-finite integrand at node {} (s={})".format(bad, grid.nodes[bad])
        )
    return _trapezoid(values, grid.nodes, axis=0)


def quad_along_path(f, path):
    """Trapezoid approximation of the integral of f(s, path) over [0, t_end]

    f receives the node times and the path values (flat for d=1) and returns
    one value per node.
    """
    xs = path.x if path.d == 1 else path.values
    values = np.broadcast_to(np.asarray(f(path.s, xs), dtype=float), path.s.shape)
    return float(trapezoid(values, path.grid))


def write_path_csv(path, fname):
    header = ["s"] + ["x{}".format(j + 1) for j in range(path.d)]
    write_csv(fname, header, [path.s] + [path.values[:, j] for j in range(path.d)])


def read_path_csv(fname):
    header, data = read_csv(fname)
    if not header or header[0] != "s" or len(header) < 2:
        raise ConfigError("'{}' is not a path CSV (header s,x1,...)".format(fname))
    if data.shape[0] < 2:
        raise ConfigError("'{}' needs at least two rows".format(fname))
    return SamplePath(TimeGrid(data[:, 0]), data[:, 1:])
