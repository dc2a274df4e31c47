"""Structured grid functions with exponential/cosh decay weights."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class WeightedGridFunction:
    """Samples on a tensor grid whose axes are named, e.g. ("s", "t") or ("s", "theta", "t").

    ``ghost`` counts the extra layers stored on each side of every
    non-periodic axis; ``coords`` holds the interior coordinates only.
    The weight is exp(a*s) * cosh(t)^gamma.
    """

    values: np.ndarray
    axes: tuple
    coords: dict
    a: float = 0.0
    gamma: float = 0.0
    ghost: int = 0
    periodic: tuple = ("theta",)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.values.ndim != len(self.axes):
            raise ValueError("values rank does not match the axes")
        for ax, n in zip(self.axes, self.values.shape):
            g = 0 if ax in self.periodic else self.ghost
            if n != len(self.coords[ax]) + 2 * g:
                raise ValueError(f"axis {ax}: {n} samples for {len(self.coords[ax])} coordinates")

    def interior(self):
        sl = tuple(slice(None) if ax in self.periodic or self.ghost == 0
                   else slice(self.ghost, -self.ghost) for ax in self.axes)
        return self.values[sl]

    def step(self, axis):
        c = self.coords[axis]
        return float(c[1] - c[0])

    def weight(self, a=None, gamma=None):
        a = self.a if a is None else a
        gamma = self.gamma if gamma is None else gamma
        shape = [1] * len(self.axes)
        w = np.ones([1] * len(self.axes))
        if "s" in self.axes and a != 0.0:
            i = self.axes.index("s")
            shape_i = list(shape)
            shape_i[i] = -1
            w = w * np.exp(a * np.asarray(self.coords["s"])).reshape(shape_i)
        if "t" in self.axes and gamma != 0.0:
            i = self.axes.index("t")
            shape_i = list(shape)
            shape_i[i] = -1
            w = w * np.cosh(np.asarray(self.coords["t"])).reshape(shape_i) ** gamma
        return w

    def weighted_sup(self, a=None, gamma=None):
        return float(np.max(np.abs(self.interior() * self.weight(a, gamma))))

    def weighted_holder(self, alpha, a=None, gamma=None):
        """Sup norm plus the nearest-neighbour Hoelder quotient of the weighted samples."""
        v = self.interior() * self.weight(a, gamma)
        semi = 0.0
        for k, ax in enumerate(self.axes):
            d = np.abs(np.diff(v, axis=k))
            semi = max(semi, float(np.max(d)) / self.step(ax) ** alpha if d.size else 0.0)
        return float(np.max(np.abs(v))) + semi

    def with_values(self, values, **kw):
        from dataclasses import replace
        return replace(self, values=values, **kw)
