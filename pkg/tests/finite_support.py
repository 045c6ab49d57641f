"""A discrete law over (X, Z, Y) on which every expectation is an exact weighted sum."""

from dataclasses import dataclass

import numpy as np

from obigrad.core import Dataset, NuisanceSet, StructuralModel


def nonlinear_model() -> StructuralModel:
    """g(omega, z) = (sin(omega_0 z), omega_1 z^2) with d = q = 2."""

    def g(w, z):
        z = z[:, 0]
        return np.column_stack([np.sin(w[0] * z), w[1] * z**2])

    def dg(w, z):
        z = z[:, 0]
        out = np.zeros((len(z), 2, 2))
        out[:, 0, 0] = z * np.cos(w[0] * z)
        out[:, 1, 1] = z**2
        return out

    return StructuralModel(g=g, dg=dg, d=2, q=2, name="finite_nonlinear")


class TableFunction:
    """A function of a scalar covariate given by its values on the support points."""

    def __init__(self, support, values):
        self.support = np.asarray(support, dtype=float)
        self.values = np.asarray(values, dtype=float)

    def __call__(self, x):
        idx = np.searchsorted(self.support, np.asarray(x, dtype=float)[:, 0])
        return self.values[idx]


def table_nuisances(support, h, j, m) -> NuisanceSet:
    return NuisanceSet(TableFunction(support, h), TableFunction(support, j), TableFunction(support, m))


@dataclass
class FiniteLaw:
    x_support: np.ndarray  # (K,)
    p_x: np.ndarray  # (K,)
    z_support: np.ndarray  # (L,)
    p_z: np.ndarray  # (K, L), rows sum to one
    y_support: np.ndarray  # (S, q)
    p_y: np.ndarray  # (K, L, S)
    model: StructuralModel

    @classmethod
    def random(cls, seed: int, k: int = 5, l: int = 4, s: int = 3) -> "FiniteLaw":
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(-1, 1, k))
        p_x = rng.dirichlet(np.ones(k))
        z = rng.uniform(-1.5, 1.5, l)
        p_z = rng.dirichlet(np.ones(l), size=k)
        y = rng.standard_normal((s, 2))
        p_y = rng.dirichlet(np.ones(s), size=(k, l))
        return cls(x, p_x, z, p_z, y, p_y, nonlinear_model())

    def joint(self) -> tuple[Dataset, np.ndarray]:
        """Every support point of (X, Y, Z) with its probability."""
        xs, ys, zs, ws = [], [], [], []
        for a, x in enumerate(self.x_support):
            for b, z in enumerate(self.z_support):
                for c, y in enumerate(self.y_support):
                    xs.append([x])
                    zs.append([z])
                    ys.append(y)
                    ws.append(self.p_x[a] * self.p_z[a, b] * self.p_y[a, b, c])
        return Dataset(np.array(xs), np.array(ys), np.array(zs)), np.array(ws)

    def oracle_tables(self, omega):
        """h*, j*, m* on the X support, shapes (K, q), (K, d, q), (K, q)."""
        z = self.z_support[:, None]
        g = self.model.g(omega, z)
        dg = self.model.dg(omega, z)
        h = self.p_z @ g
        j = np.einsum("kl,ldq->kdq", self.p_z, dg)
        ey = np.einsum("kls,sq->klq", self.p_y, self.y_support)
        m = np.einsum("kl,klq->kq", self.p_z, ey)
        return h, j, m

    def oracle(self, omega) -> NuisanceSet:
        return table_nuisances(self.x_support, *self.oracle_tables(omega))

    def psi(self, omega) -> np.ndarray:
        h, j, m = self.oracle_tables(omega)
        return np.einsum("k,kdq,kq->d", self.p_x, j, h - m)

    def x_points(self) -> np.ndarray:
        return self.x_support[:, None]
