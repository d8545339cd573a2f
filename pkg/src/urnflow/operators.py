"""Integral operators of the hydrodynamic description, on the midpoint grid.

For a model with refresh profile b, multiplier c and pair kernels lam,
a1..a4, the macroscopic density rho(t, u) and second-moment density
vartheta(t, u) obey linear evolution equations driven by the operators
below.  Each operator is a sum of multiplication terms (diagonal in u) and
kernel terms (integrals against f(v)); on the grid both reduce to an m x m
matrix acting on the value vector.

Naming scheme:

* ``mean_drift``             -- drift of <field, f> for test functions f
* ``mean_drift_adjoint``     -- the same drift moved onto the density
* ``second_moment_term(k)``  -- the five parts of the square-field drift
* ``second_moment_drift``    -- their sum, in fixed term order 1..5
* ``second_moment_drift_adjoint`` -- density-side square-field drift
* ``interaction_source``     -- inhomogeneity from products of means
* ``noise_kernels``          -- diagonal and cross kernels K1, K2 of the
                                fluctuation quadratic form
* ``noise_form``             -- the quadratic form [f, f] built from K1, K2

Term order inside every operator follows the defining formula left to
right, so independently summing the parts reproduces the composite bit for
bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import GridBiFunction, GridFunction, midpoint_nodes
from .model import ModelSpec

__all__ = ["HydroOperators"]

_N_SECOND_MOMENT_TERMS = 5


@dataclass(frozen=True)
class HydroOperators:
    """Model coefficients sampled on an m-node midpoint grid.

    Kernel samples are indexed ``K[i, j] = k(u_i, u_j)`` with the first
    axis playing the role of the operator's output variable u.
    """

    spec: ModelSpec
    m: int

    # -- coefficient samples ------------------------------------------------

    @cached_property
    def nodes(self) -> np.ndarray:
        return midpoint_nodes(self.m)

    @cached_property
    def b(self) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.spec.b(self.nodes), dtype=float), (self.m,)
        ).copy()

    @cached_property
    def c(self) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.spec.c(self.nodes), dtype=float), (self.m,)
        ).copy()

    @cached_property
    def phi(self) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.spec.phi(self.nodes), dtype=float), (self.m,)
        ).copy()

    def _kernel(self, expr) -> np.ndarray:
        u = self.nodes[:, None]
        v = self.nodes[None, :]
        values = np.asarray(expr(u, v), dtype=float)
        if values.shape != (self.m, self.m):
            values = np.broadcast_to(values, (self.m, self.m)).copy()
        return values

    @cached_property
    def lam(self) -> np.ndarray:
        return self._kernel(self.spec.lam)

    @cached_property
    def a1(self) -> np.ndarray:
        return self._kernel(self.spec.a1)

    @cached_property
    def a2(self) -> np.ndarray:
        return self._kernel(self.spec.a2)

    @cached_property
    def a3(self) -> np.ndarray:
        return self._kernel(self.spec.a3)

    @cached_property
    def a4(self) -> np.ndarray:
        return self._kernel(self.spec.a4)

    # -- matrix assembly ----------------------------------------------------
    #
    # Building blocks: for a kernel sample K,
    #   row integral   (1/m) sum_v K(u, v)   -> K.mean(axis=1)
    #   col integral   (1/m) sum_v K(v, u)   -> K.mean(axis=0)
    #   "f(u) times row integral"  -> diagonal matrix
    #   "integral of K(u,v) f(v)"  -> matrix K/m
    #   "integral of K(v,u) f(v)"  -> matrix K.T/m

    @cached_property
    def mean_drift_matrix(self) -> np.ndarray:
        """Drift on test functions:

        (Lf)(u) = b(u)(c(u)-1) f(u)
                + f(u) Int lam(u,v)(a1(u,v)-1) dv
                + Int lam(u,v) a3(u,v) f(v) dv
                + f(u) Int lam(v,u)(a4(v,u)-1) dv
                + Int lam(v,u) a2(v,u) f(v) dv
        """
        diag = (
            self.b * (self.c - 1.0)
            + (self.lam * (self.a1 - 1.0)).mean(axis=1)
            + (self.lam * (self.a4 - 1.0)).mean(axis=0)
        )
        mat = (self.lam * self.a3) / self.m + (self.lam * self.a2).T / self.m
        mat[np.diag_indices(self.m)] += diag
        return mat

    @cached_property
    def mean_drift_adjoint_matrix(self) -> np.ndarray:
        """Density-side drift:

        (L*g)(u) = b(u)(c(u)-1) g(u)
                 + g(u) Int lam(v,u)(a4(v,u)-1) dv
                 + g(u) Int lam(u,v)(a1(u,v)-1) dv
                 + Int lam(u,v) a2(u,v) g(v) dv
                 + Int lam(v,u) a3(v,u) g(v) dv
        """
        diag = (
            self.b * (self.c - 1.0)
            + (self.lam * (self.a4 - 1.0)).mean(axis=0)
            + (self.lam * (self.a1 - 1.0)).mean(axis=1)
        )
        mat = (self.lam * self.a2) / self.m + (self.lam * self.a3).T / self.m
        mat[np.diag_indices(self.m)] += diag
        return mat

    @cached_property
    def _second_moment_term_matrices(self) -> tuple[np.ndarray, ...]:
        """The five parts of the square-field drift on test functions:

        1. b(u)(c^2(u)-1) f(u)
        2. f(u) Int lam(u,v)(a1^2(u,v)-1) dv
        3. Int lam(v,u) a2^2(v,u) f(v) dv
        4. Int lam(u,v) a3^2(u,v) f(v) dv
        5. f(u) Int lam(v,u)(a4^2(v,u)-1) dv
        """
        m = self.m
        t1 = np.diag(self.b * (self.c**2 - 1.0))
        t2 = np.diag((self.lam * (self.a1**2 - 1.0)).mean(axis=1))
        t3 = (self.lam * self.a2**2).T / m
        t4 = (self.lam * self.a3**2) / m
        t5 = np.diag((self.lam * (self.a4**2 - 1.0)).mean(axis=0))
        return (t1, t2, t3, t4, t5)

    @cached_property
    def second_moment_drift_adjoint_matrix(self) -> np.ndarray:
        """Density-side square-field drift:

        (Q*g)(u) = b(u)(c^2(u)-1) g(u)
                 + g(u) Int lam(u,v)(a1^2(u,v)-1) dv
                 + Int lam(u,v) a2^2(u,v) g(v) dv
                 + Int lam(v,u) a3^2(v,u) g(v) dv
                 + g(u) Int lam(v,u)(a4^2(v,u)-1) dv
        """
        diag = (
            self.b * (self.c**2 - 1.0)
            + (self.lam * (self.a1**2 - 1.0)).mean(axis=1)
            + (self.lam * (self.a4**2 - 1.0)).mean(axis=0)
        )
        mat = (self.lam * self.a2**2) / self.m + (self.lam * self.a3**2).T / self.m
        mat[np.diag_indices(self.m)] += diag
        return mat

    # -- operator application ------------------------------------------------

    def _wrap(self, values: np.ndarray) -> GridFunction:
        return GridFunction(self.m, values)

    def _vals(self, f: GridFunction | np.ndarray) -> np.ndarray:
        if isinstance(f, GridFunction):
            if f.m != self.m:
                raise ValueError(f"grid mismatch: operator m={self.m}, f.m={f.m}")
            return f.values
        return np.asarray(f, dtype=float)

    def mean_drift(self, f: GridFunction | np.ndarray) -> GridFunction:
        return self._wrap(self.mean_drift_matrix @ self._vals(f))

    def mean_drift_adjoint(self, g: GridFunction | np.ndarray) -> GridFunction:
        return self._wrap(self.mean_drift_adjoint_matrix @ self._vals(g))

    def second_moment_term(self, k: int, f: GridFunction | np.ndarray) -> GridFunction:
        """Apply part ``k`` (1-based, 1..5) of the square-field drift."""
        if not 1 <= k <= _N_SECOND_MOMENT_TERMS:
            raise ValueError(f"term index must be in 1..5, got {k}")
        return self._wrap(
            self._second_moment_term_matrices[k - 1] @ self._vals(f)
        )

    def second_moment_drift(self, f: GridFunction | np.ndarray) -> GridFunction:
        """Sum of the five parts, applied and accumulated in term order."""
        values = self._vals(f)
        out = self._second_moment_term_matrices[0] @ values
        for mat in self._second_moment_term_matrices[1:]:
            out = out + mat @ values
        return self._wrap(out)

    def second_moment_drift_adjoint(
        self, g: GridFunction | np.ndarray
    ) -> GridFunction:
        return self._wrap(self.second_moment_drift_adjoint_matrix @ self._vals(g))

    # -- interaction source ---------------------------------------------------

    @cached_property
    def _source_kernel_left(self) -> np.ndarray:
        # lam(u,v) a1(u,v) a2(u,v)
        return self.lam * self.a1 * self.a2

    @cached_property
    def _source_kernel_right(self) -> np.ndarray:
        # lam(v,u) a3(v,u) a4(v,u), already transposed to act on index v
        return (self.lam * self.a3 * self.a4).T

    def interaction_source_density(
        self, rho: GridFunction | np.ndarray
    ) -> GridFunction:
        """Inhomogeneity of the square-field equation, as a density in u:

        s(u) = 2 rho(u) Int lam(u,v) a1(u,v) a2(u,v) rho(v) dv
             + 2 rho(u) Int lam(v,u) a3(v,u) a4(v,u) rho(v) dv
        """
        r = self._vals(rho)
        left = 2.0 * r * (self._source_kernel_left @ r) / self.m
        right = 2.0 * r * (self._source_kernel_right @ r) / self.m
        return self._wrap(left + right)

    def interaction_source(
        self, rho: GridFunction | np.ndarray, f: GridFunction | np.ndarray
    ) -> float:
        """The same inhomogeneity paired with a test function f:

        2 II rho(u) rho(v) a1(u,v) a2(u,v) lam(u,v) f(u) du dv
        + 2 II lam(v,u) a3(v,u) a4(v,u) rho(u) rho(v) f(u) du dv
        """
        r = self._vals(rho)
        fv = self._vals(f)
        m2 = float(self.m) ** 2
        left = 2.0 * float((fv * r) @ self._source_kernel_left @ r) / m2
        right = 2.0 * float((fv * r) @ self._source_kernel_right @ r) / m2
        return left + right

    # -- fluctuation noise kernels and quadratic form -------------------------

    def noise_kernels(
        self,
        rho: GridFunction | np.ndarray,
        vartheta: GridFunction | np.ndarray,
    ) -> tuple[GridFunction, GridBiFunction]:
        """Diagonal kernel K1(u) and cross kernel K2(u, v) of the
        instantaneous fluctuation covariance:

        K1(u) = vt(u) b(u)(c(u)-1)^2
              + vt(u) Int lam(u,v)(a1(u,v)-1)^2 dv
              + Int vt(v) lam(u,v) a2^2(u,v) dv
              + Int lam(v,u) a3^2(v,u) vt(v) dv
              + vt(u) Int lam(v,u)(a4(v,u)-1)^2 dv
              + 2 rho(u) Int lam(u,v)(a1(u,v)-1) a2(u,v) rho(v) dv
              + 2 rho(u) Int lam(v,u) a3(v,u)(a4(v,u)-1) rho(v) dv

        K2(u,v) = 2 lam(u,v)(a1(u,v)-1) a3(u,v) vt(u)
                + 2 lam(u,v) a2(u,v)(a4(u,v)-1) vt(v)
                + 2 lam(u,v)(a1(u,v)-1)(a4(u,v)-1) rho(u) rho(v)
                + 2 lam(u,v) a2(u,v) a3(u,v) rho(u) rho(v)
        """
        r = self._vals(rho)
        vt = self._vals(vartheta)
        m = self.m
        lam, a1, a2, a3, a4 = self.lam, self.a1, self.a2, self.a3, self.a4

        k1 = (
            vt * self.b * (self.c - 1.0) ** 2
            + vt * (lam * (a1 - 1.0) ** 2).mean(axis=1)
            + (lam * a2**2) @ vt / m
            + (lam * a3**2).T @ vt / m
            + vt * (lam * (a4 - 1.0) ** 2).mean(axis=0)
            + 2.0 * r * ((lam * (a1 - 1.0) * a2) @ r) / m
            + 2.0 * r * ((lam * a3 * (a4 - 1.0)).T @ r) / m
        )
        outer = np.outer(r, r)
        k2 = (
            2.0 * lam * (a1 - 1.0) * a3 * vt[:, None]
            + 2.0 * lam * a2 * (a4 - 1.0) * vt[None, :]
            + 2.0 * lam * (a1 - 1.0) * (a4 - 1.0) * outer
            + 2.0 * lam * a2 * a3 * outer
        )
        return self._wrap(k1), GridBiFunction(m, k2)

    def noise_form(
        self,
        f: GridFunction | np.ndarray,
        rho: GridFunction | np.ndarray,
        vartheta: GridFunction | np.ndarray,
    ) -> float:
        """Quadratic form [f, f] = Int K1 f^2 + II K2(u,v) f(u) f(v)."""
        fv = self._vals(f)
        k1, k2 = self.noise_kernels(rho, vartheta)
        diag = float((k1.values * fv**2).mean())
        cross = float(fv @ k2.values @ fv) / float(self.m) ** 2
        return diag + cross

    def noise_form_polarized(
        self,
        f: GridFunction | np.ndarray,
        g: GridFunction | np.ndarray,
        rho: GridFunction | np.ndarray,
        vartheta: GridFunction | np.ndarray,
    ) -> float:
        """Bilinear form [f, g] by polarization:
        ([f+g, f+g] - [f-g, f-g]) / 4.
        """
        fv = self._vals(f)
        gv = self._vals(g)
        plus = self.noise_form(fv + gv, rho, vartheta)
        minus = self.noise_form(fv - gv, rho, vartheta)
        return (plus - minus) / 4.0
