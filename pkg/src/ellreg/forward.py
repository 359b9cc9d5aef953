"""Regularized forward, sensitivity and adjoint solves.

The forward operator is [K_tau(A) + eps*W] (optionally shifted by a
coercive term c0*W so that coercive reference problems reuse the same
machinery). For eps = 0 on the pure-Neumann problem the system is singular;
the solve reports a structured error carrying a condition estimate instead
of returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .mesh import Mesh

SOLVER_TOL = 1e-12
# thresholds on the constant-mode generalized eigenvalue 1'(K_tau + eps*W)1 / 1'W1,
# which certifies the near-null direction of the pure-Neumann operator
LAMBDA_FAIL = 1e-13
LAMBDA_WARN = 1e-9


class SingularSystemError(RuntimeError):
    """Raised when the (eps = 0) system is numerically singular."""

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(message)
        self.condition_estimate = condition_estimate


@dataclass(frozen=True)
class ScheduleEntry:
    eps: float
    tau: float
    nu: float
    delta: float
    kappa: float


@dataclass(frozen=True)
class RegularizationSchedule:
    """Coupled decay of (eps, tau, nu, delta, kappa) with the ratio conditions."""

    entries: tuple

    def __post_init__(self):
        for e in self.entries:
            if e.eps < 0 or min(e.tau, e.nu, e.delta) < 0:
                raise ValueError("schedule entries need eps, tau, nu, delta >= 0")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def ratios_decrease(self) -> bool:
        """Check the decay of eps, tau, nu, delta, kappa, tau/eps, nu/eps, delta/eps."""
        seqs = []
        for key in ("eps", "tau", "nu", "delta", "kappa"):
            seqs.append([getattr(e, key) for e in self.entries])
        for key in ("tau", "nu", "delta"):
            seqs.append([getattr(e, key) / e.eps for e in self.entries])
        return all(all(b <= a + 1e-15 for a, b in zip(s, s[1:])) for s in seqs)


def default_schedule(n_entries: int = 8, eps0: float = 1e-1, rho: float = 0.5) -> RegularizationSchedule:
    """eps_n = eps0*rho^n, tau_n = eps_n^2, nu_n = delta_n = eps_n^(3/2), kappa_n = eps_n."""
    entries = []
    for k in range(n_entries):
        eps = eps0 * rho**k
        entries.append(ScheduleEntry(eps=eps, tau=eps**2, nu=eps**1.5, delta=eps**1.5, kappa=eps))
    return RegularizationSchedule(entries=tuple(entries))


class RegularizedForwardOperator:
    """Factorized handle for [K_tau(A) + (coercive_shift + eps) W] at fixed (A, eps, tau).

    Immutable after factorization; repeated solves reuse the factorization.
    """

    def __init__(self, mesh: Mesh, A: np.ndarray, eps: float, tau: float = 0.0,
                 coercive_shift: float = 0.0):
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        self.mesh = mesh
        self.A = np.asarray(A, dtype=float).copy()
        self.eps = float(eps)
        self.tau = float(tau)
        self.coercive_shift = float(coercive_shift)
        self.K_tau = assembly.assemble_perturbed_stiffness(mesh, self.A, tau)
        self.W = assembly.assemble_s_matrix(mesh)
        self.M = assembly.assemble_mass(mesh)
        self.system = (self.K_tau + (self.eps + self.coercive_shift) * self.W).tocsc()
        self._system_norm = spla.norm(self.system, np.inf)
        self._lu = None
        self.condition_estimate = None
        self.near_singular = False

    def _factorize(self):
        if self._lu is not None:
            return
        # constant-mode generalized eigenvalue lam_c = eps + shift + tau*int(a):
        # the stiffness part annihilates constants, so this resolves levels far
        # below what LU pivots can certify. The tau contribution is measured
        # from the assembled matrix with a roundoff floor; the eps part is exact.
        ones = np.ones(self.mesh.node_count)
        t_term = (ones @ (self.K_tau @ ones)) / (ones @ (self.W @ ones))
        if t_term < 256.0 * np.finfo(float).eps * self._system_norm:
            t_term = 0.0
        lam_c = self.eps + self.coercive_shift + t_term
        self.condition_estimate = (self._system_norm / lam_c if lam_c > 0
                                   else np.inf)
        if lam_c < LAMBDA_FAIL:
            raise SingularSystemError(
                f"system is numerically singular (eps={self.eps:g}, "
                f"constant-mode eigenvalue {lam_c:.3e}); "
                f"condition estimate {self.condition_estimate:.3e}",
                self.condition_estimate,
            )
        self.near_singular = lam_c < LAMBDA_WARN
        lu = spla.splu(self.system, permc_spec="MMD_AT_PLUS_A",
                       options={"SymmetricMode": True})
        udiag = np.abs(lu.U.diagonal())
        umax = udiag.max()
        # pivot-ratio fallback catches degeneracies unrelated to the constant mode
        if umax > 0 and udiag.min() / umax < 1e-12:
            self.near_singular = True
        self._lu = lu

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        self._factorize()
        x = self._lu.solve(rhs)
        # backward-stability scale: |b| alone misjudges solves whose solution
        # is amplified by the 1/eps constant mode
        scale = np.linalg.norm(rhs) + self._system_norm * np.linalg.norm(x)
        res = np.linalg.norm(self.system @ x - rhs)
        if scale > 0 and res > SOLVER_TOL * scale:
            # one step of iterative refinement recovers the lost digits
            x = x + self._lu.solve(rhs - self.system @ x)
            res = np.linalg.norm(self.system @ x - rhs)
            scale = np.linalg.norm(rhs) + self._system_norm * np.linalg.norm(x)
        if scale > 0 and res > 1e-8 * scale:
            raise SingularSystemError(
                f"solve did not reach tolerance (relative residual {res / scale:.3e})",
                self.condition_estimate or np.inf,
            )
        return x

    def solve_state(self, P: np.ndarray) -> np.ndarray:
        """Solve [K_tau(A) + eps*W] V = P."""
        return self.solve(np.asarray(P, dtype=float))

    def solve_sensitivity(self, V: np.ndarray, dA: np.ndarray) -> np.ndarray:
        """First-order sensitivity: [K_tau(A)+eps*W] dV = -K_tau(dA) V = -L(V) dA."""
        rhs = -assembly.apply_L(self.mesh, V, np.asarray(dA, dtype=float), self.tau)
        return self.solve(rhs)

    def solve_second_sensitivity(self, V, dA1, dA2, dV1, dV2) -> np.ndarray:
        """Second-order sensitivity: rhs = -K_tau(dA2) dV1 - K_tau(dA1) dV2."""
        rhs = -assembly.apply_L(self.mesh, dV1, np.asarray(dA2, dtype=float), self.tau)
        rhs -= assembly.apply_L(self.mesh, dV2, np.asarray(dA1, dtype=float), self.tau)
        return self.solve(rhs)

    def solve_adjoint(self, V: np.ndarray, Z: np.ndarray, data_metric: str = "l2") -> np.ndarray:
        """Adjoint state: [K_tau(A)+eps*W] w = M (Z - V) (or W (Z - V) when Z = V-space data)."""
        G = self.M if data_metric == "l2" else self.W
        return self.solve(G @ (np.asarray(Z, dtype=float) - np.asarray(V, dtype=float)))


def riesz_dual_norm(W: sp.spmatrix, r: np.ndarray, W_lu=None) -> float:
    """Discrete dual norm sqrt(r^T W^-1 r) via the W-inner-product Riesz map."""
    if W_lu is None:
        W_lu = spla.splu(W.tocsc())
    q = W_lu.solve(np.asarray(r, dtype=float))
    return float(np.sqrt(max(r @ q, 0.0)))


def mean_zero_projection(v: np.ndarray) -> np.ndarray:
    """Project onto the complement of constants (zero-mean nodal vector)."""
    v = np.asarray(v, dtype=float)
    return v - v.mean()


def solve_neumann_mean_zero(mesh: Mesh, A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Saddle-point oracle: unregularized pure-Neumann solve with int u = 0.

    Solves [[K(A), M*1], [(M*1)^T, 0]] [u; lam] = [P; 0]; the Lagrange
    multiplier enforces the mean-zero constraint.
    """
    K = assembly.assemble_stiffness(mesh, A)
    M = assembly.assemble_mass(mesh)
    c = M @ np.ones(mesh.node_count)
    sys = sp.bmat([[K, c[:, None]], [c[None, :], None]], format="csc")
    rhs = np.concatenate([np.asarray(P, dtype=float), [0.0]])
    sol = spla.splu(sys).solve(rhs)
    return sol[:-1]


def minimum_s_norm_selection(mesh: Mesh, u_particular: np.ndarray) -> np.ndarray:
    """Minimum-S-norm member of {u + c*1}: shift by c* = -(1^T W u)/(1^T W 1)."""
    W = assembly.assemble_s_matrix(mesh)
    ones = np.ones(mesh.node_count)
    c = -(ones @ (W @ u_particular)) / (ones @ (W @ ones))
    return u_particular + c * ones
