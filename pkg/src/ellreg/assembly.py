"""Discrete operators for the regularized variational problem.

All element integrals involve products of P1 functions only (degree <= 3
polynomials per triangle) and are assembled from exact closed-form element
matrices; loads with general right-hand sides use a degree-2 exact
edge-midpoint rule.

The trilinear form is T(a, u, v) = int a grad(u).grad(v); its tau-perturbed
variant adds tau * int a u v, which keeps positivity for a >= 0 and obeys
the operator-noise proximity bound with constant max|a|.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

# integral of phi_k phi_i phi_j over a triangle is area * _C3[k,i,j] / 60
_C3 = np.ones((3, 3, 3))
for _k in range(3):
    for _i in range(3):
        for _j in range(3):
            s = {_k, _i, _j}
            if len(s) == 1:
                _C3[_k, _i, _j] = 6.0
            elif len(s) == 2:
                _C3[_k, _i, _j] = 2.0
del _k, _i, _j, s


@dataclass
class AdmissibleParameter:
    """Coefficient vector with box bounds and a (smoothed) TV cap."""

    A: np.ndarray
    c1: float = 0.1
    c2: float = 10.0
    c3: float = np.inf
    tv_beta: float = 1e-6

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.c1 <= 0 or self.c1 >= self.c2:
            raise ValueError("need 0 < c1 < c2")

    def in_box(self) -> bool:
        return bool(np.all(self.A >= self.c1) and np.all(self.A <= self.c2))

    def tv_ok(self, mesh: Mesh) -> bool:
        return smoothed_tv(mesh, self.A, self.tv_beta) <= self.c3


def _accumulate(mesh: Mesh, elem: np.ndarray) -> sp.csr_matrix:
    """Scatter (T, 3, 3) element blocks into a CSR matrix."""
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.node_count
    mat = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_stiffness(mesh: Mesh, A: np.ndarray) -> sp.csr_matrix:
    """K(A) with K(A)_ij = int a grad(phi_i).grad(phi_j), a the P1 interpolant of A."""
    A = np.asarray(A, dtype=float)
    if A.shape != (mesh.node_count,):
        raise ValueError("coefficient vector does not match the mesh")
    mean_a = A[mesh.triangles].mean(axis=1)
    gg = np.einsum("tid,tjd->tij", mesh.grads, mesh.grads)
    elem = (mesh.areas * mean_a)[:, None, None] * gg
    # rewrite each element diagonal as the negative off-diagonal sum so the
    # element matrices annihilate constants exactly, not just to roundoff
    for i in range(3):
        elem[:, i, i] = -(elem[:, i, (i + 1) % 3] + elem[:, i, (i + 2) % 3])
    return _accumulate(mesh, elem)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Plain P1 mass matrix M_ij = int phi_i phi_j."""
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    elem = mesh.areas[:, None, None] * base
    return _accumulate(mesh, elem)


def assemble_weighted_mass(mesh: Mesh, A: np.ndarray) -> sp.csr_matrix:
    """a-weighted mass matrix, (M_A)_ij = int a phi_i phi_j with a P1."""
    A = np.asarray(A, dtype=float)
    if A.shape != (mesh.node_count,):
        raise ValueError("coefficient vector does not match the mesh")
    At = A[mesh.triangles]
    elem = np.einsum("kij,tk->tij", _C3, At) * (mesh.areas / 60.0)[:, None, None]
    return _accumulate(mesh, elem)


def assemble_perturbed_stiffness(mesh: Mesh, A: np.ndarray, tau: float) -> sp.csr_matrix:
    """K_tau(A) = K(A) + tau * (a-weighted mass)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    K = assemble_stiffness(mesh, A)
    if tau == 0.0:
        return K
    return (K + tau * assemble_weighted_mass(mesh, A)).tocsr()


def assemble_s_matrix(mesh: Mesh) -> sp.csr_matrix:
    """W_ij = S(phi_i, phi_j) with S the full H1 inner product (coercive, alpha0=1)."""
    ones = np.ones(mesh.node_count)
    return (assemble_stiffness(mesh, ones) + assemble_mass(mesh)).tocsr()


def assemble_load(mesh: Mesh, f=None, g=None) -> np.ndarray:
    """Exact-data load vector P_i = int f phi_i + int_bd g phi_i.

    ``f`` is integrated with the degree-2 exact edge-midpoint rule on each
    triangle; ``g`` with Simpson's rule on each boundary edge. Noise and the
    data-steering term are composed on top by the callers (noise module and
    forward operator).
    """
    P = np.zeros(mesh.node_count)
    if f is not None:
        p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
        mids = 0.5 * (p + np.roll(p, -1, axis=1))  # midpoints of edges 01,12,20
        fv = f(mids[..., 0], mids[..., 1])  # (T, 3)
        fv = np.broadcast_to(np.asarray(fv, dtype=float), mids.shape[:2])
        # phi_i at midpoint of edge (j, j+1) is 1/2 when i in {j, j+1}
        w = mesh.areas / 6.0
        contrib = np.empty((len(mesh.triangles), 3))
        contrib[:, 0] = w * (fv[:, 0] + fv[:, 2])
        contrib[:, 1] = w * (fv[:, 0] + fv[:, 1])
        contrib[:, 2] = w * (fv[:, 1] + fv[:, 2])
        np.add.at(P, mesh.triangles, contrib)
    if g is not None:
        a = mesh.nodes[mesh.boundary_edges[:, 0]]
        b = mesh.nodes[mesh.boundary_edges[:, 1]]
        mid = 0.5 * (a + b)
        length = np.linalg.norm(b - a, axis=1)
        ga = np.broadcast_to(np.asarray(g(a[:, 0], a[:, 1]), dtype=float), length.shape)
        gb = np.broadcast_to(np.asarray(g(b[:, 0], b[:, 1]), dtype=float), length.shape)
        gm = np.broadcast_to(np.asarray(g(mid[:, 0], mid[:, 1]), dtype=float), length.shape)
        np.add.at(P, mesh.boundary_edges[:, 0], length / 6.0 * (ga + 2.0 * gm))
        np.add.at(P, mesh.boundary_edges[:, 1], length / 6.0 * (gb + 2.0 * gm))
    return P


def apply_L(mesh: Mesh, V: np.ndarray, A: np.ndarray, tau: float = 0.0) -> np.ndarray:
    """Matrix-free K_tau(A) V, assembled per element without forming K_tau(A)."""
    V = np.asarray(V, dtype=float)
    A = np.asarray(A, dtype=float)
    if V.shape != (mesh.node_count,) or A.shape != (mesh.node_count,):
        raise ValueError("dimension mismatch")
    tris = mesh.triangles
    Vt = V[tris]
    At = A[tris]
    gv = np.einsum("tid,ti->td", mesh.grads, Vt)
    contrib = (mesh.areas * At.mean(axis=1))[:, None] * np.einsum(
        "tid,td->ti", mesh.grads, gv
    )
    if tau != 0.0:
        contrib = contrib + (tau / 60.0 * mesh.areas)[:, None] * np.einsum(
            "kij,tk,tj->ti", _C3, At, Vt
        )
    out = np.zeros(mesh.node_count)
    np.add.at(out, tris, contrib)
    return out


def apply_Lt(mesh: Mesh, V: np.ndarray, U: np.ndarray, tau: float = 0.0) -> np.ndarray:
    """Parameter-space vector with entries T_tau(psi_k, V, U), assembled per element.

    This is the action of L(V)^T on U; it is symmetric in (V, U).
    """
    V = np.asarray(V, dtype=float)
    U = np.asarray(U, dtype=float)
    if V.shape != (mesh.node_count,) or U.shape != (mesh.node_count,):
        raise ValueError("dimension mismatch")
    tris = mesh.triangles
    Vt = V[tris]
    Ut = U[tris]
    gv = np.einsum("tid,ti->td", mesh.grads, Vt)
    gu = np.einsum("tid,ti->td", mesh.grads, Ut)
    dots = np.einsum("td,td->t", gv, gu)
    contrib = np.repeat((mesh.areas * dots / 3.0)[:, None], 3, axis=1)
    if tau != 0.0:
        contrib = contrib + (tau / 60.0 * mesh.areas)[:, None] * np.einsum(
            "kij,ti,tj->tk", _C3, Vt, Ut
        )
    out = np.zeros(mesh.node_count)
    np.add.at(out, tris, contrib)
    return out


def smoothed_tv(mesh: Mesh, A: np.ndarray, beta: float) -> float:
    """Smoothed total variation: sum over triangles of area*sqrt(|grad a|^2 + beta^2)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    ga = np.einsum("tid,ti->td", mesh.grads, np.asarray(A, dtype=float)[mesh.triangles])
    return float(np.sum(mesh.areas * np.sqrt(np.sum(ga * ga, axis=1) + beta * beta)))


def export_matrix_market(mat: sp.spmatrix, path) -> None:
    """Debugging export in MatrixMarket coordinate format."""
    from scipy.io import mmwrite

    mmwrite(str(path), mat.tocoo())
