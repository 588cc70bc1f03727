"""Small dense linear-algebra helpers shared across the package."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

EIG_FLOOR = 1e-12
PINV_CUTOFF = 1e-10


def herm(a):
    return a.conj().T


def is_hermitian(a, tol=1e-10):
    return np.max(np.abs(a - herm(a))) <= tol


def expm(a):
    """Dense matrix exponential (Pade scaling-and-squaring)."""
    return sla.expm(np.asarray(a, dtype=complex))


def expm_eig(a):
    """Matrix exponential through eigendecomposition; independent of expm."""
    w, v = sla.eig(np.asarray(a, dtype=complex))
    return v @ np.diag(np.exp(w)) @ np.linalg.inv(v)


def sqrtm_psd(a, floor=EIG_FLOOR):
    """Hermitian square root with eigenvalue flooring; returns (sqrt, inv_sqrt)."""
    a = 0.5 * (a + herm(a))
    w, v = np.linalg.eigh(a)
    w = np.clip(w.real, floor, None)
    s = np.sqrt(w)
    return (v * s) @ herm(v), (v / s) @ herm(v)


def psd_floor(a, floor=0.0):
    """Project a Hermitian matrix onto the PSD cone (up to `floor`)."""
    a = 0.5 * (a + herm(a))
    w, v = np.linalg.eigh(a)
    return (v * np.clip(w, floor, None)) @ herm(v)


def entropy(a, floor=EIG_FLOOR):
    """Von Neumann entropy in nats of a PSD matrix normalized to unit trace."""
    a = 0.5 * (a + herm(a))
    w = np.linalg.eigvalsh(a).real
    w = w[w > floor]
    if w.size == 0:
        return 0.0
    w = w / w.sum()
    return float(-np.sum(w * np.log(w)))


def entropy_from_weights(w, floor=EIG_FLOOR):
    w = np.asarray(w, dtype=float)
    w = w[w > floor]
    if w.size == 0:
        return 0.0
    w = w / w.sum()
    return float(-np.sum(w * np.log(w)))


def trace_distance(a, b):
    """0.5 * trace norm of (a - b) for Hermitian a, b."""
    d = 0.5 * ((a - b) + herm(a - b))
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(d))))


def relative_entropy(rho, sigma, floor=EIG_FLOOR, support_tol=1e-9):
    """Quantum relative entropy S(rho || sigma) in nats.

    Both inputs are normalized to unit trace first.  Returns inf when the
    support of rho is not contained in the support of sigma.
    """
    rho = 0.5 * (rho + herm(rho))
    sigma = 0.5 * (sigma + herm(sigma))
    rho = rho / np.trace(rho).real
    sigma = sigma / np.trace(sigma).real
    wr, vr = np.linalg.eigh(rho)
    ws, vs = np.linalg.eigh(sigma)
    wr = np.clip(wr.real, 0.0, None)
    ws = np.clip(ws.real, 0.0, None)
    # support check: weight of rho outside supp(sigma)
    kernel = vs[:, ws <= floor]
    if kernel.shape[1] > 0:
        leak = float(np.real(np.trace(herm(kernel) @ rho @ kernel)))
        if leak > support_tol:
            return np.inf
    log_sigma = (vs * np.log(np.clip(ws, floor, None))) @ herm(vs)
    s_rho = -np.sum(wr[wr > floor] * np.log(wr[wr > floor]))
    return float(s_rho.real - np.real(np.trace(rho @ log_sigma)))


def partial_trace(op, dims, keep):
    """Partial trace of a dense operator on a tensor-product space.

    Parameters
    ----------
    op : (N, N) array with N = prod(dims)
    dims : sequence of leg dimensions
    keep : sequence of leg indices to keep (order preserved)
    """
    dims = list(dims)
    n = len(dims)
    keep = list(keep)
    traced = [i for i in range(n) if i not in keep]
    t = np.asarray(op).reshape(dims + dims)
    perm = keep + traced + [n + i for i in keep] + [n + i for i in traced]
    t = t.transpose(perm)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    dt = int(np.prod([dims[i] for i in traced])) if traced else 1
    t = t.reshape(dk, dt, dk, dt)
    return np.einsum("abcb->ac", t)


def gauss_legendre(a, b, n):
    """Nodes and weights for Gauss-Legendre quadrature on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w
