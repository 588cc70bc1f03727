"""Vectorization conventions, GKSL superoperators, and the Pauli basis of
the Liouville space.

Conventions (fixed globally):

* row-major vectorization, ``vec(A X B) = (A kron B^T) vec(X)``
* Hamiltonian generator ``H_super = -i (H kron 1 - 1 kron H^T)``
* jump contribution ``L kron L* - 0.5 L'L kron 1 - 0.5 1 kron (L'L)^T``
* the Pauli basis of superoperators is stored Hilbert-Schmidt normalized,
  ``p_(mu,mu') = (P_mu kron P_mu'*) / d_s``, so expansions
  ``G = sum_nu tr(G p_nu) p_nu`` are exact; the unnormalized products are
  available through ``element(nu, normalized=False)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from ._linalg import herm, is_hermitian

HERMITICITY_TOL = 1e-10
COND_CAP = 1e12

PAULI_1 = [np.eye(2, dtype=complex)]
PAULI_2 = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]


@dataclass(frozen=True)
class HilbertDims:
    """System/environment Hilbert dimensions; D = d_s * d_e."""

    d_s: int
    d_e: int = 1

    def __post_init__(self):
        if self.d_s < 2 or (self.d_s & (self.d_s - 1)) != 0:
            raise ValueError(f"d_s must be a power of 2 and >= 2, got {self.d_s}")
        if self.d_e < 1:
            raise ValueError(f"d_e must be >= 1, got {self.d_e}")

    @property
    def d(self):
        return self.d_s * self.d_e

    @property
    def liouville(self):
        """Dimension of the joint Liouville space, D^2."""
        return self.d * self.d


def vectorize(rho):
    """Row-major vec: stacks rows, so vec(A X B) = (A kron B^T) vec(X)."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    return rho.reshape(-1).astype(complex)


def devectorize(v):
    v = np.asarray(v)
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"length {v.size} is not a perfect square")
    return v.reshape(d, d)


def left_mult(a):
    """Superoperator of X -> A X."""
    a = np.asarray(a, dtype=complex)
    return np.kron(a, np.eye(a.shape[0]))


def right_mult(b):
    """Superoperator of X -> X B."""
    b = np.asarray(b, dtype=complex)
    return np.kron(np.eye(b.shape[0]), b.T)


def sandwich(a, b):
    """Superoperator of X -> A X B."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex).T)


def hamiltonian_superop(h, tol=HERMITICITY_TOL):
    """-i[H, .] as a matrix on the vectorized operator space."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h, tol):
        raise ValueError("Hamiltonian is not Hermitian within tolerance")
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


@dataclass
class GkslSpec:
    """Hamiltonian plus a list of jump operators, all on one Hilbert space."""

    hamiltonian: np.ndarray
    jumps: list = field(default_factory=list)

    def __post_init__(self):
        self.hamiltonian = np.asarray(self.hamiltonian, dtype=complex)
        self.jumps = [np.asarray(l, dtype=complex) for l in self.jumps]
        d = self.hamiltonian.shape[0]
        if self.hamiltonian.shape != (d, d):
            raise ValueError("Hamiltonian must be square")
        if not is_hermitian(self.hamiltonian, HERMITICITY_TOL):
            raise ValueError("Hamiltonian is not Hermitian within tolerance")
        for l in self.jumps:
            if l.shape != (d, d):
                raise ValueError("jump operator dimension mismatch")

    @property
    def dim(self):
        return self.hamiltonian.shape[0]

    def effective_hamiltonian(self):
        """H - (i/2) sum L'L (non-Hermitian)."""
        h_eff = self.hamiltonian.astype(complex).copy()
        for l in self.jumps:
            h_eff -= 0.5j * (herm(l) @ l)
        return h_eff


def lindblad_superop(spec):
    """Vectorized GKSL generator for a :class:`GkslSpec`."""
    d = spec.dim
    eye = np.eye(d)
    gen = hamiltonian_superop(spec.hamiltonian)
    for l in spec.jumps:
        ll = herm(l) @ l
        gen += np.kron(l, l.conj()) - 0.5 * np.kron(ll, eye) - 0.5 * np.kron(eye, ll.T)
    return gen


@lru_cache(maxsize=None)
def _pauli_strings(d):
    """Hermitian Pauli-string basis of d x d matrices (d a power of 2),
    ordered with the identity first."""
    if d == 1:
        return tuple(m.copy() for m in PAULI_1[:1])
    n_qubits = d.bit_length() - 1
    mats = [np.array([[1]], dtype=complex)]
    for _ in range(n_qubits):
        mats = [np.kron(m, p) for m in mats for p in PAULI_2]
    # reorder so the all-identity string is index 0 (it already is)
    return tuple(mats)


def pauli_strings(d):
    """Unnormalized Hermitian Pauli strings on C^d, identity first."""
    if d < 1 or (d & (d - 1)) != 0:
        raise ValueError(f"dimension must be a power of 2, got {d}")
    return [m.copy() for m in _pauli_strings(d)]


@dataclass
class PauliLiouvilleBasis:
    """Orthonormal Hermitian basis p_(mu,mu') = (P_mu kron P_mu'*)/d_s of the
    system Liouville superoperator space.

    Index convention: nu = mu * d_s^2 + mu'; nu = 0 is the identity element
    1 / d_s.  ``norm_factor`` is tr(p_nu' p_nu) for the *unnormalized*
    products, i.e. d_s^2.
    """

    d_s: int

    def __post_init__(self):
        if self.d_s < 2 or (self.d_s & (self.d_s - 1)) != 0:
            raise ValueError(f"d_s must be a power of 2, got {self.d_s}")
        paulis = pauli_strings(self.d_s)
        self._paulis = paulis
        n = self.d_s**2
        elems = np.empty((n * n, n, n), dtype=complex)
        for mu, mup in product(range(n), range(n)):
            elems[mu * n + mup] = np.kron(paulis[mu], paulis[mup].conj()) / self.d_s
        self._elements = elems

    @property
    def size(self):
        return self.d_s**4

    @property
    def n_species(self):
        """Number of non-identity elements, d_s^4 - 1."""
        return self.size - 1

    @property
    def norm_factor(self):
        return float(self.d_s**2)

    def index(self, mu, mup):
        return mu * self.d_s**2 + mup

    def unindex(self, nu):
        return divmod(nu, self.d_s**2)

    def element(self, nu, normalized=True):
        e = self._elements[nu]
        return e if normalized else e * self.d_s

    def elements(self, normalized=True):
        return self._elements if normalized else self._elements * self.d_s

    def pauli(self, mu):
        return self._paulis[mu]


def expand_in_basis(g, basis):
    """Coefficients c_nu = tr(G p_nu) of a system superoperator in the
    normalized basis; sum_nu c_nu p_nu reproduces G exactly."""
    g = np.asarray(g, dtype=complex)
    n = basis.d_s**2
    if g.shape != (n, n):
        raise ValueError(f"superoperator shape {g.shape} does not match d_s={basis.d_s}")
    return np.einsum("kij,ji->k", basis.elements(), g)


def combine_from_basis(coeffs, basis):
    """Inverse of :func:`expand_in_basis`."""
    return np.tensordot(np.asarray(coeffs), basis.elements(), axes=(0, 0))


def extend_system_superop(g, dims):
    """Lift a superoperator on the system Liouville space to the joint SE
    Liouville space (acting as the identity on the environment).

    With row-major vec and the ordering H_s kron H_e, the joint index is
    (s e s' e'); the embedded operator is G on (s s') and identity on (e e').
    """
    g = np.asarray(g, dtype=complex)
    ds, de = dims.d_s, dims.d_e
    if g.shape != (ds * ds, ds * ds):
        raise ValueError("system superoperator has wrong dimension")
    g4 = g.reshape(ds, ds, ds, ds)  # (out-row, out-col, in-row, in-col)
    full = np.einsum("sutv,eg,fh->seuftgvh", g4, np.eye(de), np.eye(de))
    n = (ds * de) ** 2
    return np.ascontiguousarray(full.reshape(n, n))


def swap_superop_factors(d):
    """Permutation matrix exchanging the two Hilbert factors of a vectorized
    operator space, vec(X) -> vec(X^T)."""
    s = np.zeros((d * d, d * d))
    for a in range(d):
        for b in range(d):
            s[b * d + a, a * d + b] = 1.0
    return s


def transform_jump_basis(s, jumps):
    """Map jump operators under a change of field-species basis.

    For new field operators psi~_nu = sum_nu' S[nu, nu'] psi_nu', the jump
    matrices transform as R~_nu = sum_nu' (S^-1)[nu', nu] R_nu', which keeps
    sum_nu R_nu kron psi_nu' invariant.
    """
    s = np.asarray(s, dtype=complex)
    jumps = np.asarray(jumps, dtype=complex)
    if s.shape[0] != s.shape[1] or s.shape[0] != jumps.shape[0]:
        raise ValueError("basis-change matrix does not match the species count")
    if np.linalg.cond(s) > COND_CAP:
        raise ValueError("basis-change matrix is singular or too ill-conditioned")
    s_inv = np.linalg.inv(s)
    return np.einsum("mn,m...->n...", s_inv, jumps)


def instrument_track_transform(s, c_tracks):
    """Transform instrument species coefficients contravariantly to
    :func:`transform_jump_basis` so Born contractions are invariant.

    If the process jumps change by S^-1 (transposed contraction), the dual
    coefficient tracks c_nu must change by c~ = conj(S) c.
    """
    s = np.asarray(s, dtype=complex)
    c_tracks = np.asarray(c_tracks, dtype=complex)
    return np.einsum("mn,n...->m...", s.conj(), c_tracks)
