"""Shared fixtures and brute-force oracles used across the test suite."""

import itertools

import numpy as np
import pytest

from contproc.cmps import CmpsParams, TimeGrid


def rng_for(seed):
    return np.random.default_rng(seed)


def random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = 0.5 * (a + a.conj().T)
    return scale * h / np.linalg.norm(h, 2)


def random_density(rng, d, rank=None):
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_unitary(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_cmps(rng, grid, bond, n_species, scale=0.4, rank1=True):
    q = scale * (rng.normal(size=(bond, bond)) + 1j * rng.normal(size=(bond, bond)))
    r = scale * (rng.normal(size=(n_species, bond, bond))
                 + 1j * rng.normal(size=(n_species, bond, bond)))
    ket = rng.normal(size=bond) + 1j * rng.normal(size=bond)
    bra = rng.normal(size=bond) + 1j * rng.normal(size=bond)
    ket /= np.linalg.norm(ket)
    bra /= np.linalg.norm(bra)
    b = np.outer(ket, bra.conj())
    return CmpsParams(grid, q, r, b, b_factors=(ket, bra) if rank1 else None)


# ---------------------------------------------------------------------------
# discretized-Fock brute force: enumerate particle configurations on the grid
# ---------------------------------------------------------------------------


def fock_strings(n_steps, n_species, max_particles):
    """All particle configurations with at most one particle per site and at
    most max_particles total: list of ((site, species), ...) tuples."""
    out = [()]
    for total in range(1, max_particles + 1):
        for sites in itertools.combinations(range(n_steps), total):
            for specs in itertools.product(range(n_species), repeat=total):
                out.append(tuple(zip(sites, specs)))
    return out


def _half_exps(params):
    import scipy.linalg as sla

    n = params.grid.n_steps
    return [sla.expm(0.5 * params.grid.dt * params.q_at(s)) for s in range(n)]


def string_matrix(params, config, half_exps=None):
    """Matrix of the discretized-MPS string for one particle configuration:
    per site, exp(dt Q), with a midpoint (sqrt(dt) R_nu) insertion at
    occupied sites.  Later sites multiply from the left."""
    n = params.grid.n_steps
    sdt = np.sqrt(params.grid.dt)
    occupied = dict(config)
    halves = half_exps or _half_exps(params)
    m = np.eye(params.bond, dtype=complex)
    for site in range(n):
        if site in occupied:
            m = halves[site] @ (sdt * params.r_at(site)[occupied[site]]) @ halves[site] @ m
        else:
            m = params.step_exp(site) @ m
    return m


def fock_overlap_oracle(params_a, params_b, max_particles=3):
    """<Phi_a|Phi_b> by explicit summation over particle configurations of
    the discretized MPS.  Exact as dt -> 0 and couplings are weak."""
    n = params_a.grid.n_steps
    ha, hb = _half_exps(params_a), _half_exps(params_b)
    total = 0.0 + 0.0j
    for config in fock_strings(n, params_a.n_species, max_particles):
        amp_a = np.trace(params_a.b @ string_matrix(params_a, config, ha))
        amp_b = np.trace(params_b.b @ string_matrix(params_b, config, hb))
        total += np.conj(amp_a) * amp_b
    return total


def segment_grams(params, cut_step, max_particles=3):
    """Brute-force Gram matrices of the [0, cut) and (cut, T] segment states.

    Past segment vectors |psi_a> have amplitudes <a| string |ket_B>; future
    segment vectors |phi_b> have amplitudes <bra_B| string |b>.  Returns
    (gram_past, gram_future) with gram[a, b] = <v_a | v_b>.
    """
    ket, bra = params.b_factors
    n = params.grid.n_steps
    d = params.bond
    sdt = np.sqrt(params.grid.dt)
    halves = _half_exps(params)
    g_past = np.zeros((d, d), dtype=complex)
    for config in fock_strings(cut_step, params.n_species, max_particles):
        m = np.eye(d, dtype=complex)
        occupied = dict(config)
        for site in range(cut_step):
            if site in occupied:
                m = halves[site] @ (sdt * params.r_at(site)[occupied[site]]) @ halves[site] @ m
            else:
                m = params.step_exp(site) @ m
        v = m @ ket
        g_past += np.outer(v.conj(), v)
    g_future = np.zeros((d, d), dtype=complex)
    for config in fock_strings(n - cut_step, params.n_species, max_particles):
        m = np.eye(d, dtype=complex)
        occupied = dict((site + cut_step, nu) for site, nu in config)
        for site in range(cut_step, n):
            if site in occupied:
                m = halves[site] @ (sdt * params.r_at(site)[occupied[site]]) @ halves[site] @ m
            else:
                m = params.step_exp(site) @ m
        w = bra.conj() @ m
        g_future += np.outer(w.conj(), w)
    return g_past, g_future


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
