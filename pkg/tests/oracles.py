"""Independent full-Hilbert-space constructions used as test oracles."""

from functools import reduce

import numpy as np

SZ = np.diag([-0.5, 0.5])  # basis (|0>, |1>) = (down, up)
SP = np.array([[0.0, 0.0], [1.0, 0.0]])  # |0> -> |1>
SM = SP.T
PZ = np.diag([1.0, -1.0])
KIND = {"Sz": SZ, "S+": SP, "S-": SM, "Z": PZ}


def site_op(n, site, op):
    """Operator on ``site`` with state index sum_i b_i 2^i."""
    mats = [op if s == site else np.eye(2) for s in range(n - 1, -1, -1)]
    return reduce(np.kron, mats)


def heisenberg_full(n, j1, j2, periodic):
    H = np.zeros((2 ** n, 2 ** n))
    for d, J in ((1, j1), (2, j2)):
        pairs = [(i, (i + d) % n) for i in range(n)] if periodic else [(i, i + d) for i in range(n - d)]
        for i, j in pairs:
            for a, b, c in ((SZ, SZ, 1.0), (SP, SM, 0.5), (SM, SP, 0.5)):
                H = H + J * c * site_op(n, i, a) @ site_op(n, j, b)
    return H


def protocol_unitary(n, angles, cz_pairs=()):
    """Diagonal of prod Rz(theta_j) * prod CZ, Rz(t) = diag(e^{-it/2}, e^{it/2})."""
    idx = np.arange(2 ** n)
    bits = (idx[:, None] >> np.arange(n)) & 1
    phase = np.exp(1j * ((2 * bits - 1) * np.asarray(angles, dtype=float)).sum(axis=1) / 2)
    for a, b in cz_pairs:
        phase = phase * np.where(bits[:, a] & bits[:, b], -1.0, 1.0)
    return phase


def sector_indices(n, n_up):
    return np.array([c for c in range(2 ** n) if bin(c).count("1") == n_up])
