"""Vibrational eigenstates: imaginary-time relaxation, dense DVR and a
spherical-harmonic reference solver for the Euclidean kinetic form."""

import logging

import numpy as np
import psutil
from scipy.linalg import eigh
from scipy.special import gammaln, lpmv

from laserctl.errors import ConvergenceError, MemoryGuardError, SchemeError
from laserctl.grid import expectation, fourier_kinetic_matrix, parity_of, reflect_phi_array, sine_kinetic_matrix
from laserctl.models import EigenLabel, EigenPair, Parity, Well, WaveFunction
from laserctl.propagation import apply_h0_array, imaginary_step_array

logger = logging.getLogger(__name__)

# Gap below which eigenvectors are rotated into parity-pure combinations (hartree).
DEGENERACY_WINDOW = 1e-5


def _count_sign_changes(values, threshold=0.1):
    values = np.asarray(values, dtype=float)
    scale = np.max(np.abs(values), initial=0.0)
    if scale == 0.0:
        return 0
    significant = values[np.abs(values) > threshold * scale]
    return int(np.sum(np.sign(significant[1:]) != np.sign(significant[:-1])))


def _fix_gauge(amplitudes, parity, grid):
    """Real amplitudes with a deterministic sign.

    Even states are positive at their maximum; odd states are positive at their
    maximum on the phi < 0 side, so (|n+> + |n->)/sqrt(2) localizes at phi < 0.
    """
    a = amplitudes
    peak = a.flat[np.argmax(np.abs(a))]
    if abs(peak) > 0.0:
        a = a * (abs(peak) / peak)
    if parity is Parity.ODD:
        left = a[:, grid.phi < 0.0]
        anchor = left.flat[np.argmax(np.abs(left))]
    else:
        anchor = a.flat[np.argmax(np.abs(a))]
    if anchor.real < 0.0:
        a = -a
    return a


def label_state(state, switch_theta=np.pi / 2):
    grid = state.grid
    parity = parity_of(state)
    norm = state.norm()
    theta_avg = expectation(WaveFunction(grid, state.amplitudes / norm), lambda t, p: t)
    well = Well.DOUBLE if theta_avg < switch_theta else Well.R
    a = state.amplitudes.real
    density = np.abs(state.amplitudes) ** 2
    row = int(np.argmax(density.sum(axis=1)))
    column = int(np.argmax(density.sum(axis=0)))
    if well is Well.DOUBLE:
        n_phi = _count_sign_changes(a[row, grid.phi > 0.0])
    else:
        n_phi = _count_sign_changes(a[row])
    n_theta = _count_sign_changes(a[:, column])
    return EigenLabel(well, parity, n_phi, n_theta)


def label_states(pairs):
    for pair in pairs:
        pair.label = label_state(pair.state)
    return pairs


def find_state(pairs, ket):
    """First eigenpair whose label reads ``ket`` (e.g. '0+,0', '|1-,0>', '0,0_R')."""
    key = ket.strip().lstrip('|').rstrip('>')
    for pair in pairs:
        if pair.label.ket == key:
            return pair
    available = ', '.join(p.label.ket for p in pairs)
    raise SchemeError(f'no eigenstate labelled |{key}> among: {available}')


def _finish(energies, vectors, plan, residuals=None):
    """Wrap raw eigenvectors (rows, grid-normalized) into gauge-fixed, labelled pairs."""
    grid = plan.grid
    pairs = []
    for i, (energy, vector) in enumerate(zip(energies, vectors)):
        state = WaveFunction(grid, vector.reshape(grid.shape))
        parity = parity_of(state)
        state = WaveFunction(grid, _fix_gauge(state.amplitudes, parity, grid))
        residual = residuals[i] if residuals is not None else _residual(state.amplitudes, energy, plan)
        pairs.append(EigenPair(float(energy), state, label_state(state), float(residual)))
    return pairs


def _residual(a, energy, plan):
    r = apply_h0_array(a, plan) - energy * a
    return float(np.sqrt(np.sum(np.abs(r) ** 2) * plan.grid.weight))


def _resolve_parity(energies, vectors, grid):
    """Rotate near-degenerate clusters into eigenvectors of the phi reflection."""
    vectors = vectors.copy()
    start = 0
    while start < len(energies):
        stop = start + 1
        while stop < len(energies) and energies[stop] - energies[stop - 1] < DEGENERACY_WINDOW:
            stop += 1
        if stop - start > 1:
            block = vectors[start:stop]
            reflected = reflect_phi_array(block.reshape((-1,) + grid.shape)).reshape(block.shape)
            overlap = block.conj() @ reflected.T
            _, rotation = np.linalg.eigh(0.5 * (overlap + overlap.conj().T))
            vectors[start:stop] = rotation.T @ block
        start = stop
    return vectors


def dvr_diagonalize(plan, count, max_dim=4096, memory_fraction=0.5):
    """Lowest ``count`` eigenpairs of the dense grid Hamiltonian."""
    grid = plan.grid
    dim = grid.n_theta * grid.n_phi
    needed = 3 * dim ** 2 * 8
    available = psutil.virtual_memory().available
    if dim > max_dim or needed > memory_fraction * available:
        raise MemoryGuardError(
            f'dense Hamiltonian of dimension {dim} needs ~{needed / 1e9:.2f} GB '
            f'(limit {max_dim} basis functions, {available / 1e9:.2f} GB free); use a coarser grid')
    if not 1 <= count <= dim:
        raise SchemeError(f'cannot request {count} eigenpairs from a {dim}-dimensional basis')

    kinetic = plan.kinetic
    inv_sin2 = 1.0 / np.sin(grid.theta) ** 2
    h = np.kron(sine_kinetic_matrix(grid.n_theta, kinetic.I_theta), np.eye(grid.n_phi))
    h += np.kron(np.diag(inv_sin2 / kinetic.I_phi), fourier_kinetic_matrix(grid.n_phi, 1.0))
    h[np.diag_indices(dim)] += plan.v_total.ravel()

    logger.info(f"Diagonalizing dense Hamiltonian of dimension {dim}")
    energies, vectors = eigh(h, subset_by_index=[0, count - 1])
    vectors = vectors.T / np.sqrt(grid.weight)
    vectors = _resolve_parity(energies, vectors, grid)
    energies = np.array([
        float(v @ (h @ v)) * grid.weight for v in vectors
    ])
    order = np.argsort(energies)
    return _finish(energies[order], vectors[order], plan)


class _ParitySector:
    """A block of real trial vectors relaxed within one phi-reflection sector."""

    def __init__(self, plan, sign, size, dtau, rng):
        self.plan = plan
        self.sign = sign
        self.dtau = dtau
        self.x = self._project(rng.standard_normal((size,) + plan.grid.shape))
        self.energies = np.full(size, np.inf)
        self.previous = np.full(size, np.inf)
        self.residuals = np.full(size, np.inf)

    def _project(self, x):
        return 0.5 * (x + self.sign * reflect_phi_array(x))

    def _orthonormalize(self):
        weight = self.plan.grid.weight
        flat = self.x.reshape(len(self.x), -1)
        q, _ = np.linalg.qr(flat.T)
        self.x = (q.T / np.sqrt(weight)).reshape(self.x.shape)

    def sweep(self, steps):
        for _ in range(steps):
            self.x = imaginary_step_array(self.x, self.plan, self.dtau)
        self.x = self._project(self.x)
        self._orthonormalize()

        weight = self.plan.grid.weight
        hx = apply_h0_array(self.x, self.plan)
        flat, hflat = self.x.reshape(len(self.x), -1), hx.reshape(len(self.x), -1)
        sub = flat @ hflat.T * weight
        values, rotation = np.linalg.eigh(0.5 * (sub + sub.T))
        flat, hflat = rotation.T @ flat, rotation.T @ hflat
        self.x = flat.reshape(self.x.shape)

        self.previous, self.energies = self.energies, values
        self.residuals = np.sqrt(np.sum((hflat - values[:, None] * flat) ** 2, axis=1) * weight)


def relax_eigenstates(plan, count, dtau=10.0, tol_energy=1e-9, tol_residual=1e-6,
                      max_sweeps=2000, steps_per_sweep=10, guard=4, min_dtau=0.05, seed=0):
    """Lowest ``count`` eigenpairs by imaginary-time relaxation.

    Each phi-reflection sector is relaxed separately (so the tunneling doublets
    resolve), with block Gram-Schmidt and a Rayleigh-Ritz rotation after every
    sweep. A sector whose energies stagnate above the residual tolerance has its
    step halved.
    """
    if count < 1:
        raise SchemeError(f'count must be positive, got {count}')
    rng = np.random.default_rng(seed)
    sectors = [_ParitySector(plan, sign, count + guard, dtau, rng) for sign in (1, -1)]

    for sweep in range(1, max_sweeps + 1):
        for sector in sectors:
            sector.sweep(steps_per_sweep)

        entries = sorted(
            (sector.energies[i], s, i) for s, sector in enumerate(sectors) for i in range(count))[:count]
        converged = True
        for s, sector in enumerate(sectors):
            needed = [i for _, t, i in entries if t == s]
            if not needed:
                continue
            top = max(needed) + 1
            delta = np.max(np.abs(sector.energies[:top] - sector.previous[:top]))
            residual = np.max(sector.residuals[:top])
            if delta < tol_energy and residual < tol_residual:
                continue
            converged = False
            if delta < tol_energy and sector.dtau > min_dtau:
                sector.dtau *= 0.5
                logger.debug(f"Parity sector {sector.sign:+d}: energies stagnated with residual "
                             f"{residual:.2e}; halving imaginary step to {sector.dtau:.3g}")
        if converged:
            logger.info(f"Relaxed {count} eigenstates in {sweep} sweeps")
            break
    else:
        partial = _collect(entries, sectors, plan, only_converged=(tol_energy, tol_residual))
        raise ConvergenceError(f'imaginary-time relaxation did not converge in {max_sweeps} sweeps',
                               partial=partial)
    return _collect(entries, sectors, plan)


def _collect(entries, sectors, plan, only_converged=None):
    energies, vectors, residuals = [], [], []
    for energy, s, i in entries:
        sector = sectors[s]
        if only_converged is not None:
            tol_energy, tol_residual = only_converged
            if abs(sector.energies[i] - sector.previous[i]) >= tol_energy or sector.residuals[i] >= tol_residual:
                continue
        energies.append(energy)
        vectors.append(sector.x[i].ravel())
        residuals.append(sector.residuals[i])
    if not energies:
        return []
    return _finish(np.array(energies), np.array(vectors), plan, residuals)


def _normalized_legendre(l_max, m_max, x):
    """Table P[m, l, q] of associated Legendre functions normalized on [-1, 1]."""
    table = np.zeros((m_max + 1, l_max + 1, x.size))
    for m in range(m_max + 1):
        for l in range(m, l_max + 1):
            scale = np.sqrt((2 * l + 1) / 2.0) * np.exp(0.5 * (gammaln(l - m + 1) - gammaln(l + m + 1)))
            table[m, l] = scale * lpmv(m, l, x)
    return table


def euclidean_reference_levels(kinetic, potential, count, l_max=48, m_max=8, n_quad=None, n_phi_quad=None):
    """Lowest ``count`` levels of the Euclidean-convention Hamiltonian.

    The basis is P_l^|m|(cos theta) exp(i m phi) with the sin(theta) measure, in
    which T = L^2/(2 I_theta) + (1/I_phi - 1/I_theta) m^2 / (2 sin^2 theta).
    Matrix elements use Gauss-Legendre quadrature in cos(theta).
    """
    n_quad = n_quad or l_max + 24
    n_phi_quad = n_phi_quad or 4 * m_max + 8
    x, weights = np.polynomial.legendre.leggauss(n_quad)
    theta = np.arccos(x)
    phi = 2.0 * np.pi * np.arange(n_phi_quad) / n_phi_quad
    v = np.asarray(potential(theta[:, None], phi[None, :]), dtype=float)
    v_hat = np.fft.fft(v, axis=1) / n_phi_quad

    legendre = _normalized_legendre(l_max, m_max, x)
    basis = [(l, m) for m in range(-m_max, m_max + 1) for l in range(abs(m), l_max + 1)]
    size = len(basis)
    h = np.zeros((size, size), dtype=np.complex128)
    coupling = 0.5 * (1.0 / kinetic.I_phi - 1.0 / kinetic.I_theta)
    inv_sin2 = 1.0 / (1.0 - x ** 2)
    for a, (l1, m1) in enumerate(basis):
        p1 = legendre[abs(m1), l1]
        h[a, a] += l1 * (l1 + 1) / (2.0 * kinetic.I_theta)
        for b, (l2, m2) in enumerate(basis):
            if b < a:
                continue
            p2 = legendre[abs(m2), l2]
            element = np.sum(weights * p1 * p2 * v_hat[:, (m1 - m2) % n_phi_quad])
            if m1 == m2 and m1 != 0:
                element += coupling * m1 ** 2 * np.sum(weights * p1 * p2 * inv_sin2)
            h[a, b] += element
            if b != a:
                h[b, a] += np.conj(element)
    return eigh(h, eigvals_only=True, subset_by_index=[0, count - 1])
