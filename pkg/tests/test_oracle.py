import math

import numpy as np
import pytest

from jcfeedback.errors import NumericalError
from jcfeedback.model import ModelParams, coherent_amplitudes, system_hamiltonian, system_state
from jcfeedback.oracle import (
    LeakageWarning,
    closed_evolve,
    liouvillian,
    lindblad_evolve,
    lindblad_rhs,
    regression_correlations,
    steady_state,
)


def _rho(psi):
    return np.outer(psi, psi.conj())


def test_closed_vacuum_rabi():
    p = ModelParams(g=0.7, n_fock=3)
    t = np.linspace(0, 10, 201)
    out = closed_evolve(system_hamiltonian(p), system_state(3, "e", 0), t, 3)
    assert np.allclose(out["tls_population"].values, np.cos(p.g * t) ** 2, atol=1e-12)
    assert np.allclose(out["cavity_photons"].values, np.sin(p.g * t) ** 2, atol=1e-12)


def test_closed_energy_conserved_and_leakage_warning():
    p = ModelParams(g=1.0, drive=0.3, delta=0.2, n_fock=6)
    psi0 = np.kron([0.0, 1.0], coherent_amplitudes(1.2, 6))
    psi0 /= np.linalg.norm(psi0)
    t = np.linspace(0, 20, 101)
    with pytest.warns(LeakageWarning):
        out = closed_evolve(system_hamiltonian(p), psi0, t, 6)
    e = out["energy"].values
    assert np.max(np.abs(e - e[0])) < 1e-10
    with pytest.raises(ValueError, match="Hermitian"):
        closed_evolve(np.triu(np.ones((4, 4))), np.eye(4)[0], t, 1)
    with pytest.raises(ValueError, match="normalized"):
        closed_evolve(np.eye(4), np.ones(4), t, 1)


def test_lindblad_photon_decay():
    p = ModelParams(g=0.0, kappa1=0.3, kappa2=0.2, tau=0.1, dt=0.1, n_fock=3)
    t = np.linspace(0, 5, 51)
    out = lindblad_evolve(p, _rho(system_state(3, "g", 1)), t)
    # amplitude rate kappa1 + kappa2: photon number decays at twice that
    assert np.allclose(out["cavity_photons"].values, np.exp(-2 * 0.5 * t), atol=1e-8)


def test_lindblad_matches_closed_without_loss():
    p = ModelParams(g=1.0, drive=0.2, n_fock=9)
    psi0 = system_state(9, "e", 1)
    t = np.linspace(0, 6, 61)
    a = lindblad_evolve(p, _rho(psi0), t)
    b = closed_evolve(system_hamiltonian(p), psi0, t, 9)
    for key in ("tls_population", "cavity_photons"):
        assert np.max(np.abs(a[key].values - b[key].values)) < 1e-8


def test_lindblad_keeps_trace_and_positivity():
    p = ModelParams(g=1.0, drive=0.5, kappa1=0.2, kappa2=0.1, tau=0.1, dt=0.1, n_fock=8)
    t = np.linspace(0, 8, 41)
    out, rho = lindblad_evolve(p, _rho(system_state(8, "g", 0)), t, return_rho=True)
    assert abs(np.trace(rho) - 1) < 1e-9
    assert np.min(np.linalg.eigvalsh(rho)) > -1e-10
    assert np.all((out["tls_population"].values >= -1e-12) & (out["tls_population"].values <= 1 + 1e-12))


def test_lindblad_input_validation_and_step_failure():
    p = ModelParams(g=1.0, kappa1=0.1, tau=0.1, dt=0.1, n_fock=2)
    rho = _rho(system_state(2))
    with pytest.raises(ValueError, match="unit trace"):
        lindblad_evolve(p, 2 * rho, [0, 1])
    with pytest.raises(ValueError, match="increasing"):
        lindblad_evolve(p, rho, [0, 1, 1])
    # a step far beyond the RK4 stability region cannot be rescued by five halvings
    with pytest.raises(NumericalError, match="substeps"):
        lindblad_evolve(ModelParams(g=1.0, kappa1=50.0, tau=0.1, dt=0.1, n_fock=2), _rho(system_state(2, "e", 1)),
                        [0, 1000.0], max_step=1000.0)


def test_rhs_matches_liouvillian():
    p = ModelParams(g=0.8, drive=0.3, kappa1=0.2, kappa2=0.05, delta=0.1, tau=0.1, dt=0.1, n_fock=3)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = x @ x.conj().T
    rho /= np.trace(rho)
    lhs = lindblad_rhs(p)(rho).reshape(-1)
    rhs = liouvillian(p) @ rho.reshape(-1)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_steady_state_is_fixed_point():
    p = ModelParams(g=0.2, drive=0.01, kappa1=0.1225, tau=0.1, dt=0.1, n_fock=4)
    rho = steady_state(p)
    assert abs(np.trace(rho) - 1) < 1e-12
    assert np.linalg.norm(liouvillian(p) @ rho.reshape(-1)) < 1e-10
    t = np.linspace(0, 300, 31)
    out = lindblad_evolve(p, _rho(system_state(4)), t)
    n_ss = np.real(np.trace(np.diag(np.tile(np.arange(5), 2)) @ rho))
    assert out["cavity_photons"].values[-1] == pytest.approx(n_ss, rel=1e-4)


def test_regression_limits():
    p = ModelParams(g=0.2, drive=0.01, kappa1=0.1225, tau=0.1, dt=0.1, n_fock=4)
    lags = 0.5 * np.arange(600)
    g1 = regression_correlations(p, "g1", lags)
    g2 = regression_correlations(p, "g2", lags)
    assert g1.values[0] == 1.0
    # the coherent part dominates at long lag
    assert abs(g1.values[-1]) == pytest.approx(1.0, abs=0.05)
    assert g2.values[-1] == pytest.approx(1.0, abs=1e-4)
    # weakly driven JC output is antibunched
    assert g2.values[0] < 1.0
    with pytest.raises(ValueError):
        regression_correlations(p, "g3", lags)
    with pytest.raises(ValueError, match="uniform"):
        regression_correlations(p, "g1", [0.0, 1.0, 3.0])


def test_regression_undefined_without_photons():
    p = ModelParams(g=1.0, kappa1=0.1, tau=0.1, dt=0.1, n_fock=2)
    with pytest.raises(NumericalError, match="no photons"):
        regression_correlations(p, "g1", [0.0, 0.1])
