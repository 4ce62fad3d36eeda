import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jcfeedback.errors import ConfigError
from jcfeedback.model import (
    ModelParams,
    coherent_amplitudes,
    destroy,
    step_generator,
    step_unitary,
    system_hamiltonian,
    system_operators,
    system_state,
)


def test_defaults_and_derived():
    p = ModelParams(tau=0.5, dt=0.1)
    assert p.delay_bins == 5
    assert p.d_sys == 2 * (p.n_fock + 1)
    assert not p.has_feedback
    assert p.replace(kappa2=0.1).has_feedback


def test_non_integer_delay_rejected_with_values():
    with pytest.raises(ConfigError, match="tau=9.0.*dt=0.4"):
        ModelParams(g=0.2, tau=9.0, dt=0.4)


@pytest.mark.parametrize("field,value", [("kappa1", -0.1), ("dt", 0.0), ("g", float("nan")), ("n_fock", 0), ("d_bin", 1)])
def test_invalid_fields(field, value):
    with pytest.raises(ConfigError):
        ModelParams(**{"tau": 1.0, "dt": 0.5, field: value})


@given(st.floats(-20, 20))
def test_phase_folded(phi):
    p = ModelParams(phi=phi, tau=1.0, dt=0.5)
    assert 0 <= p.phi < 2 * math.pi
    assert np.exp(1j * p.phi) == pytest.approx(np.exp(1j * phi), abs=1e-12)


def test_svd_from_dict():
    p = ModelParams(svd={"cutoff": 1e-6, "max_bond": 8}, tau=1, dt=1)
    assert p.svd.max_bond == 8
    assert p.as_dict()["svd"] == {"cutoff": 1e-6, "max_bond": 8}


def test_operator_algebra():
    o = system_operators(4)
    a, ad, sm, sp = o["a"], o["adag"], o["sm"], o["sp"]
    comm = a @ ad - ad @ a
    # [a, a^+] = 1 below the cutoff
    assert np.allclose(np.diag(comm)[:4], 1.0)
    assert np.allclose(a @ sm, sm @ a)
    assert np.allclose(sp @ sm + sm @ sp, np.eye(10))
    assert np.allclose(o["sz"], sp @ sm - sm @ sp)
    with pytest.raises(ValueError):
        o["a"][0, 0] = 1.0


def test_system_state_indexing():
    psi = system_state(3, "e", 2)
    assert psi[1 * 4 + 2] == 1
    c = system_state(30, "g", ("coherent", 2.0))
    n = np.real(c.conj() @ system_operators(30)["n"] @ c)
    assert n == pytest.approx(4.0, rel=1e-8)
    with pytest.raises(ValueError):
        system_state(3, "g", 5)


def test_coherent_amplitudes_poisson():
    amps = coherent_amplitudes(np.sqrt(6), 40)
    k = np.arange(41)
    pois = np.exp(-6 + k * np.log(6.0) - np.array([math.lgamma(x + 1) for x in k]))
    assert np.allclose(np.abs(amps) ** 2, pois)


def test_hamiltonian_hermitian_and_jc_doublet():
    p = ModelParams(g=0.7, drive=0.3, delta=0.2, n_fock=5, tau=1, dt=1)
    h = system_hamiltonian(p)
    assert np.allclose(h, h.conj().T)
    # one-excitation block without drive: eigenvalues Delta +- g
    h0 = system_hamiltonian(p.replace(drive=0.0))
    idx = [0 * 6 + 1, 1 * 6 + 0]
    e = np.linalg.eigvalsh(h0[np.ix_(idx, idx)])
    assert np.allclose(e, [0.2 - 0.7, 0.2 + 0.7])


@pytest.mark.parametrize("delayed", [True, False])
def test_generator_antihermitian_and_unitary(delayed):
    p = ModelParams(g=1, drive=0.2, kappa1=0.3, kappa2=0.2, phi=1.1, tau=0.1, dt=0.05, n_fock=2, d_bin=2)
    m = step_generator(p, include_delayed=delayed)
    assert np.allclose(m, -m.conj().T)
    u = step_unitary(p, include_delayed=delayed)
    assert np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-12)


def test_series_converges_to_exact():
    p = ModelParams(g=1, kappa1=0.5, kappa2=0.5, tau=0.02, dt=0.01, n_fock=2, d_bin=3)
    exact = step_unitary(p)
    errs = [np.linalg.norm(step_unitary(p, "series", order) - exact) for order in (1, 2, 3, 4)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3
    with pytest.raises(ValueError):
        step_unitary(p, "pade")


def test_emission_goes_to_the_right_bins():
    # kron order (new, system, delayed): a cavity photon leaks into the new bin at
    # rate 2 kappa1 dt and into the delayed bin at 2 kappa2 dt
    p = ModelParams(g=0, kappa1=0.3, kappa2=0.1, tau=0.01, dt=0.01, n_fock=1, d_bin=2)
    u = step_unitary(p)
    vac = np.array([1, 0], complex)
    psi = np.kron(np.kron(vac, system_state(1, "g", 1)), vac)
    out = (u @ psi).reshape(2, 4, 2)
    p_new = np.sum(np.abs(out[1]) ** 2)
    p_old = np.sum(np.abs(out[:, :, 1]) ** 2)
    assert p_new == pytest.approx(2 * 0.3 * 0.01, rel=1e-2)
    assert p_old == pytest.approx(2 * 0.1 * 0.01, rel=1e-2)


def test_destroy():
    b = destroy(3)
    assert np.allclose(b.conj().T @ b, np.diag([0, 1, 2]))


def test_two_site_gate_is_the_three_site_gate_without_loop():
    # with kappa2 = 0 the delayed bin is untouched, so the Markov path is exact
    p = ModelParams(g=0.7, drive=0.3, kappa1=0.4, tau=0.05, dt=0.05, phi=1.3, n_fock=3, d_bin=3)
    u3 = step_unitary(p)
    u2 = step_unitary(p, include_delayed=False)
    assert np.allclose(u3, np.kron(u2, np.eye(3)), atol=1e-13)
