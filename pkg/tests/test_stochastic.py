import math

import numpy as np
import pytest

from snls_lab.diagnostics import brownian_increments
from snls_lab.flows import FlowParams, NLSStepper, evolve, nls_step
from snls_lab.grid import ComplexField, gaussian, lp_norm, make_grid, normalized
from snls_lab.stochastic import (BrownianPath, ItoSNLSStepper, NoiseSpec, SNLSStepper,
                                 sample_path, snls_step, stochastic_convolution_increment)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 64.0, 256)


def test_sample_path_reproducible_and_shaped():
    a = sample_path(7, 0.01, 1.0)
    b = sample_path(7, 0.01, 1.0)
    assert np.array_equal(a.increments, b.increments)
    assert a.n_steps == 100
    assert a.cumulative[0] == 0.0 and a.cumulative.size == 101
    assert not np.array_equal(a.increments, sample_path(7, 0.01, 1.0, stream=1).increments)
    assert sample_path(1, 0.3, 1.0).n_steps == 4


def test_sample_path_preconditions():
    with pytest.raises(ValueError):
        sample_path(0, 0.1, 0.05)
    with pytest.raises(ValueError):
        sample_path(0, 0.0, 1.0)
    with pytest.raises(IndexError):
        sample_path(0, 0.1, 1.0).increment(10)


def test_brownian_statistics():
    P, n, T = 4096, 100, 1.0
    dB = brownian_increments(11, P, n, T / n)
    B1 = dB.sum(axis=1)
    # mean within 3 standard errors of 0
    assert abs(B1.mean()) <= 3 * math.sqrt(T / P)
    # sample variance: chi-square with P-1 dof, standard error sqrt(2/(P-1))
    assert abs(B1.var(ddof=1) - T) <= 3 * T * math.sqrt(2 / (P - 1))
    # quadratic variation sum (dB)^2 has mean T and variance 2 T^2 / n per path
    qv = np.sum(dB**2, axis=1)
    assert abs(qv.mean() - T) <= 3 * T * math.sqrt(2 / n) / math.sqrt(P)


def test_coarsen_preserves_path():
    p = sample_path(3, 0.001, 1.0)
    c = p.coarsen(4)
    assert c.dt == pytest.approx(0.004)
    assert np.allclose(c.cumulative, p.cumulative[::4], atol=1e-14)
    with pytest.raises(ValueError):
        p.coarsen(3)


def test_snls_step_reductions(grid):
    params = FlowParams(grid, 0.01)
    u = normalized(gaussian(grid, 1.0), 1.0)
    noise = NoiseSpec.gaussian(grid, 1.0, 1.0, 0.1)
    flat = BrownianPath(0, 0.01, np.zeros(10))
    assert lp_norm(snls_step(u, params, noise, flat, 3) - nls_step(u, params, 0.03)) <= 1e-12
    silent = NoiseSpec.gaussian(grid, 0.0, 1.0, 0.1)
    path = sample_path(0, 0.01, 0.1)
    assert np.array_equal(snls_step(u, params, silent, path, 2).values, nls_step(u, params, 0.02).values)


def test_zero_noise_reproduces_deterministic_run_bitwise(grid):
    u0 = normalized(gaussian(grid, 1.0), 1.0)
    params = FlowParams(grid, 0.01)
    silent = NoiseSpec.gaussian(grid, 0.0, 1.0, 0.1)
    a = evolve(u0, SNLSStepper(params, silent, sample_path(0, 0.01, 1.0)), 1.0, convolution=False)
    b = evolve(u0, NLSStepper(params), 1.0)
    assert np.array_equal(a.fields[-1], b.fields[-1])


def test_noise_phase_preserves_modulus(grid):
    params = FlowParams(grid, 0.01)
    u = normalized(gaussian(grid, 1.0), 1.0)
    noise = NoiseSpec.gaussian(grid, 3.0, 1.0, 0.0)
    path = BrownianPath(0, 0.01, np.array([0.4]))
    out = snls_step(u, params, noise, path, 0)
    assert out.mass == pytest.approx(u.mass, rel=1e-13)


def test_convolution_increment_examples(grid):
    noise = NoiseSpec.gaussian(grid, 1.0, 1.0, 0.0)
    c = ComplexField(grid, np.full(grid.shape, 0.5 + 0.5j))
    path = BrownianPath(0, 0.01, np.array([0.0, 0.2]))
    assert np.all(stochastic_convolution_increment(c, noise, path, 0).values == 0)
    inc = stochastic_convolution_increment(c, noise, path, 1)
    assert np.allclose(inc.values, c.values * noise.V * 0.2, atol=1e-15)
    silent = NoiseSpec.gaussian(grid, 0.0, 1.0, 0.0)
    assert np.all(stochastic_convolution_increment(c, silent, path, 1).values == 0)


def test_convolution_increment_uses_left_point_envelope(grid):
    noise = NoiseSpec.gaussian(grid, 1.0, 1.0, 1.0)
    c = ComplexField(grid, np.ones(grid.shape, dtype=complex))
    path = BrownianPath(0, 0.5, np.array([1.0, 1.0, 1.0]))
    inc = stochastic_convolution_increment(c, noise, path, 2)
    assert np.allclose(inc.values, noise.V / math.sqrt(2.0), atol=1e-15)


def test_pathwise_mass_conservation(grid):
    u0 = normalized(gaussian(grid, 1.0), 1.0)
    noise = NoiseSpec.gaussian(grid, 1.0, 1.0, 0.1)
    path = sample_path(5, 0.005, 10.0)
    rec = evolve(u0, SNLSStepper(FlowParams(grid, 0.005), noise, path), 10.0,
                 [1.0 * k for k in range(1, 11)], convolution=False)
    m = np.array(rec.mass)
    assert np.max(np.abs(np.sqrt(m) - math.sqrt(m[0]))) <= 1e-10 * math.sqrt(m[0])


def test_ito_pair_converges_to_exact_phase(grid):
    """Literal Ito steppers approach the exact-phase path on a frozen Brownian path."""
    u0 = normalized(gaussian(grid, 1.0), 1.0)
    noise = NoiseSpec.gaussian(grid, 1.0, 1.0, 0.5)
    T = 1.0
    gaps = {"euler": [], "milstein": []}
    for stream in range(4):
        fine = sample_path(21, 0.0025, T, stream)
        for f in (4, 2):
            p = fine.coarsen(f)
            params = FlowParams(grid, p.dt)
            exact = evolve(u0, SNLSStepper(params, noise, p), T, convolution=False).fields[-1]
            for scheme in gaps:
                ito = evolve(u0, ItoSNLSStepper(params, noise, p, scheme), T, convolution=False).fields[-1]
                gaps[scheme].append(lp_norm(ComplexField(grid, ito - exact)))
    for scheme, g in gaps.items():
        g = np.array(g).reshape(4, 2)
        rms = np.sqrt(np.mean(g**2, axis=0))
        assert rms[1] < rms[0], scheme
    g = np.array(gaps["milstein"]).reshape(4, 2)
    rms = np.sqrt(np.mean(g**2, axis=0))
    assert rms[0] / rms[1] >= 1.7


def test_ito_stepper_rejects_unknown_scheme(grid):
    with pytest.raises(ValueError):
        ItoSNLSStepper(FlowParams(grid, 0.01), NoiseSpec.gaussian(grid), sample_path(0, 0.01, 1.0), "heun")


def test_stepper_rejects_mismatched_path(grid):
    with pytest.raises(ValueError):
        SNLSStepper(FlowParams(grid, 0.01), NoiseSpec.gaussian(grid), sample_path(0, 0.02, 1.0))


def test_ito_damping_halves_square(grid):
    noise = NoiseSpec.gaussian(grid, 2.0, 1.0, 0.3)
    D = noise.ito_damping()
    assert np.allclose(D.V2, 0.5 * noise.V**2)
    assert D.gamma == 0.3
