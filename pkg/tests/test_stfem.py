import numpy as np
import pytest

from dldc.optim import ContractError, ParamStore, finite_diff_gradcheck
from dldc.stfem import (DivergenceError, SingularBlockError, TimeSeries, add_noise, ar_step,
                        assemble_bar, assemble_smd, bar_element_matrices, direct_solve,
                        fit_damping_ratio, global_matrix, identify, predict_new_conditions,
                        rollout, rollout_loss, sine_load, smd_element_matrices,
                        teacher_forced_loss)

W = 2 * np.pi


def smd(n=150, **kw):
    args = dict(m=1.0, c=10.0, k=100.0, f0=10.0, omega=W, T_end=3.0, n_elem=n, u0=1.0, v0=1.0)
    args.update(kw)
    return assemble_smd(**args)


def bar(**kw):
    args = dict(E=1.0, A_cs=1.0, rho=1.0, n_nodes=11, n_time=40, dx=0.1, dt=0.05,
                traction=1.0, omega=np.pi)
    args.update(kw)
    return assemble_bar(**args)


def _gauss_1d(n=4):
    g, w = np.polynomial.legendre.leggauss(n)
    return (g + 1) / 2, w / 2          # on [0, 1]


def _linear_shapes(t):
    return np.stack([1 - t, t], axis=1), np.array([-1.0, 1.0])


# element matrices against quadrature of the linear shape functions

def test_smd_element_matrices_unit():
    Me, Ce, Ke = smd_element_matrices(1.0, 1.0, 1.0, 1.0)
    assert np.allclose(Me, [[1, -1], [-1, 1]], atol=1e-15)
    assert np.allclose(Ce, [[-0.5, 0.5], [-0.5, 0.5]], atol=1e-15)
    assert np.allclose(Ke, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-15)


def test_smd_element_matrices_by_quadrature():
    t, w = _gauss_1d()
    N, dN = _linear_shapes(t)
    dt = 0.37
    Me, Ce, Ke = smd_element_matrices(1.0, 1.0, 1.0, dt)
    # test function index first: int v' u' / dt, int v u', dt int v u
    assert np.allclose(Me, np.outer(dN, dN) / dt, atol=1e-14)
    assert np.allclose(Ce, np.einsum("q,qa->a", w, N)[:, None] * dN[None, :], atol=1e-14)
    assert np.allclose(Ke, dt * np.einsum("q,qa,qb->ab", w, N, N), atol=1e-14)


def test_bar_element_matrices_unit_square():
    g, w = _gauss_1d()
    K, M = bar_element_matrices(1.0, 1.0, 1.0, 1.0, 1.0)
    Kq = np.zeros((4, 4))
    Mq = np.zeros((4, 4))
    for i, t in enumerate(g):
        for j, x in enumerate(g):
            # local order (x0,t0), (x1,t0), (x0,t1), (x1,t1)
            Nx = np.array([1 - x, x])
            Nt = np.array([1 - t, t])
            dx = np.kron(Nt, [-1.0, 1.0])
            dt = np.kron([-1.0, 1.0], Nx)
            Kq += w[i] * w[j] * np.outer(dx, dx)
            Mq += w[i] * w[j] * np.outer(dt, dt)
    assert np.allclose(K, Kq, atol=1e-14)
    assert np.allclose(M, Mq, atol=1e-14)


def test_force_integrates_to_zero_over_period():
    a, b = sine_load(1.0, W, 0.0, 1.0)
    assert abs(a + b) < 1e-14
    s = assemble_smd(1.0, 0.0, 0.0, 1.0, W, 1.0, 40)
    assert abs(s.force.sum()) < 1e-14


def test_smd_rejects_nonpositive_mass():
    with pytest.raises(ContractError, match="m=0"):
        assemble_smd(0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 10)


@pytest.mark.parametrize("kw", [dict(E=-1.0), dict(rho=-1.0), dict(n_time=2), dict(dx=0.0)])
def test_bar_rejects_bad_input(kw):
    with pytest.raises(ContractError):
        bar(**kw)


# structural properties

def test_bar_a_equals_c():
    s = bar()
    assert np.array_equal(s.A, s.C)


def test_blocks_affine_in_coefficients():
    s = smd()
    t1, t2 = dict(m=1.3, c=2.0, k=7.0), dict(m=0.4, c=-1.0, k=3.5)
    both = {n: t1[n] + t2[n] for n in t1}
    zero = dict(m=0.0, c=0.0, k=0.0)
    for b, b1, b2, b0 in zip(s.blocks(both), s.blocks(t1), s.blocks(t2), s.blocks(zero)):
        assert np.allclose(b, b1 + b2 - b0, rtol=0, atol=1e-13)


def test_doubling_e_doubles_stiffness_blocks():
    one = bar(rho=0.0).blocks()
    two = bar(E=2.0, rho=0.0).blocks()
    for a, b in zip(one, two):
        assert np.array_equal(b, 2 * a)


def test_band_profile():
    s = bar(n_time=6)
    G, _ = global_matrix(s)
    N = s.n_space
    rows, cols = G.nonzero()
    assert np.all(np.abs(rows // N - cols // N) <= 2)
    assert np.all(cols // N <= rows // N)


def test_statics_limit_constant_load():
    # rho = 0 and a static initial state: every time slice keeps the static solution.
    # The rho = 0 recursion u[t-1] + 4 u[t] + u[t+1] amplifies round-off by 3.7 per
    # step, so the horizon is kept short.
    n, dx = 11, 0.1
    x = dx * np.arange(1, n)
    s = assemble_bar(1.0, 1.0, 0.0, n, 6, dx, 0.05, u0=x.copy(), traction=1.0)
    u = direct_solve(s).values
    assert np.max(np.abs(u - x[None, :])) < 1e-10


def test_free_particle_is_linear():
    s = assemble_smd(1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 30, u0=0.0, v0=1.0)
    u = direct_solve(s)
    assert np.max(np.abs(u.values[:, 0] - u.times)) < 1e-10


# stepping

@pytest.mark.parametrize("system", [smd(), bar()], ids=["smd", "bar"])
def test_stepping_matches_direct(system):
    d = direct_solve(system).values
    r = rollout(system, d[0], d[1]).values
    assert np.max(np.abs(r - d)) <= 1e-9 * np.max(np.abs(d))
    u = d[1] + 0
    prev = d[0]
    for t in range(1, 5):
        prev, u = u, ar_step(system, prev, u, system.force[t])
        assert np.allclose(u, d[t + 1], rtol=1e-9, atol=1e-12)


def test_zero_forcing_zero_state_stays_zero():
    s = smd(f0=0.0, u0=0.0, v0=0.0)
    assert not np.any(rollout(s).values)


def test_singular_c_block_named():
    s = smd().with_coeffs(m=0.0, c=0.0, k=0.0)
    with pytest.raises(SingularBlockError, match="'m': 0.0"):
        ar_step(s, [0.0], [0.0], [0.0])


# losses and identification

@pytest.mark.parametrize("loss", [teacher_forced_loss, rollout_loss])
@pytest.mark.parametrize("system", [smd(), bar()], ids=["smd", "bar"])
def test_own_data_is_a_fixed_point(loss, system):
    names = list(system.basis)
    value, grad = loss(system, direct_solve(system).values, names)
    assert value < 1e-12
    assert not np.any(grad)


@pytest.mark.parametrize("loss", [teacher_forced_loss, rollout_loss])
@pytest.mark.parametrize("system, off", [
    (smd(), dict(m=0.8, c=13.0, k=90.0)),
    (bar(), dict(E=1.2, rho=0.7)),
], ids=["smd", "bar"])
def test_loss_gradients_pass_gradcheck(loss, system, off):
    obs = direct_solve(system).values
    names = list(off)
    ps = ParamStore()
    ps.add("theta", [off[n] for n in names])

    def value(p):
        return loss(system.with_coeffs(**dict(zip(names, p["theta"]))), obs, names, False)[0]

    ps.set_grad("theta", loss(system.with_coeffs(**off), obs, names)[1])
    assert finite_diff_gradcheck(value, ps, 1e-6) < 1e-4


def test_identify_clean_coarse():
    truth = smd(50)
    obs = direct_solve(truth)
    run = identify(truth, obs, ["m", "c", "k"], epochs=8000, lr_final=1e-5,
                   init=dict(m=0.5, c=5.0, k=50.0), seeds=(0,))
    for n, v in dict(m=1.0, c=10.0, k=100.0).items():
        assert run.coeffs[n] == pytest.approx(v, rel=0.01)
    assert run.history.epochs == 8000


def test_identify_keeps_untrained_coefficients():
    truth = smd(30)
    run = identify(truth, direct_solve(truth), ["k"], epochs=50, init=dict(k=50.0), seeds=(0,))
    assert run.coeffs["m"] == 1.0 and run.coeffs["c"] == 10.0
    assert all(v.shape == (1,) for v in run.history.values)


@pytest.mark.parametrize("kw", [dict(trainable=["q"]), dict(mode="bptt")])
def test_identify_rejects_bad_arguments(kw):
    truth = smd(30)
    args = dict(trainable=["k"], epochs=1)
    args.update(kw)
    with pytest.raises(ContractError):
        identify(truth, direct_solve(truth), **args)


def test_identify_rejects_wrong_shape():
    truth = smd(30)
    short = TimeSeries(np.arange(5.0), np.zeros(5))
    with pytest.raises(ContractError):
        identify(truth, short, ["k"], epochs=1)


def test_identify_divergence_reports_last_state():
    # residuals of order 1e308 overflow the L1 sum
    truth = smd(30)
    obs = direct_solve(truth)
    obs.values[5:7] = 1e308
    with pytest.raises(DivergenceError) as info:
        identify(truth, obs, ["m"], epochs=5, init=dict(m=0.5), seeds=(0,))
    assert info.value.last_state == dict(m=0.5)


# prediction

def test_zero_conditions_predict_zero():
    u = predict_new_conditions(smd(), dict(m=1.0, c=10.0, k=100.0), (0.0, 0.0), {}, 3.0, 150)
    assert not np.any(u.values)


def test_free_decay_damping_ratio():
    u = predict_new_conditions(smd(), dict(m=1.0, c=10.0, k=100.0), (1.0, 0.0), {}, 3.0, 300)
    zeta, wn = fit_damping_ratio(u)
    assert zeta == pytest.approx(0.5, rel=0.02)
    assert wn == pytest.approx(10.0, rel=0.02)


def test_prediction_rejects_bar():
    with pytest.raises(ContractError):
        predict_new_conditions(bar(), dict(m=1.0, c=1.0, k=1.0), (0.0, 0.0), {}, 1.0, 10)


# noise

def _series(n=10_000):
    return TimeSeries(np.arange(n) * 0.01, np.zeros(n))


def test_zero_variance_is_identity():
    s = _series(100)
    assert np.array_equal(add_noise(s, 0.0, 0.0, 3).values, s.values)


def test_noise_sample_variance():
    v = add_noise(_series(), 0.0, 1e-3, 7).values
    assert 0.0008 <= np.var(v) <= 0.0012


def test_noise_is_seeded():
    a, b = add_noise(_series(50), 0.0, 1e-3, 11), add_noise(_series(50), 0.0, 1e-3, 11)
    assert np.array_equal(a.values, b.values)
    assert a.noise_meta == (0.0, 1e-3)


def test_negative_variance_rejected():
    with pytest.raises(ContractError):
        add_noise(_series(5), 0.0, -1.0, 0)


def test_timeseries_requires_uniform_times():
    with pytest.raises(ContractError):
        TimeSeries([0.0, 1.0, 3.0], [0.0, 0.0, 0.0])
