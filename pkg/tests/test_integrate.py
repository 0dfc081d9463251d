import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poissonlearn import ad
from poissonlearn import systems as S
from poissonlearn.integrate import (EmptyTrajectoryError, StepFailure, Trajectory, imr_step,
                                    imr_step_unrolled, simulate, simulate_batch)

RB = S.SystemSpec("RB")


def oscillator(x):
    x = np.asarray(x)
    return np.stack([x[..., 1], -x[..., 0]], -1)


def rb(x):
    return S.rb_field(x, RB)


def test_zero_field_is_fixed_point():
    x0 = np.array([0.3, -0.1, 2.0])
    np.testing.assert_array_equal(imr_step(lambda x: np.zeros_like(x), x0, 0.1), x0)
    np.testing.assert_array_equal(imr_step_unrolled(lambda x: np.zeros_like(x), x0, 0.1, 7), x0)


def test_cayley_rotation():
    dt = 0.1
    x1 = imr_step(oscillator, np.array([1.0, 0.0]), dt)
    assert x1[0] == pytest.approx((1 - dt ** 2 / 4) / (1 + dt ** 2 / 4), abs=1e-13)
    assert x1[1] == pytest.approx(-dt / (1 + dt ** 2 / 4), abs=1e-13)


def test_rb_step_preserves_norm():
    M = S.sample_initial_conditions(RB, 200, 0)
    M1 = imr_step(rb, M, 0.05)
    assert np.max(np.abs(np.sum(M1 ** 2, 1) - np.sum(M ** 2, 1))) <= 1e-10


def test_order_two_convergence():
    M0 = np.array([0.4, -0.9, 0.6])
    h = 0.1

    def ref(dt):
        x = M0
        for _ in range(100):
            x = imr_step(rb, x, dt / 100)
        return x

    # one-step (local) error is O(dt^3)
    e1 = np.linalg.norm(imr_step(rb, M0, h) - ref(h))
    e_half = np.linalg.norm(imr_step(rb, M0, h / 2) - ref(h / 2))
    assert 6 <= e1 / e_half <= 10


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0.01, 0.2))
def test_time_symmetry(M, dt):
    M = np.array(M)
    back = imr_step(lambda x: -rb(x), imr_step(rb, M, dt), dt)
    assert np.max(np.abs(back - M)) <= 1e-9


def test_quadratic_invariants_heavy_top():
    spec = S.SystemSpec("HT")
    f = lambda x: S.heavy_top_field(x, spec)
    x0 = S.sample_initial_conditions(spec, 100, 1)
    x1 = imr_step(f, x0, 0.05)
    for q in ("r2", "Mr"):
        fn = S.quantity(q, "HT")
        assert np.max(np.abs(fn(x1) - fn(x0))) <= 1e-10


@pytest.mark.parametrize("dt", [0.01, 0.05, 0.1])
def test_unrolled_matches_newton(dt):
    M = S.sample_initial_conditions(RB, 50, 2)
    np.testing.assert_allclose(imr_step_unrolled(rb, M, dt, 20), imr_step(rb, M, dt), atol=1e-9, rtol=0)


def test_unrolled_is_differentiable():
    M = np.array([[0.3, -0.7, 0.5]])
    target = np.array([[0.31, -0.69, 0.49]])

    def loss_of(w):
        def field(x):
            return ad.cross3(x, x * w)
        out = imr_step_unrolled(field, M, 0.1, 10)
        return ad.sum(ad.square(out - target))

    w0 = np.array([1.0, 0.5, 1 / 3])
    t = ad.Tape()
    w = t.leaf(w0)
    g = ad.grad(loss_of(w), [w])[0]
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        fd = (loss_of(w0 + e) - loss_of(w0 - e)) / 2e-6
        assert g[i] == pytest.approx(fd, rel=1e-5)
    with pytest.raises(ValueError):
        imr_step_unrolled(rb, M, 0.1, 0)


def test_step_failure_carries_context():
    with pytest.raises(StepFailure) as err:
        imr_step(lambda x: x ** 2, np.array([1.0]), 2.0)
    assert err.value.dt == 2.0
    np.testing.assert_array_equal(err.value.x0, [1.0])
    with pytest.raises(ValueError):
        imr_step(rb, np.ones(3), 0.0)


def test_simulate_lengths_and_truncation():
    tr = simulate(rb, np.array([0.1, 0.2, 0.3]), 0.05, 1)
    assert len(tr.states) == 2 and tr.failed_at is None
    x0, x1 = tr.pairs()
    assert x0.shape == x1.shape == (1, 3)
    with pytest.raises(EmptyTrajectoryError):
        simulate(lambda x: x ** 2, np.array([1.0]), 2.0, 5)
    # finite-time blow-up for x' = x^2 from x0 = 1 at t = 1
    tr = simulate(lambda x: x ** 2, np.array([1.0]), 0.1, 50, max_abs=1e3)
    assert tr.failed_at is not None and len(tr.states) < 51


def test_simulate_batch_nan_padding():
    x0 = np.array([[0.2], [1.0]])
    states, lengths = simulate_batch(lambda x: x ** 2, x0, 0.1, 20, max_abs=5.0)
    assert lengths[0] == 21 and lengths[1] < 21
    assert np.all(np.isnan(states[1, lengths[1]:]))
    assert np.all(np.isfinite(states[1, :lengths[1]]))


def test_rbdis_energy_non_increasing_and_norm_kept():
    spec = S.SystemSpec("RBdis")
    f = lambda x: S.rbdis_field(x, spec)
    x0 = S.sample_initial_conditions(spec, 20, 3)
    states, lengths = simulate_batch(f, x0, 0.05, 100)
    assert np.all(lengths == 101)
    E = S.rb_energy(states, spec)
    assert np.all(np.diff(E, axis=1) <= 0)
    m2 = np.sum(states ** 2, -1)
    assert np.max(np.abs(m2 - m2[:, :1])) <= 1e-10


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 3)), 0.1)
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 3)), 0.0)
