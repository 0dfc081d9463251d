import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from poissonlearn import metrics
from poissonlearn import systems as S

RB = S.SystemSpec("RB")
HT = S.SystemSpec("HT")
finite = st.floats(-2, 2, allow_nan=False)


def vec(n):
    return arrays(np.float64, n, elements=finite)


def test_rb_field_examples():
    np.testing.assert_array_equal(S.rb_field(np.array([1.0, 0, 0]), RB), 0.0)
    np.testing.assert_allclose(S.rb_field(np.array([0.0, 1, 1]), RB), [-1 / 6, 0, 0], atol=1e-15)


@given(vec(3))
def test_rb_field_preserves_norm(M):
    assert abs(S.rb_field(M, RB) @ M) <= 1e-12


def test_particle_field_example_and_invariants():
    spec = S.SystemSpec("P2D")
    np.testing.assert_array_equal(S.particle_field(np.array([1.0, 0, 0, 0]), spec), [0, 0, -1, 0])
    x = np.random.default_rng(0).uniform(-1, 1, (1000, 4))
    f = S.particle_field(x, spec)
    q, p = x[:, :2], x[:, 2:]
    dq, dp = f[:, :2], f[:, 2:]
    ang_rate = dq[:, 0] * p[:, 1] + q[:, 0] * dp[:, 1] - dq[:, 1] * p[:, 0] - q[:, 1] * dp[:, 0]
    assert np.max(np.abs(ang_rate)) <= 1e-12
    gt = S.ground_truth(spec)
    assert np.max(np.abs(np.sum(gt.hamiltonian_gradient(x) * f, -1))) <= 1e-12


def test_shivamoggi_examples():
    np.testing.assert_allclose(S.shivamoggi_field(np.array([0.1, 0.2, 0.0, 0.3])), [0, 0, 0.05, 0], atol=1e-15)
    s = np.array([0.0, 0.7, 0.0, -0.4])
    np.testing.assert_allclose(S.shivamoggi_field(s), [0, 0, -0.28, 0])


def test_shivamoggi_pairs_degenerate_and_compatible():
    pairs = S.shivamoggi_poisson_pairs()
    one = np.ones(4)
    (U1, V1), (U2, V2) = pairs[0](one), pairs[1](one)
    assert U1 @ V2 == -16 and V1 @ U2 == 16
    # 2(x+z)(0,u,0) at (1,1,1,1)
    np.testing.assert_array_equal(U2, [0, 4, 0])
    pts = np.random.default_rng(1).uniform(-1, 1, (1000, 4))
    for pair in pairs:
        U, V = pair(pts)
        assert np.max(np.abs(np.sum(U * V, -1))) <= 1e-12
    for i in range(3):
        for j in range(i + 1, 3):
            Ui, Vi = pairs[i](pts)
            Uj, Vj = pairs[j](pts)
            assert np.max(np.abs(np.sum(Ui * Vj + Vi * Uj, -1))) <= 1e-9


def test_shivamoggi_integrals_are_conserved_by_field():
    pts = np.random.default_rng(2).uniform(-1, 1, (500, 4))
    f = S.shivamoggi_field(pts)
    grads = metrics.fd_jacobian(S.shivamoggi_integrals, pts, 1e-5)
    rates = np.einsum("bik,bk->bi", grads, f)
    assert np.max(np.abs(rates)) <= 1e-8


def test_heavy_top_examples():
    np.testing.assert_array_equal(S.heavy_top_field(np.array([0, 0, 0, 0, 0, 1.0]), HT), 0.0)
    out = S.heavy_top_field(np.array([0, 0, 0, 1.0, 0, 0]), HT)
    np.testing.assert_array_equal(out, [0, -1, 0, 0, 0, 0])


def test_heavy_top_casimirs_conserved_by_field():
    x = S.sample_initial_conditions(HT, 1000, 3)
    f = S.heavy_top_field(x, HT)
    M, r = x[:, :3], x[:, 3:]
    dM, dr = f[:, :3], f[:, 3:]
    assert np.max(np.abs(np.sum(r * dr, -1))) <= 1e-12
    assert np.max(np.abs(np.sum(dM * r + M * dr, -1))) <= 1e-12
    # the bivector annihilates grad(r^2) and grad(M.r)
    L = S.heavy_top_bivector(x)
    g_r2 = np.concatenate([np.zeros_like(r), 2 * r], -1)
    g_mr = np.concatenate([r, M], -1)
    assert np.max(np.abs(np.einsum("bij,bj->bi", L, g_r2))) <= 1e-12
    assert np.max(np.abs(np.einsum("bij,bj->bi", L, g_mr))) <= 1e-12


def test_rbdis_reduces_to_rb_and_dissipates():
    np.testing.assert_array_equal(S.rbdis_field(np.array([0.3, -0.5, 0.8]), S.SystemSpec("RBdis", tau=0.0)),
                                  S.rb_field(np.array([0.3, -0.5, 0.8]), RB))
    spec = S.SystemSpec("RBdis", tau=0.1)
    M = np.random.default_rng(4).uniform(-1, 1, (1000, 3))
    f = S.rbdis_field(M, spec)
    assert np.max(np.abs(np.sum(f * M, -1))) <= 1e-12
    assert np.all(np.sum(S.rb_energy_gradient(M, spec) * f, -1) <= 1e-15)


@pytest.mark.parametrize("name", ["RB", "P2D", "P3D", "Sh", "HT"])
def test_ground_truth_field_matches_bivector_gradient(name):
    spec = S.SystemSpec(name)
    gt = S.ground_truth(spec)
    x = S.sample_initial_conditions(spec, 1000, 5)
    recon = np.einsum("bij,bj->bi", gt.bivector(x), gt.hamiltonian_gradient(x))
    assert np.max(np.abs(recon - gt.field(x))) <= 1e-12


@pytest.mark.parametrize("name", ["RB", "P2D", "P3D", "Sh", "HT"])
def test_hamiltonian_gradients_match_fd(name):
    spec = S.SystemSpec(name)
    gt = S.ground_truth(spec)
    x = S.sample_initial_conditions(spec, 50, 6)
    fd = metrics.fd_jacobian(gt.hamiltonian, x, 1e-5)
    np.testing.assert_allclose(gt.hamiltonian_gradient(x), fd, atol=1e-8)


@pytest.mark.parametrize("name", ["RB", "HT", "Sh"])
def test_ground_truth_bivectors_satisfy_jacobi(name):
    spec = S.SystemSpec(name)
    gt = S.ground_truth(spec)
    x = S.sample_initial_conditions(spec, 200, 7)
    assert metrics.jacobiator_norm(gt.bivector, x) <= 1e-9


def test_rb_vector_satisfies_scalar_jacobi():
    x = np.random.default_rng(8).uniform(-1, 1, (1000, 3))
    assert np.max(np.abs(metrics.jacobi_scalar_3d(lambda m: -m, x))) <= 1e-12


def test_sampling_boxes_and_determinism():
    sh = S.SystemSpec("Sh")
    x = S.sample_initial_conditions(sh, 2000, 9)
    box = np.asarray(sh.ic_box)
    assert np.all(x >= box[:, 0]) and np.all(x <= box[:, 1])
    np.testing.assert_array_equal(x, S.sample_initial_conditions(sh, 2000, 9))
    rb = S.sample_initial_conditions(RB, 500, 1)
    assert np.all(np.abs(rb) <= 1)
    ht = S.sample_initial_conditions(HT, 500, 2)
    rn = np.linalg.norm(ht[:, 3:], axis=1)
    assert np.all((rn >= 0.5 - 1e-12) & (rn <= 1 + 1e-12))


def test_spec_validation():
    with pytest.raises(ValueError):
        S.SystemSpec("RB", inertia=(1, -2, 3))
    with pytest.raises(ValueError):
        S.SystemSpec("RBdis", tau=-1)
    with pytest.raises(ValueError):
        S.SystemSpec("HT", chi=(0, 0, 2))
    with pytest.raises(ValueError):
        S.SystemSpec("XY")
    with pytest.raises(ValueError):
        S.sample_initial_conditions(S.SystemSpec("RB", ic_box=((0, 0), (0, 1), (0, 1))), 3, 0)
    assert S.SystemSpec("rbdis").name == "RBdis"
    assert {S.SystemSpec(n).dim for n in S.SYSTEMS} == {3, 4, 6}


@settings(max_examples=50)
@given(vec(3), vec(3))
def test_luv_round_trip(U, V):
    L = S.luv_to_bivector(U, V)
    np.testing.assert_array_equal(L, -L.T)
    U2, V2 = S.bivector_to_luv(L)
    np.testing.assert_array_equal(U2, U)
    np.testing.assert_array_equal(V2, V)
    # degenerate iff U.V = 0
    assert np.linalg.det(L) == pytest.approx((U @ V) ** 2, abs=1e-9)


def test_quantities():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert S.quantity("rxM", "P2D")(x) == 1 * 4 - 2 * 3
    with pytest.raises(ValueError):
        S.quantity("r2", "RB")
