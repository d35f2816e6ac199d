import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybrid_oda import oda
from hybrid_oda.errors import ContractViolation, InvalidInput

finite = st.floats(-1e3, 1e3, allow_nan=False)


def make_codebook(phis, rho=None):
    phis = np.asarray(phis, dtype=float)
    rho = np.full(len(phis), 1.0 / len(phis)) if rho is None else np.asarray(rho, dtype=float)
    return oda.Codebook(phis, rho, phis * rho[:, None], np.arange(len(phis)))


def test_augmented_codevector_examples():
    np.testing.assert_array_equal(oda.augmented_codevector([0, 0], [1, 2], np.eye(2)), [1, 2, 0, 0])
    np.testing.assert_array_equal(oda.augmented_codevector([3, 4], [1, 2], np.zeros((2, 2))), [0, 0, 3, 4])
    np.testing.assert_allclose(oda.augmented_codevector([-2.5, 1], [-2, 1], [1.0, 2.0]), [0, -2.5, 1])
    with pytest.raises(ContractViolation):
        oda.augmented_codevector([0, 0], [1, 2, 3], np.eye(3))


def test_augmented_divergences_match_direct(rng):
    cb = make_codebook(rng.standard_normal((3, 2)))
    thetas = rng.standard_normal((3, 2, 2))
    psi, phi = rng.standard_normal(2), rng.standard_normal(2)
    x = np.concatenate([psi, phi])
    direct = [np.sum((x - oda.augmented_codevector(cb.phi[i], phi, thetas[i])) ** 2) for i in range(3)]
    np.testing.assert_allclose(oda.augmented_divergences(cb, psi, phi, thetas), direct)


def test_gibbs_examples():
    np.testing.assert_allclose(oda.gibbs_weights([1.0, 1.0], [0.3, 0.3], 0.4), [0.5, 0.5])
    np.testing.assert_allclose(oda.gibbs_weights([0.0, 1.0], [0.5, 0.5], 0.5), [0.7311, 0.2689], atol=1e-4)
    p = oda.gibbs_weights([0.0, 1.0], [0.5, 0.5], 1e-6)
    assert p[0] >= 1 - 1e-6
    # huge divergences would underflow without the shift
    np.testing.assert_allclose(oda.gibbs_weights([1e6, 1e6 + 1], [0.5, 0.5], 0.5), [0.7311, 0.2689], atol=1e-4)


def test_gibbs_errors():
    with pytest.raises(InvalidInput):
        oda.gibbs_weights([np.nan, 1.0], [0.5, 0.5], 0.5)
    with pytest.raises(InvalidInput):
        oda.gibbs_weights([0.0], [1.0], 1.0)


@given(arrays(float, st.integers(1, 8), elements=st.floats(0, 1e6)),
       st.sampled_from([0.9, 0.5, 0.2, 1e-3]), st.data())
def test_gibbs_simplex(divs, lam, data):
    rho = data.draw(arrays(float, len(divs), elements=st.floats(1e-6, 1.0)))
    p = oda.gibbs_weights(divs, rho, lam)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-12


def test_oda_update_examples():
    cb = oda.Codebook([[0.0]], [0.5], [[0.0]], [0])
    oda.oda_update(cb, [0.0], [2.0], np.zeros((1, 1, 1)), 0.5, 0.1)
    assert cb.rho[0] == pytest.approx(0.55)
    np.testing.assert_allclose(cb.sigma, [[0.2]])
    np.testing.assert_allclose(cb.phi, [[0.2 / 0.55]])
    assert cb.phi[0, 0] == pytest.approx(0.363636, abs=1e-6)

    cb = oda.Codebook([[5.0, 5.0]], [0.3], [[1.5, 1.5]], [0])
    oda.oda_update(cb, [1.0], [1.0, -1.0], np.zeros((1, 1, 2)), 0.5, 1.0)
    assert cb.rho[0] == 1.0
    np.testing.assert_array_equal(cb.phi, [[1.0, -1.0]])


def test_oda_update_fixed_point():
    # one codevector already holding p=1 and sigma=phi stays put
    cb = oda.Codebook([[2.0]], [1.0], [[2.0]], [0])
    oda.oda_update(cb, [0.0], [2.0], np.zeros((1, 1, 1)), 0.5, 0.3)
    assert cb.rho[0] == 1.0 and cb.phi[0, 0] == 2.0


def test_update_orders(rng):
    thetas = rng.standard_normal((2, 1, 2))
    a = make_codebook([[0.0, 0.0], [1.0, 1.0]])
    b = a.copy()
    pa = oda.oda_update(a, [0.3], [0.5, 0.5], thetas, 0.5, 0.2, "synchronous")
    pb = oda.oda_update(b, [0.3], [0.5, 0.5], thetas, 0.5, 0.2, "sequential")
    assert pa[0] == pytest.approx(pb[0])
    assert np.all(a.rho > 0) and np.all(b.rho > 0)
    with pytest.raises(InvalidInput):
        oda.oda_update(a, [0.3], [0.5, 0.5], thetas, 0.5, 0.2, "random")
    with pytest.raises(InvalidInput):
        oda.oda_update(a, [0.3], [0.5, 0.5], thetas, 0.5, 0.0)


@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 3))
def test_rho_bounds_and_hull(seed, K, d):
    rng = np.random.default_rng(seed)
    cb = make_codebook(rng.uniform(-1, 1, (K, d)), rng.uniform(0.01, 1, K))
    lo = np.minimum(cb.phi.min(axis=0), 0)
    hi = np.maximum(cb.phi.max(axis=0), 0)
    start = cb.phi.copy()
    thetas = rng.standard_normal((K, 1, d))
    for _ in range(200):
        phi = rng.uniform(-3, 3, d)
        oda.oda_update(cb, rng.standard_normal(1), phi, thetas, rng.uniform(0.05, 0.95), rng.uniform(0.001, 1))
        assert np.all((cb.rho > 0) & (cb.rho <= 1))
        lo, hi = np.minimum(lo, phi), np.maximum(hi, phi)
    # bounding box of stream plus starting prototypes
    lo = np.minimum(lo, start.min(axis=0))
    hi = np.maximum(hi, start.max(axis=0))
    assert np.all(cb.phi >= lo - 1e-9) and np.all(cb.phi <= hi + 1e-9)
    np.testing.assert_allclose(cb.phi, cb.sigma / cb.rho[:, None])


def test_perturb_split_structure():
    rng = np.random.default_rng(0)
    cb = oda.Codebook([[1.0, 2.0]], [0.8], [[0.8, 1.6]], [4])
    out = oda.perturb_split(cb, 0.1, rng)
    assert out.K == 2
    np.testing.assert_allclose(out.phi.mean(axis=0), [1.0, 2.0])
    np.testing.assert_allclose(np.linalg.norm(out.phi - [1.0, 2.0], axis=1), [0.1, 0.1])
    np.testing.assert_allclose(out.rho, [0.4, 0.4])
    assert out.theta_index.tolist() == [4, 4]
    assert out.fresh.tolist() == [False, True]
    np.testing.assert_allclose(out.phi, out.sigma / out.rho[:, None])


@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 12))
def test_split_conserves_mass_and_respects_k_max(seed, K, K_max):
    rng = np.random.default_rng(seed)
    cb = make_codebook(rng.standard_normal((K, 2)), rng.dirichlet(np.ones(K)))
    out = oda.perturb_split(cb, 0.05, rng, K_max)
    assert out.rho.sum() == pytest.approx(cb.rho.sum())
    assert out.K == max(min(2 * K, K_max), K)


def test_split_k_max_picks_heaviest():
    cb = make_codebook([[0.0], [1.0], [2.0]], [0.2, 0.5, 0.3])
    out = oda.perturb_split(cb, 0.01, np.random.default_rng(1), K_max=4)
    assert out.K == 4
    assert out.theta_index.tolist() == [0, 1, 1, 2]


def test_zero_delta_split_remerges():
    cb = make_codebook([[0.5, -0.5]], [1.0])
    out = oda.perturb_split(cb, 0.0, np.random.default_rng(0))
    thetas = np.zeros((2, 1, 2))
    oda.oda_update(out, [0.0], [0.7, -0.2], thetas, 0.5, 0.1)
    merged = oda.merge(out, 0.5, 1e-9)
    assert merged.K == 1
    assert merged.rho[0] == pytest.approx(out.rho.sum())


def test_merge_examples():
    base = [[0.0, 0.0], [0.1, 0.0]]  # squared distance 0.01
    assert oda.merge(make_codebook(base), 0.5, 0.02).K == 1
    assert oda.merge(make_codebook(base), 0.2, 0.02).K == 2
    same = oda.merge(make_codebook([[1.0, 1.0], [1.0, 1.0]]), 0.5, 1e-6)
    assert same.K == 1 and same.rho[0] == pytest.approx(1.0)
    # the boundary case is inclusive
    assert oda.merge(make_codebook([[0.0], [1.0]]), 0.5, 1.0).K == 1


def test_merge_veto_and_survivor():
    cb = make_codebook([[0.0], [0.0], [5.0]], [0.2, 0.3, 0.5])
    kept = oda.merge(cb, 0.5, 0.1, can_merge=lambda a, b: False)
    assert kept.K == 3
    merged = oda.merge(cb, 0.5, 0.1)
    assert merged.theta_index.tolist() == [0, 2]
    np.testing.assert_allclose(merged.rho, [0.5, 0.5])


@given(st.integers(0, 2**31), st.integers(1, 8), st.floats(0.05, 0.95), st.floats(1e-3, 2.0))
def test_merge_idempotent(seed, K, lam, eps_n):
    rng = np.random.default_rng(seed)
    cb = make_codebook(rng.uniform(-1, 1, (K, 2)))
    once = oda.merge(cb, lam, eps_n)
    twice = oda.merge(once, lam, eps_n)
    np.testing.assert_array_equal(once.phi, twice.phi)
    np.testing.assert_array_equal(once.rho, twice.rho)
    assert once.rho.sum() == pytest.approx(cb.rho.sum())


def test_free_energy_examples(rng):
    psis = rng.standard_normal((20, 1))
    phis = rng.standard_normal((20, 2))
    cb = make_codebook([[0.0, 0.0]], [1.0])
    thetas = np.zeros((1, 1, 2))
    F, D, H = oda.free_energy(psis, phis, cb, thetas, 0.3)
    assert H == 0.0 and F == pytest.approx(0.7 * D)

    # two codevectors at the same place see identical divergences
    cb2 = make_codebook([[0.0, 0.0], [0.0, 0.0]])
    F, D, H = oda.free_energy(psis, phis, cb2, np.zeros((2, 1, 2)), 0.3)
    assert H == pytest.approx(np.log(2))

    F, D, H = oda.free_energy(psis, phis, make_codebook([[1.0, 0.0], [-1.0, 0.0]]), np.zeros((2, 1, 2)), 1e-9)
    assert F == pytest.approx(D, abs=1e-6)
    with pytest.raises(InvalidInput):
        oda.free_energy(np.zeros((0, 1)), np.zeros((0, 2)), cb, thetas, 0.3)


def test_codebook_roundtrip_and_validation():
    cb = make_codebook([[0.0, 1.0], [2.0, 3.0]])
    back = oda.Codebook.from_dict(cb.to_dict())
    np.testing.assert_array_equal(back.phi, cb.phi)
    with pytest.raises(InvalidInput):
        oda.Codebook([[0.0]], [0.0], [[0.0]], [0])
    with pytest.raises(ContractViolation):
        oda.Codebook([[0.0], [1.0]], [0.5], [[0.0]], [0])


def test_full_step_keeps_far_cells_alive():
    # the far cell's weight underflows to zero; its mass must stay positive
    cb = make_codebook([[0.0], [1e3]])
    oda.oda_update(cb, [0.0], [0.0], np.zeros((2, 1, 1)), 0.01, 1.0)
    assert np.all(cb.rho > 0) and np.all(np.isfinite(cb.phi))
