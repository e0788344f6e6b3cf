import numpy as np
import pytest

from kronsub.errors import DimensionMismatch
from kronsub.model import (
    Dims,
    KSClass,
    KSEnsemble,
    RngStream,
    sample_ensemble,
    sample_signal,
    sample_signals,
    sigma2_to_snr_db,
    snr_db_to_sigma2,
    structured_covariance,
    vec_batch,
)
from kronsub.tensorlin import kron, vec


def test_dims_validation():
    d = Dims(4, 5, 2, 3, 3)
    assert (d.M, d.N) == (20, 6)
    with pytest.raises(ValueError):
        Dims(2, 4, 3, 2)
    with pytest.raises(ValueError):
        Dims(4, 4, 2, 2, 0)
    with pytest.raises(TypeError):
        Dims(4.0, 4, 2, 2)


def test_ensemble_shape_check():
    c = KSClass(np.ones((4, 2)), np.ones((3, 1)))
    assert c.shape == (4, 3, 2, 1)
    with pytest.raises(DimensionMismatch):
        KSEnsemble(Dims(4, 3, 2, 2, 1), (c,))
    with pytest.raises(DimensionMismatch):
        KSEnsemble(Dims(4, 3, 2, 1, 2), (c,))
    assert len(KSEnsemble.from_classes([c, c])) == 2


def test_class_is_immutable():
    c = KSClass(np.ones((2, 1)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        c.A[0, 0] = 3.0


def test_rng_stream_reproducible_and_distinct():
    a = RngStream(5, 2).generator().standard_normal(4)
    b = RngStream(5, 2).generator().standard_normal(4)
    c = RngStream(5, 3).generator().standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(RngStream(5, (2, 1)).generator().random(3), RngStream(5, 2).child(1).generator().random(3))


def test_prior_moments():
    dims = Dims(40, 30, 4, 5, 1)
    vals_a, vals_b = [], []
    for s in range(700):
        ens = sample_ensemble(dims, RngStream(s))
        vals_a.append(ens[0].A.ravel())
        vals_b.append(ens[0].B.ravel())
    a, b = np.concatenate(vals_a), np.concatenate(vals_b)
    assert a.size > 10**5
    assert abs(a.mean()) < 5 / np.sqrt(a.size)
    assert abs(a.var() * 4 - 1) < 0.01
    assert abs(b.var() * 5 - 1) < 0.01


def test_streams_give_distinct_ensembles():
    dims = Dims(4, 4, 2, 2, 2)
    e1, e2 = sample_ensemble(dims, RngStream(0, 0)), sample_ensemble(dims, RngStream(0, 1))
    assert not np.array_equal(e1[0].A, e2[0].A)
    e3 = sample_ensemble(dims, RngStream(0, 0))
    assert np.array_equal(e1[1].B, e3[1].B)


def test_sample_signal_pure_noise():
    c = KSClass(np.zeros((3, 1)), np.zeros((2, 1)))
    Y = vec_batch(sample_signals(c, 1.0, 100_000, RngStream(1)))
    C = np.cov(Y.T)
    assert np.max(np.abs(C - np.eye(6))) < 5 * np.sqrt(2 / 100_000)


def test_sample_signal_rank_one():
    rng = np.random.default_rng(0)
    c = KSClass(rng.standard_normal((5, 1)), rng.standard_normal((4, 1)))
    Y = sample_signal(c, 0.0, RngStream(2))
    assert Y.shape == (5, 4)
    assert np.linalg.matrix_rank(Y) == 1


def test_sample_covariance_matches_model():
    c = sample_ensemble(Dims(3, 3, 2, 1, 1), RngStream(3))[0]
    sigma2 = 0.3
    T = 100_000
    Y = vec_batch(sample_signals(c, sigma2, T, RngStream(4)))
    D = c.basis()
    S = D @ D.T + sigma2 * np.eye(9)
    C = Y.T @ Y / T
    se = np.sqrt((S**2 + np.outer(np.diag(S), np.diag(S))) / T)
    assert np.max(np.abs(C - S) / se) < 5


def test_vec_batch_column_major():
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((3, 4, 5))
    V = vec_batch(Y)
    for k in range(3):
        assert np.array_equal(V[k], vec(Y[k]))


def test_structured_covariance_orthonormal_factors():
    rng = np.random.default_rng(2)
    A = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    B = np.linalg.qr(rng.standard_normal((4, 3)))[0]
    cov = structured_covariance(KSClass(A, B), 0.1)
    assert np.allclose(cov.eigvals, 1.0)
    assert np.allclose(cov.U.T @ cov.U, np.eye(6), atol=1e-12)


def test_structured_covariance_rank_one():
    a, b = np.array([[1.0], [2.0]]), np.array([[3.0], [0.0], [4.0]])
    cov = structured_covariance(KSClass(a, b), 0.0)
    assert cov.eigvals == pytest.approx([5.0 * 25.0])


def test_structured_covariance_dense_oracle():
    c = sample_ensemble(Dims(4, 5, 2, 3, 1), RngStream(7))[0]
    sigma2 = 0.05
    cov = structured_covariance(c, sigma2)
    D = kron(c.B, c.A)
    dense = D @ D.T + sigma2 * np.eye(20)
    assert np.max(np.abs(cov.dense() - dense)) < 1e-8
    w = np.sort(np.linalg.eigvalsh(dense))
    expected = np.sort(np.concatenate([cov.eigvals + sigma2, np.full(14, sigma2)]))
    assert np.allclose(w, expected, atol=1e-10)
    assert np.all(np.diff(cov.eigvals) <= 0)
    la = np.linalg.eigvalsh(c.A.T @ c.A)
    lb = np.linalg.eigvalsh(c.B.T @ c.B)
    assert np.allclose(np.sort(cov.eigvals), np.sort(np.kron(lb, la)), atol=1e-10)
    assert cov.logdet() == pytest.approx(np.linalg.slogdet(dense)[1], rel=1e-10)


def test_snr_conversion():
    assert snr_db_to_sigma2(20.0) == pytest.approx(0.01)
    assert sigma2_to_snr_db(1e-3) == pytest.approx(30.0)
