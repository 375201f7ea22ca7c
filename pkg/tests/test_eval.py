import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from lassl.errors import DimensionError
from lassl.eval import (
    ProbeConfig,
    SpectrumReport,
    auroc,
    bce_grad,
    bce_loss,
    compare_spectra,
    extract,
    gradient_identity_check,
    jacobi_svd,
    multiclass_subgroup_metrics,
    probe,
    spectrum,
    subgroup_metrics,
)
from lassl.eval.spectral import tail_start
from lassl.numeric.network import ParamSet, init_params
from lassl.synthdata import GeneratorConfig, generate


def brute_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


# ---------------------------------------------------------------- extraction


def test_extract_identity_encoder_and_determinism():
    ds = generate(GeneratorConfig(n=50))
    m = ds.config.input_dim
    ident = ParamSet((m, m), (m, 4), {
        "enc.0.W": np.eye(m), "enc.0.b": np.zeros(m),
        "head.0.W": np.ones((m, 4)), "head.0.b": np.zeros(4),
    })
    np.testing.assert_array_equal(extract(ident, ds), ds.features64())
    net = init_params((m, 16, 8), (8, 4), seed=1)
    a, b = extract(net, ds), extract(net, ds)
    assert a.shape == (50, 8) and np.array_equal(a, b)


# ---------------------------------------------------------------- probe


def test_probe_separable_clusters(rng):
    x = np.vstack([rng.normal(-3, 0.5, (50, 2)), rng.normal(3, 0.5, (50, 2))])
    y = np.r_[np.zeros(50), np.ones(50)]
    p = probe(x, y, ProbeConfig(max_iter=2000))
    assert np.mean(p.predict(x) == y) == 1.0
    assert p.binary


def test_probe_constant_labels_drive_loss_to_zero(rng):
    x = rng.standard_normal((40, 3))
    p = probe(x, np.zeros(40), ProbeConfig(max_iter=20_000), n_classes=2)
    assert np.all(p.predict_proba(x) < 0.01)
    assert p.loss_history[-1] < 0.01


def test_probe_matches_lbfgs_oracle(rng):
    x = rng.standard_normal((200, 5))
    y = (x @ rng.standard_normal(5) + rng.standard_normal(200) > 0).astype(float)
    p = probe(x, y, ProbeConfig(max_iter=10_000, tol=1e-8))
    X = np.hstack([x, np.ones((200, 1))])

    def f(w):
        z = X @ w
        return np.mean(np.logaddexp(0, z) - y * z), X.T @ (1 / (1 + np.exp(-z)) - y) / 200

    oracle = minimize(f, np.zeros(6), jac=True, method="L-BFGS-B", options={"gtol": 1e-10, "ftol": 1e-15})
    ours = bce_loss(X, np.r_[p.coef, p.bias], y)
    assert abs(ours - oracle.fun) < 1e-4
    assert p.converged


def test_probe_loss_non_increasing(rng):
    x = rng.standard_normal((150, 4)) * [1, 5, 0.2, 2]
    y = (x[:, 0] + 0.3 * rng.standard_normal(150) > 0).astype(int)
    p = probe(x, y, ProbeConfig(max_iter=3000, tol=0))
    assert np.all(np.diff(p.loss_history) <= 1e-12)
    labels = rng.integers(0, 4, 150)
    pm = probe(x, labels, ProbeConfig(max_iter=1000, tol=0))
    assert pm.n_classes == 4 and np.all(np.diff(pm.loss_history) <= 1e-12)
    np.testing.assert_allclose(pm.predict_proba(x).sum(1), 1.0)


def test_bce_gradient_matches_fd(rng):
    for _ in range(10):
        phi = rng.standard_normal((30, 4))
        theta = rng.standard_normal(4)
        y = rng.integers(0, 2, 30).astype(float)
        fd = np.array([(bce_loss(phi, theta + h, y) - bce_loss(phi, theta - h, y)) / 2e-6
                       for h in np.eye(4) * 1e-6])
        g = bce_grad(phi, theta, y)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-5


def test_probe_label_mismatch():
    with pytest.raises(DimensionError):
        probe(np.zeros((4, 2)), np.zeros(3))


# ---------------------------------------------------------------- metrics


def test_auroc_cases():
    y = np.array([1, 0, 1, 0, 0, 1])
    assert auroc(y.astype(float), y) == 1.0
    assert auroc(1.0 - y, y) == 0.0
    assert math.isnan(auroc([0.1, 0.2], [1, 1]))


def test_auroc_matches_brute_force_with_ties(rng):
    for _ in range(30):
        s = rng.integers(0, 5, 25).astype(float)
        y = rng.integers(0, 2, 25)
        if 0 < y.sum() < 25:
            assert abs(auroc(s, y) - brute_auroc(s, y)) < 1e-12


def test_auroc_invariant_under_monotone_maps(rng):
    s = rng.standard_normal(100)
    y = rng.integers(0, 2, 100)
    base = auroc(s, y)
    for f in (np.exp, lambda v: 3 * v + 7, lambda v: v**3, np.arctan):
        assert auroc(f(s), y) == base


def test_three_example_report():
    rep = subgroup_metrics([0.9, 0.8, 0.4], [1, 0, 0])["all"]
    assert rep.auroc == 1.0 and rep.precision == 0.5 and rep.recall == 1.0
    assert rep.accuracy == pytest.approx(2 / 3)


def test_subgroups_and_undefined_auroc():
    scores = np.array([0.9, 0.1, 0.7, 0.6, 0.2])
    labels = np.array([1, 0, 1, 1, 0])
    groups = np.array(["a", "a", "b", "b", "b"])
    rep = subgroup_metrics(scores, labels, groups)
    assert set(rep) == {"all", "a", "b"}
    assert rep["a"].prevalence == 0.4 and rep["a"].auroc == 1.0
    rep2 = subgroup_metrics(scores, labels, np.array([0, 0, 1, 1, 2]))
    assert math.isnan(rep2["1"].auroc) and rep2["1"].to_dict()["auroc"] is None
    for m in rep.values():
        for v in (m.accuracy, m.precision, m.recall, m.auroc):
            assert 0.0 <= v <= 1.0
    with pytest.raises(DimensionError):
        subgroup_metrics(scores, labels[:4])


def test_multiclass_metrics():
    probs = np.eye(3)[[0, 1, 2, 2]]
    rep = multiclass_subgroup_metrics(probs, np.array([0, 1, 2, 1]), np.array([0, 0, 1, 1]))
    assert rep["all"].accuracy == 0.75
    assert rep["0"].accuracy == 1.0 and rep["1"].accuracy == 0.5


# ---------------------------------------------------------------- spectra


def test_spectrum_trivial_cases(rng):
    np.testing.assert_allclose(spectrum(np.eye(3)).normalized, 1.0)
    r1 = np.outer(rng.standard_normal(7), rng.standard_normal(4))
    sp = spectrum(r1)
    assert sp.normalized[0] == 1.0 and np.all(sp.normalized[1:] < 1e-12)
    with pytest.raises(ValueError):
        spectrum(np.zeros((3, 3)))


def test_spectrum_matches_eigen_oracle(rng):
    for shape in [(50, 8), (8, 50), (200, 32)]:
        phi = rng.standard_normal(shape)
        sp = spectrum(phi)
        oracle = np.sqrt(np.sort(np.clip(np.linalg.eigvalsh(phi.T @ phi), 0, None))[::-1])[: min(shape)]
        np.testing.assert_allclose(sp.singular_values[: min(shape)], oracle, rtol=1e-8)
        assert np.all(np.diff(sp.singular_values) <= 0)
        frob = np.sum(phi**2)
        assert abs(np.sum(sp.singular_values**2) - frob) / frob < 1e-8


def test_jacobi_reconstructs(rng):
    a = rng.standard_normal((30, 6))
    u, s, v = jacobi_svd(a)
    np.testing.assert_allclose(u @ np.diag(s) @ v.T, a, atol=1e-12)
    np.testing.assert_allclose(v.T @ v, np.eye(6), atol=1e-12)
    np.testing.assert_allclose(u.T @ u, np.eye(6), atol=1e-12)


def test_tail_mass_and_compare():
    d = 10
    flat = SpectrumReport(np.ones(d), np.ones(d), d)
    rank1 = SpectrumReport(np.eye(d)[0], np.eye(d)[0], d)
    assert tail_start(10) == 1 and tail_start(32) == 4 and tail_start(64) == 7
    assert flat.tail_mass == 9.0 and rank1.tail_mass == 0.0
    assert compare_spectra(flat, rank1) == 9.0 and compare_spectra(flat, flat) == 0.0
    with pytest.raises(DimensionError):
        compare_spectra(flat, SpectrumReport(np.ones(3), np.ones(3), 3))


def test_gradient_identity(rng):
    for _ in range(20):
        phi = rng.standard_normal((100, 10))
        theta = rng.standard_normal(10)
        y = rng.integers(0, 2, 100)
        assert gradient_identity_check(phi, theta, y) <= 1e-8
    phi = rng.standard_normal((5, 2))
    theta = np.zeros(2)
    assert gradient_identity_check(phi, theta, np.full(5, 0.5)) == 0.0
