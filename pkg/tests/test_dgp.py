import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obigrad.dgp import (
    DESIGN_NAMES,
    FqeDesign,
    IvDesign,
    cached_design,
    continuation_features,
    fqe_conditional_features,
    fqe_ground_truth,
    fqe_matrix,
    fqe_sample,
    get_model,
    iv_ground_truth,
    iv_matrix,
    iv_root_design,
    iv_root_sample,
    iv_sample,
    make_design,
)
from obigrad.estimator import pseudo_outcome


def test_iv_matrix_entry():
    a = iv_matrix(IvDesign())
    expect = np.exp(-0.1) * (1 - np.exp(-24) * np.cos(2)) / 2
    assert a[0, 0] == pytest.approx(expect, abs=1e-15)
    assert a[0, 0] == pytest.approx(0.452419, abs=5e-7)
    np.testing.assert_array_equal(a, a.T)


def test_iv_parameters():
    d = IvDesign()
    np.testing.assert_allclose(d.omega_star, np.arange(1, 5) / np.sqrt(30), rtol=1e-15)
    diff = d.omega0 - d.omega_star
    direction = np.array([1.0, 1 / 3, -1 / 3, -1.0])
    np.testing.assert_allclose(diff, 0.35 * direction / np.linalg.norm(direction), rtol=1e-14)


def test_iv_sample_deterministic():
    d = IvDesign()
    a = iv_sample(d, 50, np.random.default_rng(4))
    b = iv_sample(d, 50, np.random.default_rng(4))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)


def test_iv_instrument_mean_and_variance():
    d = IvDesign()
    data = iv_sample(d, 1_000_000, np.random.default_rng(1))
    z = data.z[:, 0]
    assert abs(z.mean()) <= 3 * np.sqrt((4 * d.p + d.sigma_z2) / len(z))
    assert z.var() == pytest.approx(4 * d.p + d.sigma_z2, rel=0.01)


def test_iv_conditional_sine_tracks_formula():
    d = IvDesign()
    data = iv_sample(d, 1_000_000, np.random.default_rng(2))
    s = data.x.sum(axis=1)
    for ell in (1, 3):
        target = np.sin(data.z[:, 0] + ell)
        for lo in (-1.0, 0.0, 1.0):
            mask = (s >= lo) & (s < lo + 0.02)
            centre = np.exp(-d.sigma_z2 / 2) * np.sin(2 * s[mask] + ell)
            resid = target[mask] - centre
            assert abs(resid.mean()) <= 3 * resid.std(ddof=1) / np.sqrt(mask.sum()) + 0.01


def test_tower_property_iv():
    d = IvDesign()
    truth = iv_ground_truth(d)
    data = iv_sample(d, 400_000, np.random.default_rng(3))
    dg = d.model().dg(d.omega0, data.z)[:, :, 0]
    resid = dg - truth.jstar(data.x)
    s = data.x.sum(axis=1)
    edges = np.quantile(s, np.linspace(0, 1, 11))
    for lo, hi in zip(edges[:-1], edges[1:]):
        r = resid[(s >= lo) & (s < hi)]
        assert np.all(np.abs(r.mean(axis=0)) <= 4 * r.std(axis=0, ddof=1) / np.sqrt(len(r)))


def test_iv_truth_zero_at_star_and_affine():
    d = IvDesign()
    truth = iv_ground_truth(d)
    np.testing.assert_array_equal(truth.psi(d.omega_star), 0.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        w1, w2 = rng.standard_normal((2, 4))
        np.testing.assert_allclose(truth.psi(w1) - truth.psi(w2), truth.matrix @ (w1 - w2), atol=1e-14)


def test_iv_oracle_score_matches_closed_form():
    d = IvDesign()
    truth = iv_ground_truth(d)
    data = iv_sample(d, 1_000_000, np.random.default_rng(5))
    scores = pseudo_outcome(data, truth.oracle_nuisances(d.omega0), d.model(), d.omega0)
    se = scores.std(axis=0, ddof=1) / np.sqrt(len(scores))
    assert np.all(np.abs(scores.mean(axis=0) - truth.psi(d.omega0)) <= 3 * se)


def test_oracle_score_error_rate():
    d = IvDesign()
    truth = iv_ground_truth(d)
    psi = truth.psi(d.omega0)
    oracle = truth.oracle_nuisances(d.omega0)
    model = d.model()
    sizes = (1_000, 10_000, 100_000, 1_000_000)
    rms = []
    for n in sizes:
        reps = 8 if n == sizes[-1] else 24
        errs = []
        for r in range(reps):
            data = iv_sample(d, n, np.random.default_rng([n, r]))
            errs.append(np.sum((pseudo_outcome(data, oracle, model, d.omega0).mean(axis=0) - psi) ** 2))
        rms.append(np.sqrt(np.mean(errs)))
    slope = np.polyfit(np.log(sizes), np.log(rms), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_iv_root_truth():
    design, truth = iv_root_design()
    assert truth.psi([2.0])[0] == 0.0
    assert truth.psi([2.5])[0] == pytest.approx(6.0)
    x = truth.sample_x(1_000_000, np.random.default_rng(0))
    j2 = truth.jstar(x)[:, 0] ** 2
    assert abs(j2.mean() - 12.0) <= 3 * j2.std(ddof=1) / np.sqrt(len(j2))


def test_iv_root_sample_shapes():
    design, _ = iv_root_design()
    data = iv_root_sample(design, 10, np.random.default_rng(0))
    assert data.dims == (3, 1, 1)


def test_fqe_features_at_zero():
    d = FqeDesign()
    out = fqe_conditional_features(d, 0.0, 0.0)
    np.testing.assert_allclose(out, 0.8 * np.array([0.0, np.exp(-0.02), 0.0, 0.04]), atol=1e-15)


def test_fqe_feature_value():
    d = FqeDesign()
    out = fqe_conditional_features(d, 1.0, 1.0)
    assert out[0] == pytest.approx(0.8 * np.exp(-0.02) * np.sin(1.2), abs=1e-15)
    assert out[0] == pytest.approx(0.73086, abs=1e-5)


def test_fqe_trig_has_two_entries():
    d = FqeDesign(features="trig", omega_star_values=(0.65, -0.45))
    assert fqe_conditional_features(d, 0.3, 1.0).shape == (2,)


@pytest.mark.parametrize("s,a", [(0.3, 1.0), (-1.1, 0.0), (2.0, 1.0)])
def test_fqe_features_match_monte_carlo(s, a):
    d = FqeDesign()
    rng = np.random.default_rng(abs(int(100 * s)) + int(a))
    s_next = d.rho * s + d.tau * a + d.sigma_s * rng.standard_normal(1_000_000)
    draws = d.gamma * continuation_features("full", s_next)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - fqe_conditional_features(d, s, a)) <= 3 * se)


def test_fqe_sample_marginals():
    d = FqeDesign()
    data = fqe_sample(d, 1_000_000, np.random.default_rng(6))
    a = data.x[:, 1]
    assert abs(a.mean() - 0.5) <= 3 * 0.5 / np.sqrt(len(a))
    s, r = data.z[:, 0], data.z[:, 2]
    mask = (np.abs(s) < 0.02) & (a == 1)
    assert abs(r[mask].mean() - 0.5) <= 3 * r[mask].std(ddof=1) / np.sqrt(mask.sum()) + 0.01


def test_fqe_logistic_policy():
    d = FqeDesign(gamma=0.9, policy="logistic")
    data = fqe_sample(d, 400_000, np.random.default_rng(7))
    s, a = data.x[:, 0], data.x[:, 1]
    mask = np.abs(s - 1.0) < 0.05
    assert a[mask].mean() == pytest.approx(1 / (1 + np.exp(-0.5)), abs=0.02)


def test_fqe_quadrature_stable_under_node_doubling():
    for design in (FqeDesign(), FqeDesign(gamma=0.9, policy="logistic"), FqeDesign(features="trig", omega_star_values=(0.65, -0.45))):
        assert np.max(np.abs(fqe_matrix(design, 64) - fqe_matrix(design, 128))) <= 1e-10


def test_fqe_quadrature_node_floor():
    with pytest.raises(ValueError):
        fqe_matrix(FqeDesign(), nodes=8)


def test_fqe_matrix_matches_monte_carlo():
    d = FqeDesign()
    m = fqe_matrix(d)
    truth = fqe_ground_truth(d)
    rng = np.random.default_rng(8)
    total = np.zeros((4, 4))
    total_sq = np.zeros((4, 4))
    n = 0
    for _ in range(10):
        x = truth.sample_x(1_000_000, rng)
        jm = truth.jstar(x)
        outer = jm[:, :, None] * jm[:, None, :]
        total += outer.sum(axis=0)
        total_sq += (outer**2).sum(axis=0)
        n += len(x)
    mean = total / n
    se = np.sqrt((total_sq / n - mean**2) / n)
    assert np.all(np.abs(mean - m) <= 3 * se + 1e-15)


def test_fqe_oracle_nuisances():
    d = FqeDesign()
    truth = fqe_ground_truth(d)
    x = np.array([[0.4, 1.0], [-0.2, 0.0]])
    h, j, m = truth.oracle_nuisances(d.omega0).evaluate(x)
    reward = np.sin(x[:, 0]) + 0.5 * x[:, 1] + 0.25 * x[:, 0] * x[:, 1]
    jm = fqe_conditional_features(d, x[:, 0], x[:, 1])
    np.testing.assert_allclose(h[:, 0], reward + jm @ d.omega0)
    np.testing.assert_allclose(m[:, 0], reward + jm @ d.omega_star)
    assert j.shape == (2, 4, 1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_fqe_truth_is_affine(seed):
    truth = fqe_ground_truth(FqeDesign())
    w1, w2 = np.random.default_rng(seed).standard_normal((2, 4))
    np.testing.assert_allclose(truth.psi(w1) - truth.psi(w2), truth.matrix @ (w1 - w2), atol=1e-13)


def test_fqe_bellman_derivative():
    model = FqeDesign().model()
    z = fqe_sample(FqeDesign(), 20, np.random.default_rng(0)).z
    assert model.check_derivative(z) < 1e-5


@pytest.mark.parametrize("name", DESIGN_NAMES)
def test_registry(name):
    b = make_design(name)
    data = b.sample(20, np.random.default_rng(0))
    assert data.dims[2] == (1 if name.startswith("iv") else 4)
    assert b.truth.psi(b.truth.omega_star).tolist() == [0.0] * b.model.d
    assert cached_design(name) is cached_design(name)


def test_registry_unknown():
    with pytest.raises(ValueError):
        make_design("nope")
    with pytest.raises(ValueError):
        get_model("nope")


def test_named_models():
    assert get_model("iv_sine").d == 4
    assert get_model("iv_linear").d == 1
    assert get_model("fqe_full").d == 4
    assert get_model("fqe_trig").d == 2
