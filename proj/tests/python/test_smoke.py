import json

import numpy as np
import pytest

import ssvi


def random_spd(rng, d):
    b = rng.standard_normal((d, d))
    return b @ b.T / d + 0.5 * np.eye(d)


def star_cov_dense(s):
    p = np.linalg.inv(s)
    out = s.copy()
    for i in range(1, len(s)):
        for j in range(1, len(s)):
            out[i, j] = s[0, i] * s[0, j] / s[0, 0] + (1 / p[i, i] if i == j else 0)
    return out


def gaussian_kl(m0, c0, m1, c1):
    d = len(m0)
    p1 = np.linalg.inv(c1)
    diff = m1 - m0
    return 0.5 * (np.trace(p1 @ c0) + diff @ p1 @ diff - d + np.linalg.slogdet(c1)[1] - np.linalg.slogdet(c0)[1])


def test_star_covariance_matches_dense_formula():
    rng = np.random.default_rng(0)
    for d in range(2, 8):
        s = random_spd(rng, d)
        np.testing.assert_allclose(ssvi.ssvi_gaussian(np.zeros(d), s), star_cov_dense(s), atol=1e-12)


def test_gap_and_kl():
    rng = np.random.default_rng(1)
    s = random_spd(rng, 4)
    m = rng.standard_normal(4)
    star = ssvi.ssvi_gaussian(m, s)
    mf = ssvi.mfvi_gaussian(m, s)
    assert ssvi.kl_gaussians(m, star, m, s) == pytest.approx(gaussian_kl(m, star, m, s), abs=1e-12)
    gap = gaussian_kl(m, star, m, s) - gaussian_kl(m, mf, m, s)
    assert ssvi.ssvi_mfvi_gap(s) == pytest.approx(gap, abs=1e-10)
    assert ssvi.ssvi_mfvi_gap(np.array([[1.0, 0.5], [0.5, 1.0]])) == pytest.approx(0.5 * np.log(0.75), abs=1e-14)


def test_dictionary_size():
    for d, r, w in [(2, 1.0, 0.5), (3, 2.0, 0.5), (5, 4.0, 1.0)]:
        n = round(2 * r / w)
        assert ssvi.dictionary_size(d, r, w) == n + 2 * (d - 1) * n * n + 3 * (d - 1) * n


def test_mixture_bound_rejects_bad_input():
    assert np.isfinite(ssvi.mixture_log_concavity_bound(0.5, 3.0, 1.0))
    with pytest.raises(ValueError):
        ssvi.mixture_log_concavity_bound(0.5, 1.0, 3.0)


def test_small_gaussian_fit():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    fit = ssvi.fit_gaussian(np.zeros(2), cov, radius=2.0, width=1.0, step=0.004, max_iterations=200,
                            n_samples=4000, seed=3)
    fe = np.asarray(fit.free_energy)
    assert len(fe) == fit.iterations
    assert np.all(np.diff(fe) <= 1e-10)
    z = fit.evaluate(np.random.default_rng(4).standard_normal((5, 2)))
    assert z.shape == (5, 2)
    dist, se = fit.l2_distance_to_oracle(np.zeros(2), cov, mc_n=20000)
    assert dist < 1.0 and se >= 0
    again = ssvi.fit_gaussian(np.zeros(2), cov, radius=2.0, width=1.0, step=0.004, max_iterations=200,
                              n_samples=4000, seed=3)
    np.testing.assert_array_equal(fit.coefficients, again.coefficients)


def test_run_command(tmp_path):
    config = {
        "target": {"family": "gaussian", "mean": [0.0, 1.0], "cov": [[1.0, 0.3], [0.3, 2.0]]},
        "output_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    assert ssvi.run_command("oracle-gaussian", str(path)) == 0
    oracle = json.loads((tmp_path / "out" / "oracle.json").read_text())
    assert isinstance(oracle, dict) and oracle

    config["dictionary"] = {"delta": -1.0}
    path.write_text(json.dumps(config))
    assert ssvi.run_command("fit", str(path)) == 2
