import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lamlab.datagen import NoiseSpec, make_env, sample_batch
from lamlab.evaluator import fit_probes, latent_of, llo, llo_from_latents, score_probe
from lamlab.linear_lam import LinearLamParams, init_params
from lamlab.numerics import make_rng
from lamlab.oracle import perfect_denoise_solution


def exact_lam(env):
    """Noise-free perfect model: z reads out q, A = I."""
    Q, _ = np.linalg.qr(env.X)
    D = Q.T
    return LinearLamParams(A=np.eye(env.d_o), B=Q.copy(), C=-D, D=D.copy())


def test_probe_on_identity_latent_is_exact():
    rng = make_rng(0)
    q = rng.standard_normal((400, 5))
    probe = fit_probes(q[:200], {"q": q[:200]})["q"]
    assert score_probe(probe, q[200:], q[200:], 5.0) <= 1e-8


def test_probe_on_independent_latent_approaches_one():
    rng = make_rng(1)
    z = rng.standard_normal((40_000, 3))
    y = rng.standard_normal((40_000, 4))
    probe = fit_probes(z[:20_000], {"y": y[:20_000]})["y"]
    assert score_probe(probe, z[20_000:], y[20_000:], 4.0) == pytest.approx(1.0, abs=0.02)


def test_probe_matches_normal_equations():
    rng = make_rng(2)
    z = rng.standard_normal((300, 4)) @ rng.standard_normal((4, 4)) + 0.5
    y = z @ rng.standard_normal((4, 3)) + rng.standard_normal((300, 3))
    probe = fit_probes(z, {"y": y}, ridge=0.0)["y"]
    Z1 = np.hstack([z, np.ones((300, 1))])
    W = np.linalg.solve(Z1.T @ Z1, Z1.T @ y)
    np.testing.assert_allclose(probe.W, W[:4].T, atol=1e-10)
    np.testing.assert_allclose(probe.b, W[4], atol=1e-10)


def test_degenerate_latent_gives_flagged_mean_predictor():
    y = make_rng(3).standard_normal((50, 2))
    probe = fit_probes(np.full((50, 3), 2.0), {"y": y})["y"]
    assert probe.degenerate
    np.testing.assert_allclose(probe.predict(np.zeros((1, 3)))[0], y.mean(axis=0))


def test_perfect_lam_scores_two():
    env = make_env(32, 4, 4, 1.0, seed=0)
    for kind in ("surrogate", "true_latent"):
        rep = llo(exact_lam(env), env, 4000, kind)
        assert rep.llo == pytest.approx(2.0, abs=0.05)
        assert rep.nmse_eps == 1.0
        assert rep.llo == pytest.approx(-rep.nmse_q + rep.nmse_eps + rep.nmse_o, abs=1e-15)


def test_untrained_model_scores_about_one():
    env = make_env(32, 4, 4, 1.0, NoiseSpec.iid(0.5), seed=1)
    scores = [llo(init_params(32, 4, None, make_rng(s)), env, 8000, "true_latent").llo for s in range(5)]
    # an untrained latent mixes o and the change evenly: modest information about each
    assert 0.6 <= np.mean(scores) <= 1.4


def test_noise_encoder_drops_below_one():
    env = make_env(32, 4, 4, 1.0, NoiseSpec.exo(2.0), seed=2, orthogonalize_Y_against_X=True)
    Qy, _ = np.linalg.qr(env.Y)
    D = Qy.T
    p = LinearLamParams(A=np.eye(32), B=Qy.copy(), C=-D, D=D.copy())
    rep = llo(p, env, 8000, "true_latent")
    assert rep.nmse_eps <= 0.05
    assert rep.llo < 1.0


def test_denoising_encoder_is_optimal():
    env = make_env(32, 4, 4, 1.0, NoiseSpec.exo(2.0), seed=2, orthogonalize_Y_against_X=True)
    B, D, _ = perfect_denoise_solution(env, 4)
    p = LinearLamParams(A=np.eye(32), B=B, C=-D, D=D)
    assert llo(p, env, 8000, "true_latent").llo == pytest.approx(2.0, abs=0.05)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_llo_invariant_to_invertible_latent_map(seed):
    env = make_env(12, 3, 3, 1.0, NoiseSpec.mixed(0.3, 0.5), chi=0.2, seed=seed)
    rng = make_rng(seed)
    p = init_params(12, 4, None, rng)
    b = sample_batch(env, 2000, rng=rng)
    fit, score = b.split(1000)
    z_fit, z_score = latent_of(p, fit, "true_latent"), latent_of(p, score, "true_latent")
    M = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    base = llo_from_latents(z_fit, fit, z_score, score, env, ridge=0.0)
    mapped = llo_from_latents(z_fit @ M.T, fit, z_score @ M.T, score, env, ridge=0.0)
    for name in ("nmse_q", "nmse_eps", "nmse_o", "llo"):
        assert abs(getattr(base, name) - getattr(mapped, name)) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), d_z=st.integers(1, 6))
def test_nmse_respects_mean_predictor_bound(seed, d_z):
    n_eval = 4000
    env = make_env(16, 3, 3, 1.0, NoiseSpec.mixed(0.4, 0.6), seed=seed)
    p = init_params(16, d_z, None, make_rng(seed))
    rep = llo(p, env, n_eval, "true_latent", rng=make_rng(seed + 1))
    for v in (rep.nmse_q, rep.nmse_eps, rep.nmse_o):
        assert 0.0 <= v <= 1.0 + 4.0 / np.sqrt(n_eval)


def test_llo_is_deterministic_and_validates():
    env = make_env(16, 3, 3, 1.0, NoiseSpec.iid(0.3), seed=0)
    p = init_params(16, 3, None, make_rng(0))
    assert llo(p, env, 1000) == llo(p, env, 1000)
    with pytest.raises(ValueError):
        llo(p, env, 2)
    with pytest.raises(ValueError):
        latent_of(p, sample_batch(env, 4, rng=make_rng(0)), "pixels")


def test_llo_vs_d_z_plateaus_at_d_a():
    env = make_env(32, 4, 4, 1.0, seed=5, action_scales=(1.0, 1.5, 2.0, 2.5))
    Q, _ = np.linalg.qr(env.X)
    # the PCA optimum with d_z latents keeps the top-d_z action directions
    U, s, _ = np.linalg.svd(env.X, full_matrices=False)
    scores = {}
    for d_z in (1, 2, 4, 6):
        k = min(d_z, 4)
        B = np.zeros((32, d_z))
        B[:, :k] = U[:, :k]
        if d_z > 4:
            B[:, 4:] = np.linalg.qr(np.hstack([Q, make_rng(0).standard_normal((32, d_z - 4))]))[0][:, 4:]
        D = B.T.copy()
        scores[d_z] = llo(LinearLamParams(A=np.eye(32), B=B, C=-D, D=D), env, 8000).llo
    assert scores[4] == pytest.approx(2.0, abs=0.05)
    assert scores[6] == pytest.approx(2.0, abs=0.05)
    assert scores[1] < scores[2] < scores[4] - 0.05
