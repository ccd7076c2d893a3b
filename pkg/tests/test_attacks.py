
import numpy as np
import pytest
from hypothesis import given, strategies as st

from cslrobust import tensor as T
from cslrobust.attacks import (
    AttackConfig, AttackError, CorruptionConfig, CORRUPTION_LEVELS, contrastive_instance_attack,
    corrupt, fgsm, gaussian_kernel, norm_of, pgd, project, run_attack,
)
from cslrobust.errors import ContractError
from cslrobust.losses import cross_entropy_loss
from cslrobust.models import EncoderConfig, encode, encoder_init
from cslrobust.tensor import Tensor

UNBOUNDED = (-np.inf, np.inf)


def linear_loss(grad):
    """loss(x) = sum(x * grad) so the input gradient is exactly ``grad``."""
    g = Tensor(np.asarray(grad, dtype=np.float64))
    return lambda xt: T.sum(T.mul(xt, g))


def linear_classifier(seed=0, dim=2, classes=3, n=32):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(dim, classes)))
    b = Tensor(rng.normal(size=classes))
    x = rng.normal(size=(n, dim))
    y = rng.integers(0, classes, size=n)

    def loss_fn(xt):
        return cross_entropy_loss(T.add_rowvec(T.matmul(xt, w), b), y, reduction="none")

    return loss_fn, x


def per_sample_loss(loss_fn, x):
    return loss_fn(Tensor(x)).data


def grid_project_l1(v, eps, rounds=8, n=401):
    """Nearest point of the 2-D l1 ball by repeated zooming grid search."""
    center, half = np.zeros(2), eps
    best = np.zeros(2)
    for _ in range(rounds):
        axis = np.linspace(-half, half, n)
        pts = center + np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)
        pts = pts[np.abs(pts).sum(axis=1) <= eps]
        best = pts[np.argmin(np.sum((pts - v) ** 2, axis=1))]
        center, half = best, 4 * half / (n - 1)
    return best


# ------------------------------------------------------------------ FGSM


def test_fgsm_example():
    cfg = AttackConfig(kind="fgsm", epsilon=0.1)
    out = fgsm(linear_loss([[0.3, -0.2]]), np.array([[0.5, 0.5]]), cfg)
    np.testing.assert_allclose(out, [[0.6, 0.4]], atol=1e-15)


def test_fgsm_zero_epsilon_is_identity():
    x = np.array([[0.5, 0.5]])
    out = fgsm(linear_loss([[0.3, -0.2]]), x, AttackConfig(kind="fgsm", epsilon=0.0))
    assert np.array_equal(out, x)


def test_fgsm_zero_gradient_is_identity():
    x = np.array([[0.2, 0.7]])
    out = fgsm(linear_loss([[0.0, 0.0]]), x, AttackConfig(kind="fgsm", epsilon=0.1))
    assert np.array_equal(out, x)


def test_fgsm_nan_gradient_raises():
    with pytest.raises(AttackError):
        fgsm(linear_loss([[np.nan, 0.1]]), np.array([[0.5, 0.5]]), AttackConfig(kind="fgsm", epsilon=0.1))


def test_fgsm_respects_clamp():
    out = fgsm(linear_loss([[1.0, -1.0]]), np.array([[0.95, 0.05]]), AttackConfig(kind="fgsm", epsilon=0.1))
    np.testing.assert_array_equal(out, [[1.0, 0.0]])


def test_fgsm_budget_must_be_linf():
    with pytest.raises(ContractError):
        AttackConfig(kind="fgsm", norm="l2")


def test_fgsm_rejects_other_kinds():
    with pytest.raises(ContractError):
        fgsm(linear_loss([[1.0]]), np.zeros((1, 1)), AttackConfig(kind="pgd"))


# ------------------------------------------------------------------ projection


def test_project_l2_example():
    np.testing.assert_allclose(project(np.array([0.6, 0.8]), "l2", 0.5), [0.3, 0.4], atol=1e-15)


def test_project_linf_example():
    np.testing.assert_array_equal(project(np.array([0.2, -0.9]), "linf", 0.5), [0.2, -0.5])


def test_project_l1_example():
    np.testing.assert_allclose(project(np.array([0.6, -0.2]), "l1", 0.5), [0.45, -0.05], atol=1e-12)


@pytest.mark.parametrize("v", [(0.6, -0.2), (0.1, 0.9), (-0.3, -0.3), (0.2, 0.1), (1.5, 0.0)])
def test_project_l1_matches_grid_search(v):
    v = np.array(v)
    np.testing.assert_allclose(project(v, "l1", 0.5), grid_project_l1(v, 0.5), atol=1e-4)


def test_project_inside_ball_is_identity():
    v = np.array([0.1, -0.1, 0.05])
    for norm in ("linf", "l2", "l1"):
        assert np.array_equal(project(v, norm, 0.5), v)


def test_project_is_per_sample():
    d = np.array([[0.6, 0.8], [0.03, 0.04]])
    np.testing.assert_allclose(project(d, "l2", 0.5), [[0.3, 0.4], [0.03, 0.04]], atol=1e-15)


def test_project_rejects_unknown_norm_and_negative_eps():
    with pytest.raises(ContractError):
        project(np.ones(2), "l3", 0.5)
    with pytest.raises(ContractError):
        project(np.ones(2), "l2", -0.1)


vectors = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=6).map(np.array)
norms = st.sampled_from(["linf", "l2", "l1"])
radii = st.floats(0.0, 3.0)


@given(vectors, norms, radii)
def test_projection_is_idempotent(v, norm, eps):
    once = project(v, norm, eps)
    np.testing.assert_allclose(project(once, norm, eps), once, atol=1e-12)


@given(vectors, norms, radii)
def test_projection_lands_in_ball(v, norm, eps):
    assert norm_of(project(v, norm, eps), norm)[0] <= eps + 1e-9


@given(vectors, radii)
def test_l1_projection_is_nearest_among_samples(v, eps):
    # any feasible point is at least as far away as the projection
    p = project(v, "l1", eps)
    rng = np.random.default_rng(0)
    others = project(rng.normal(size=(200, v.size)) * 3, "l1", eps)
    assert np.linalg.norm(v - p) <= np.min(np.linalg.norm(others - v, axis=1)) + 1e-9


# ------------------------------------------------------------------ PGD


def test_pgd_single_step_equals_fgsm():
    loss_fn, x = linear_classifier(seed=1)
    one = pgd(loss_fn, x, AttackConfig(kind="pgd", epsilon=0.3, step_size=0.3, iterations=1,
                                       random_start=False, clamp=UNBOUNDED))
    ref = fgsm(loss_fn, x, AttackConfig(kind="fgsm", epsilon=0.3, clamp=UNBOUNDED))
    assert np.array_equal(one, ref)


@pytest.mark.parametrize("norm", ["linf", "l2", "l1"])
def test_more_iterations_never_lower_loss(norm):
    loss_fn, x = linear_classifier(seed=2)
    base = dict(kind="pgd", norm=norm, epsilon=0.5, step_size=0.1, random_start=False, clamp=UNBOUNDED)
    short = pgd(loss_fn, x, AttackConfig(iterations=1, **base))
    long = pgd(loss_fn, x, AttackConfig(iterations=40, **base))
    assert np.all(per_sample_loss(loss_fn, long) >= per_sample_loss(loss_fn, short))
    assert per_sample_loss(loss_fn, long).sum() > per_sample_loss(loss_fn, short).sum()


@pytest.mark.parametrize("norm", ["linf", "l2", "l1"])
def test_pgd_increases_loss_over_clean(norm):
    loss_fn, x = linear_classifier(seed=3)
    adv = pgd(loss_fn, x, AttackConfig(norm=norm, epsilon=0.5, iterations=10, clamp=UNBOUNDED, seed=4))
    assert np.all(per_sample_loss(loss_fn, adv) >= per_sample_loss(loss_fn, x) - 1e-12)


def test_pgd_is_deterministic_per_seed():
    loss_fn, x = linear_classifier(seed=5)
    cfg = AttackConfig(norm="l2", epsilon=0.5, iterations=5, seed=11, clamp=UNBOUNDED)
    assert np.array_equal(pgd(loss_fn, x, cfg), pgd(loss_fn, x, cfg))
    other = pgd(loss_fn, x, AttackConfig(norm="l2", epsilon=0.5, iterations=5, seed=12, clamp=UNBOUNDED))
    assert not np.array_equal(pgd(loss_fn, x, cfg), other)


def test_pgd_zero_epsilon_is_identity():
    loss_fn, x = linear_classifier(seed=6)
    for norm in ("linf", "l2", "l1"):
        out = pgd(loss_fn, x, AttackConfig(norm=norm, epsilon=0.0, iterations=3, clamp=UNBOUNDED))
        assert np.array_equal(out, x)


def test_run_attack_dispatches_on_kind():
    loss_fn, x = linear_classifier(seed=7)
    cfg = AttackConfig(kind="fgsm", epsilon=0.2, clamp=UNBOUNDED)
    assert np.array_equal(run_attack(loss_fn, x, cfg), fgsm(loss_fn, x, cfg))


@given(
    st.integers(0, 2**31 - 1), norms, st.floats(0.0, 1.0), st.integers(1, 6),
    st.booleans(), st.sampled_from([(0.0, 1.0), (-0.5, 0.5), UNBOUNDED]),
)
def test_attack_output_respects_budget_and_clamp(seed, norm, eps, iters, start, clamp):
    rng = np.random.default_rng(seed)
    lo, hi = clamp
    x = rng.uniform(max(lo, -1.0), min(hi, 1.0), size=(8, 3))
    w = Tensor(rng.normal(size=(3, 2)))
    y = rng.integers(0, 2, size=8)

    def loss_fn(xt):
        return cross_entropy_loss(T.matmul(xt, w), y, reduction="none")

    kind = "fgsm" if iters == 1 and norm == "linf" else "pgd"
    cfg = AttackConfig(kind=kind, norm=norm, epsilon=eps, iterations=iters, random_start=start,
                       clamp=clamp, seed=seed)
    out = run_attack(loss_fn, x, cfg)
    assert np.all(norm_of(out - x, norm) <= eps + 1e-9)
    assert np.all(out >= lo) and np.all(out <= hi)


def test_attack_config_validation():
    with pytest.raises(ContractError):
        AttackConfig(kind="cw")
    with pytest.raises(ContractError):
        AttackConfig(norm="l0")
    with pytest.raises(ContractError):
        AttackConfig(epsilon=-1)
    with pytest.raises(ContractError):
        AttackConfig(iterations=0)
    with pytest.raises(ContractError):
        AttackConfig(clamp=(1.0, 0.0))


def test_attack_key_and_default_step():
    cfg = AttackConfig(kind="pgd", norm="l2", epsilon=0.5, iterations=7)
    assert cfg.key == "pgd-l2-eps0.5-it7"
    assert cfg.alpha == pytest.approx(0.05)
    assert AttackConfig(kind="fgsm", epsilon=0.3).alpha == 0.3


# ------------------------------------------------------------------ contrastive instance attack


@pytest.fixture
def small_encoder():
    return encoder_init(EncoderConfig(input_dim=4, hidden_widths=(8,), embedding_dim=3, seed=0))


def _views(rng, n=6, dim=4):
    x = rng.normal(size=(n, dim))
    return x, x + 0.05 * rng.normal(size=x.shape)


def _negatives(enc, rng, m=10, dim=4):
    return encode(enc, rng.normal(size=(m, dim))).data


def test_instance_attack_zero_epsilon_is_identity(small_encoder, rng):
    x, pos = _views(rng)
    cfg = AttackConfig(kind="contrastive_instance", epsilon=0.0, iterations=3, clamp=UNBOUNDED)
    out = contrastive_instance_attack(small_encoder, x, pos, _negatives(small_encoder, rng), cfg)
    assert np.array_equal(out, x)


def test_instance_attack_does_not_raise_positive_similarity(small_encoder, rng):
    x, pos = _views(rng)
    cfg = AttackConfig(kind="contrastive_instance", epsilon=0.3, iterations=10, random_start=False,
                       clamp=UNBOUNDED)
    out = contrastive_instance_attack(small_encoder, x, pos, _negatives(small_encoder, rng), cfg)
    zp = encode(small_encoder, pos).data
    before = np.sum(encode(small_encoder, x).data * zp, axis=1)
    after = np.sum(encode(small_encoder, out).data * zp, axis=1)
    assert np.all(after <= before + 1e-12)
    assert after.sum() < before.sum()


@pytest.mark.parametrize("norm", ["linf", "l2", "l1"])
def test_instance_attack_respects_budget(small_encoder, rng, norm):
    x, pos = _views(rng)
    cfg = AttackConfig(kind="contrastive_instance", norm=norm, epsilon=0.2, iterations=4,
                       clamp=(-1.0, 1.0))
    x = np.clip(x, -1, 1)
    out = contrastive_instance_attack(small_encoder, x, pos, _negatives(small_encoder, rng), cfg)
    assert np.all(norm_of(out - x, norm) <= 0.2 + 1e-9)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_instance_attack_leaves_encoder_untouched(small_encoder, rng):
    before = [p.data.copy() for p in small_encoder.parameters]
    x, pos = _views(rng)
    cfg = AttackConfig(kind="contrastive_instance", epsilon=0.2, iterations=2, clamp=UNBOUNDED)
    contrastive_instance_attack(small_encoder, x, pos, _negatives(small_encoder, rng), cfg)
    for b, p in zip(before, small_encoder.parameters):
        assert np.array_equal(b, p.data)
        assert p.grad is None or not np.any(p.grad)


# ------------------------------------------------------------------ corruptions


def test_brightness_example():
    out = corrupt(np.full((3, 4, 4), 0.5), CorruptionConfig("brightness", 1))
    np.testing.assert_allclose(out, 0.55, atol=1e-15)


def test_contrast_on_constant_image_is_identity():
    img = np.full((3, 4, 4), 0.3)
    for sev in (1, 2, 3):
        np.testing.assert_allclose(corrupt(img, CorruptionConfig("contrast", sev)), img, atol=1e-15)


@pytest.mark.parametrize("sev", [1, 2, 3])
def test_blur_of_delta_preserves_mass(sev):
    img = np.zeros((1, 16, 16))
    img[0, 8, 8] = 1.0
    out = corrupt(img, CorruptionConfig("gaussian_blur", sev), clamp=UNBOUNDED)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert out[0, 8, 8] < 1.0


def test_blur_rejects_vectors():
    with pytest.raises(ContractError):
        corrupt(np.zeros((4, 8)), CorruptionConfig("gaussian_blur", 1))


def test_gaussian_noise_is_seeded_and_clamped():
    x = np.full((5, 3, 4, 4), 0.5)
    cfg = CorruptionConfig("gaussian_noise", 3)
    a, b = corrupt(x, cfg, seed=1), corrupt(x, cfg, seed=1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, corrupt(x, cfg, seed=2))
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_severity_strengths_are_monotone():
    for kind, levels in CORRUPTION_LEVELS.items():
        if kind == "contrast":
            assert levels[0] > levels[1] > levels[2]
        else:
            assert levels[0] < levels[1] < levels[2]


def test_corruption_config_validation():
    with pytest.raises(ContractError):
        CorruptionConfig("fog", 1)
    with pytest.raises(ContractError):
        CorruptionConfig("brightness", 4)
    assert CorruptionConfig("contrast", 2).key == "contrast-s2"


def test_gaussian_kernel_is_normalized_and_symmetric():
    for std in (0.5, 1.0, 1.5):
        k = gaussian_kernel(std)
        assert k.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(k, k[::-1])
        assert len(k) % 2 == 1


def test_contrast_per_image_mean_is_preserved(rng):
    x = rng.uniform(0.2, 0.8, size=(4, 3, 4, 4))
    out = corrupt(x, CorruptionConfig("contrast", 3))
    np.testing.assert_allclose(out.mean(axis=(1, 2, 3)), x.mean(axis=(1, 2, 3)), atol=1e-12)
