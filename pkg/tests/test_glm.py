import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from objpert_pdp.errors import DimensionMismatch, NotAMember
from objpert_pdp.glm import (
    DataPoint,
    Dataset,
    GlmLoss,
    ObjectiveSpec,
    normalize,
    objective_grad,
    objective_hessian,
    objective_value,
    point_grad,
    point_hessian,
    read_csv,
    write_csv,
)


def random_problem(rng, kind=None):
    kind = kind or ("logistic" if rng.random() < 0.5 else "squared")
    n, d = int(rng.integers(0, 30)), int(rng.integers(1, 6))
    X = rng.standard_normal((n, d)) / np.sqrt(d)
    y = (rng.random(n) < 0.5).astype(float) if kind == "logistic" else rng.uniform(-1, 1, n)
    spec = ObjectiveSpec.of(kind, float(rng.uniform(0.1, 3)))
    theta = rng.uniform(-10, 10, d) / np.sqrt(d)
    return spec, Dataset(X, y) if n else Dataset.empty(d), theta, rng.standard_normal(d)


def test_value_empty_squared():
    spec = ObjectiveSpec.of("squared", 1.0)
    assert objective_value(spec, Dataset.empty(1), [0.0], [0.0]) == 0.0


def test_value_single_squared():
    spec = ObjectiveSpec.of("squared", 1.0)
    D = Dataset.from_points([DataPoint([1.0], 0.0)])
    assert objective_value(spec, D, [0.5], [-1.0]) == pytest.approx(-0.25)


def test_value_logistic_zero_feature():
    spec = ObjectiveSpec.of("logistic", 2.0)
    D = Dataset.from_points([DataPoint([0.0, 0.0], 1.0)])
    theta = np.array([0.3, -1.2])
    assert objective_value(spec, D, theta, [0, 0]) == pytest.approx(np.log(2) + theta @ theta)


def test_grad_stationary_example():
    spec = ObjectiveSpec.of("squared", 1.0)
    D = Dataset.from_points([DataPoint([1.0], 0.0)])
    assert objective_grad(spec, D, [0.5], [-1.0]) == pytest.approx([0.0], abs=1e-15)


def test_grad_ridge_only():
    spec = ObjectiveSpec.of("logistic", 1.7)
    t = np.array([1.0, -2.0, 0.5])
    assert np.allclose(objective_grad(spec, Dataset.empty(3), t, np.zeros(3)), 1.7 * t)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(50):
        spec, D, theta, b = random_problem(rng)
        g = objective_grad(spec, D, theta, b)
        fd = np.array(
            [
                (objective_value(spec, D, theta + h * e, b) - objective_value(spec, D, theta - h * e, b)) / (2 * h)
                for e in np.eye(D.d)
            ]
        )
        assert np.max(np.abs(g - fd)) <= 1e-6


def test_hessian_matches_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-5
    for _ in range(50):
        spec, D, theta, b = random_problem(rng)
        H = objective_hessian(spec, D, theta)
        cols = [
            (objective_grad(spec, D, theta + h * e, b) - objective_grad(spec, D, theta - h * e, b)) / (2 * h)
            for e in np.eye(D.d)
        ]
        assert np.max(np.abs(H - np.column_stack(cols))) <= 1e-5


def test_hessian_examples():
    assert np.array_equal(objective_hessian(ObjectiveSpec.of("logistic", 3.0), Dataset.empty(2), [1, 1]), 3 * np.eye(2))
    spec = ObjectiveSpec.of("squared", 1.0)
    D = Dataset.from_points([DataPoint([1.0, 0.0], 0.0)])
    assert np.allclose(objective_hessian(spec, D, [0.3, 0.2]), np.diag([2.0, 1.0]))


def test_hessian_smallest_eigenvalue_at_least_lambda():
    rng = np.random.default_rng(2)
    for _ in range(100):
        spec, D, theta, _ = random_problem(rng)
        H = objective_hessian(spec, D, theta)
        assert np.array_equal(H, H.T)
        assert np.linalg.eigvalsh(H)[0] >= spec.lam * (1 - 1e-12)


def test_logistic_derivative_bounds():
    rng = np.random.default_rng(3)
    t = rng.standard_normal(100_000) * 20
    y = (rng.random(100_000) < 0.5).astype(float)
    loss = GlmLoss("logistic")
    f2 = loss.d2f(t, y)
    assert np.all(f2 >= 0) and np.all(f2 <= 0.25)
    assert np.all(np.abs(loss.df(t, y)) <= 1)
    assert (loss.xi, loss.beta) == (1.0, 0.25)


@given(st.floats(-1e4, 1e4), st.sampled_from([0.0, 1.0]))
def test_logistic_primitives_finite(t, y):
    loss = GlmLoss("logistic")
    assert np.isfinite(loss.f(t, y)) and loss.f(t, y) >= 0
    assert np.isfinite(loss.df(t, y)) and np.isfinite(loss.d2f(t, y))


def test_logistic_large_argument_values():
    loss = GlmLoss("logistic")
    assert loss.f(800.0, 0.0) == pytest.approx(800.0)
    assert loss.f(-800.0, 0.0) == pytest.approx(0.0, abs=1e-300)
    assert loss.d2f(800.0, 1.0) == 0.0


def test_squared_loss_constants():
    loss = GlmLoss("squared")
    assert loss.beta == 1.0 and np.isinf(loss.xi)
    assert loss.d2f(3.0, 0.2) == 1.0
    assert loss.f(2.0, 0.0) == 2.0


def test_unknown_loss_and_bad_lambda():
    with pytest.raises(ValueError):
        GlmLoss("hinge")
    with pytest.raises(ValueError):
        ObjectiveSpec.of("logistic", 0.0)


def test_point_derivatives_are_rank_one():
    loss = GlmLoss("logistic")
    z = DataPoint([0.6, -0.8], 1.0)
    theta = np.array([0.2, 0.4])
    t = z.x @ theta
    assert np.allclose(point_grad(loss, z, theta), loss.df(t, 1.0) * z.x)
    assert np.allclose(point_hessian(loss, z, theta), loss.d2f(t, 1.0) * np.outer(z.x, z.x))


def test_dimension_mismatch():
    spec = ObjectiveSpec.of("logistic", 1.0)
    D = Dataset(np.ones((2, 3)) * 0.1, np.zeros(2))
    with pytest.raises(DimensionMismatch):
        objective_grad(spec, D, np.zeros(2), np.zeros(3))
    with pytest.raises(DimensionMismatch):
        Dataset(np.ones((2, 3)), np.zeros(3))


def test_neighbors():
    D = Dataset(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([0.0, 1.0]))
    z = DataPoint([0.5, 0.5], 1.0)
    assert D.add(z).n == 3 and D.add(z).contains(z)
    assert D.remove(D.point(0)).n == 1
    with pytest.raises(NotAMember):
        D.remove(z)
    # exact match only
    with pytest.raises(NotAMember):
        D.remove(DataPoint([0.1, 0.2 + 1e-15], 0.0))


@given(arrays(np.float64, (8, 3), elements=st.floats(-50, 50)))
@settings(max_examples=50)
def test_normalize_caps_norms(X):
    D = normalize(Dataset(X, np.linspace(-3, 3, 8)), clip_labels=True)
    assert np.all(np.linalg.norm(D.X, axis=1) <= 1 + 1e-12)
    assert np.all(np.abs(D.y) <= 1 + 1e-12)


def test_normalize_leaves_small_rows():
    X = np.array([[0.3, 0.4], [0.0, 0.1]])
    D = normalize(Dataset(X, np.array([0.0, 1.0])))
    assert np.array_equal(D.X, X)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    D = Dataset(rng.standard_normal((5, 3)), rng.random(5))
    write_csv(D, tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, D.X) and np.array_equal(back.y, D.y)
