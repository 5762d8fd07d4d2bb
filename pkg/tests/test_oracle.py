import numpy as np
import pytest

from modnash.errors import DegeneracyError, OracleError, UnboundednessError
from modnash.model import build_affine_game, build_minimax_game, build_multivariate_minimization, build_quadratic_game
from modnash.oracle import (
    best_response,
    certify,
    gradient_check,
    is_feasible,
    kkt_residual,
    nash_gap,
    player_gaps,
    quadratic_equilibrium_direct,
)
from modnash.prox import Affine, Ball, Box, L1, Quadratic, Zero

from conftest import KAPPAS, WEIGHTS

X_BAR = np.full(2, 2.0 / 3.0)


def test_kkt_residual_examples(quad2):
    assert kkt_residual(quad2, X_BAR) <= 1e-9
    assert kkt_residual(quad2, np.zeros(2)) > 0.1
    trivial = build_multivariate_minimization(None, 0.0, [], [Zero(2)])
    r = np.random.default_rng(0)
    for _ in range(10):
        assert kkt_residual(trivial, r.standard_normal(2)) == 0.0


def test_kkt_zero_set_independent_of_probes():
    game = build_multivariate_minimization(
        None, 0.0, [(Box([-np.inf], [1.0]), [[[1.0]], [[1.0]]])], [Quadratic(1.0, [1.0]), Quadratic(1.0, [1.0])]
    )
    x, v = np.array([0.5, 0.5]), np.array([0.5])
    for g, m in [(1.0, 1.0), (0.3, 4.0), (2.5, 0.2)]:
        assert kkt_residual(game, x, v, g, m) <= 1e-12
        assert kkt_residual(game, x, np.array([0.1]), g, m) > 1e-3
    with pytest.raises(ValueError):
        kkt_residual(game, x, v, 0.0, 1.0)


def test_best_response_quadratic_game(quad2):
    for mode in ("grid", "quadratic", "auto"):
        br = best_response(quad2, 0, X_BAR, mode=mode)
        assert abs(br.point[0] - 2.0 / 3.0) <= 1e-6
    r = np.random.default_rng(1)
    for x2 in r.uniform(-3, 3, 5):
        x = np.array([0.0, x2])
        assert best_response(quad2, 0, x, "grid").point[0] == pytest.approx((1 + x2 / 2) / 2, abs=1e-6)


def test_best_response_clamps_to_box():
    # f = (x - 2)^2 / 2, phi = indicator of [0, 1]
    game = build_affine_game([[1.0]], [-2.0], [Box([0.0], [1.0])], chi=1.0)
    br = best_response(game, 0, np.array([0.2]), "grid")
    assert abs(br.point[0] - 1.0) <= 1e-6 and br.unique


def test_best_response_flat_objective_returns_center():
    game = build_minimax_game(None, [0], [1], [Zero(1), Zero(1)], hessian=[[0.0, 1.0], [1.0, 0.0]])
    br = best_response(game, 0, np.array([0.0, 0.0]), "grid")
    assert br.point[0] == 0.0 and not br.unique


def test_best_response_expands_search_box():
    game = build_affine_game([[1.0]], [-500.0], [Zero(1)], chi=1.0)
    assert best_response(game, 0, np.array([0.0]), "grid").point[0] == pytest.approx(500.0, abs=1e-6)


def test_best_response_unbounded():
    game = build_affine_game([[0.0]], [1.0], [Zero(1)], chi=0.0)
    with pytest.raises(UnboundednessError):
        best_response(game, 0, np.array([0.0]), "grid")


@pytest.mark.parametrize("d", [2, 3])
def test_grid_best_response_in_two_and_three_dimensions(d):
    r = np.random.default_rng(d)
    B = r.standard_normal((d, d))
    H = B @ B.T + np.eye(d)
    c = r.standard_normal(d)
    game = build_affine_game(H, -c, [Zero(d)], chi=np.linalg.eigvalsh(H).max())
    br = best_response(game, 0, np.zeros(d), "grid")
    exact = np.linalg.solve(H, c)
    f = lambda y: 0.5 * y @ H @ y - c @ y  # noqa: E731
    assert f(br.point) - f(exact) <= 1e-9
    assert np.linalg.norm(br.point - exact) <= 1e-4


def test_grid_best_response_on_affine_and_ball_domains():
    c = np.array([2.0, 0.0])
    plane = build_affine_game(np.eye(2), -c, [Affine([[1.0, 1.0]], [1.0])], chi=1.0)
    assert np.allclose(best_response(plane, 0, np.zeros(2), "grid").point, [1.5, -0.5], atol=1e-6)
    ball = build_affine_game(np.eye(2), -c, [Ball([0.0, 0.0], 1.0)], chi=1.0)
    assert np.allclose(best_response(ball, 0, np.zeros(2), "grid").point, [1.0, 0.0], atol=1e-5)


def test_grid_rejects_high_dimensional_players():
    game = build_multivariate_minimization(None, 0.0, [], [Zero(4)])
    with pytest.raises(OracleError):
        best_response(game, 0, np.zeros(4), "grid")
    coupled = build_multivariate_minimization(None, 0.0, [(L1(1.0), [[[1.0, 0.0, 0.0, 0.0]]])], [Zero(4)])
    with pytest.raises(OracleError):
        best_response(coupled, 0, np.zeros(4), "quadratic")


def test_nash_gap_examples(quad2):
    assert nash_gap(quad2, X_BAR) <= 1e-6
    # l_1(0) = 1/2 while l_1(1/2) = 1/4
    assert nash_gap(quad2, np.zeros(2)) == pytest.approx(0.25, abs=1e-9)
    assert nash_gap(quad2, np.zeros(2)) > 0.2
    trivial = build_multivariate_minimization(None, 0.0, [], [Zero(1)])
    assert nash_gap(trivial, np.array([3.0])) == 0.0


def test_nash_gap_invariant_under_constant_shift():
    phis = [Quadratic(1.0, [1.0]), Box([0.0], [0.5])]
    game = build_quadratic_game(KAPPAS, WEIGHTS, phis)
    shifted = build_quadratic_game(KAPPAS, WEIGHTS, [phi.with_offset(5.0) for phi in phis])
    r = np.random.default_rng(4)
    for _ in range(5):
        x = np.array([r.uniform(-1, 2), r.uniform(0, 0.5)])
        assert player_gaps(game, x) == pytest.approx(player_gaps(shifted, x), abs=1e-9)


def test_infeasible_point_has_infinite_gap():
    game = build_quadratic_game(KAPPAS, WEIGHTS, [Box([0.0], [1.0]), Zero(1)])
    assert not is_feasible(game, np.array([2.0, 0.0]))
    assert nash_gap(game, np.array([2.0, 0.0])) == np.inf


def test_value_and_line_integral_paths_agree():
    grad = lambda x: np.array([2 * x[0] + x[1] - 1, x[0] + 2 * x[1]])  # noqa: E731
    value = lambda x: x[0] ** 2 + x[0] * x[1] + x[1] ** 2 - x[0]  # noqa: E731
    phis = [Box([-2.0], [2.0]), Zero(1)]
    with_value = build_multivariate_minimization(grad, 3.0, [], phis, value_f=value)
    without = build_multivariate_minimization(grad, 3.0, [], phis)
    x = np.array([1.0, 1.0])
    assert without.coupling.value is None
    assert player_gaps(with_value, x) == pytest.approx(player_gaps(without, x), abs=1e-7)
    # minimize x0^2 + x0 - x0 -> 0 at x1 = 1
    assert best_response(with_value, 0, x, "grid").point[0] == pytest.approx(0.0, abs=1e-5)


def test_gradient_matches_finite_differences_of_losses():
    r = np.random.default_rng(7)
    value = lambda x: 0.5 * x @ x + np.log1p(np.exp(x[0] - x[1]))  # noqa: E731

    def grad(x):
        s = 1.0 / (1.0 + np.exp(-(x[0] - x[1])))
        return x + np.array([s, -s])

    games = [
        build_quadratic_game([[1.0, 2.0], [0.5]], [[[0.0, 0.5], [0.0, 0.25]], [[0.5, 0.0]]], [Zero(1), Zero(1)]),
        build_multivariate_minimization(grad, 1.5, [], [Zero(1), Zero(1)], value_f=value),
    ]
    h = 1e-6
    for game in games:
        for _ in range(20):
            x = r.standard_normal(2)
            g = game.gradient(x)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd = (game.coupling.value(i, x + e) - game.coupling.value(i, x - e)) / (2 * h)
                assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(g[i]))


def test_quadratic_equilibrium_direct_examples():
    phis = [Quadratic(1.0, [1.0]), Quadratic(1.0, [1.0])]
    assert np.allclose(quadratic_equilibrium_direct(KAPPAS, WEIGHTS, phis).data, 2.0 / 3.0, atol=1e-15)
    zero_center = [Quadratic(1.0, [0.0]), Quadratic(1.0, [0.0])]
    assert np.array_equal(quadratic_equilibrium_direct(KAPPAS, [[[0.0, 0.9]], [[0.3, 0.0]]], zero_center).data, [0.0, 0.0])
    w = [[[0.0, 0.25, 0.25]], [[0.25, 0.0, 0.25]], [[0.25, 0.25, 0.0]]]
    x = quadratic_equilibrium_direct([[1.0]] * 3, w, [Quadratic(1.0, [1.0])] * 3).data
    # symmetric ansatz: (x - 1) + (x - x/2) = 0
    assert np.allclose(x, 2.0 / 3.0, atol=1e-14)


def test_quadratic_equilibrium_direct_singular():
    with pytest.raises(DegeneracyError):
        quadratic_equilibrium_direct(KAPPAS, [[[0.0, 1.0]], [[1.0, 0.0]]], [Zero(1), Zero(1)])


def test_certificate(quad2):
    cert = certify(quad2, X_BAR)
    assert cert.passes() and cert.feasible and cert.kkt_residual <= 1e-9 and cert.nash_gap <= 1e-9
    bad = certify(quad2, np.zeros(2))
    assert not bad.passes() and bad.nash_gap > 0.1


def test_gradient_check_on_builders():
    r = np.random.default_rng(12)
    kappas = [[1.3, 0.4], [0.7], [2.0]]
    weights = [
        [[0.0, 0.3, 0.2], [0.0, 0.1, 0.4]],
        [[0.5, 0.0, 0.25]],
        [[0.2, 0.2, 0.0]],
    ]
    game = build_quadratic_game(kappas, weights, [Zero(1), Zero(1), Zero(1)])
    # smooth convex f(x) = log(sum exp(x)) + |x|^4 / 4 shared by both players
    def f(x):
        return float(np.log(np.exp(x).sum()) + 0.25 * (x @ x) ** 2)

    def grad_f(x):
        e = np.exp(x)
        return e / e.sum() + (x @ x) * x

    joint = build_multivariate_minimization(grad_f, 50.0, [], [Zero(2), Zero(1)], value_f=f)
    for _ in range(20):
        assert gradient_check(game, 2.0 * r.standard_normal(3)) <= 1e-5
        assert gradient_check(joint, r.standard_normal(3)) <= 1e-5


def test_gradient_check_detects_wrong_gradient():
    def f(x):
        return float(0.5 * x @ x)

    wrong = build_multivariate_minimization(lambda x: 1.1 * x, 2.0, [], [Zero(1), Zero(1)], value_f=f)
    assert gradient_check(wrong, np.array([1.0, -2.0])) > 0.05
    no_value = build_minimax_game(lambda x: x[::-1], [0], [1], [Zero(1), Zero(1)], chi=0.0)
    with pytest.raises(OracleError):
        gradient_check(no_value, np.zeros(2))
