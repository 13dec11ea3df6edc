import numpy as np
import pytest

from oracles import central_difference
from petphys.errors import ConfigError, DomainError, ShapeError
from petphys.losses import (
    AvgPoolEncoder,
    HeteroPrediction,
    LossConfig,
    loss_manifold,
    loss_mse,
    loss_s,
    loss_sinogram_mse,
    loss_su,
    loss_u,
    objective,
)
from petphys.projector import ProjectorGeometry, get_projector


@pytest.fixture(scope="module")
def geom8():
    return ProjectorGeometry.for_image(8, 8, 2.0, 10)


def _instance(rng):
    y = rng.random((8, 8))
    c = rng.uniform(0.05, 1.0, (8, 8))
    u = rng.random((8, 8))
    return y, c, u


class TestValues:
    def test_u_closed_form(self):
        y, c, u = np.array([[1.0, 2.0]]), np.array([[0.5, 2.0]]), np.array([[0.0, 0.0]])
        v, _, _ = loss_u((y, c), u, eps=0.0 + 1e-300)
        assert v == pytest.approx(1 / 0.5 + np.log(0.5) + 4 / 2.0 + np.log(2.0))

    def test_mse_per_image(self):
        v, g = loss_mse(np.ones((2, 4, 4)), np.zeros((2, 4, 4)))
        assert v == 2.0
        np.testing.assert_allclose(g, 2.0 / 16)

    def test_mse_zero_residual(self):
        x = np.random.default_rng(0).random((4, 4))
        v, g = loss_mse(x, x)
        assert v == 0.0 and not g.any()

    def test_sinogram_mse_matches_projection(self, geom8):
        rng = np.random.default_rng(1)
        a, b = rng.random((2, 8, 8))
        P = get_projector(geom8)
        v, _ = loss_sinogram_mse(a, b, geom8)
        assert v == pytest.approx(np.sum((P.fp(a) - P.fp(b)) ** 2))

    def test_manifold_pooling(self):
        x = np.zeros((8, 8))
        x[:4, :4] = 16.0
        v, _ = loss_manifold(x, np.zeros((8, 8)))
        assert v == pytest.approx(16.0**2)

    def test_su_lambda_zero_is_u(self, geom8):
        y, c, u = _instance(np.random.default_rng(2))
        a = loss_su((y, c), u, geom8, LossConfig(lambda_s=0.0))
        b = loss_u((y, c), u, 1e-6)
        assert a[0] == b[0]

    def test_su_linear_in_lambda(self, geom8):
        y, c, u = _instance(np.random.default_rng(3))
        vu = loss_u((y, c), u)[0]
        vs = loss_s((y, c), u, geom8)[0]
        for lam in (0.003, 0.006):
            assert loss_su((y, c), u, geom8, LossConfig(lambda_s=lam))[0] == pytest.approx(vu + lam * vs)

    def test_optimal_variance(self):
        # per voxel the minimiser over c of r^2/(c+eps) + log(c+eps) is c = r^2 - eps
        eps = 1e-3
        for r in (0.1, 0.5, 2.0):
            grid = np.linspace(1e-4, 5.0, 200001)
            vals = r * r / (grid + eps) + np.log(grid + eps)
            assert grid[np.argmin(vals)] == pytest.approx(r * r - eps, abs=5e-5)
            _, _, gc = loss_u((np.array([[r]]), np.array([[r * r - eps]])), np.zeros((1, 1)), eps)
            assert abs(gc[0, 0]) < 1e-9


    def test_convex_in_precision(self):
        rng = np.random.default_rng(4)
        eps = 1e-6
        r = rng.standard_normal(50)
        w = rng.uniform(0.5, 20.0, 50)
        h = 1e-3

        def f(prec):
            c = 1.0 / prec - eps
            return np.array([loss_u((np.array([[ri]]), np.array([[ci]])), np.zeros((1, 1)), eps)[0]
                             for ri, ci in zip(r, c)])

        second = f(w + h) - 2 * f(w) + f(w - h)
        assert np.all(second > 0)


class TestGradients:
    """Directional central differences on random 8x8 instances."""

    H = 1e-6

    def _check(self, f, g, x, rng):
        d = rng.standard_normal(x.shape)
        fd = central_difference(f, x, d, self.H)
        an = np.vdot(g, d)
        assert abs(fd - an) <= 1e-6 * max(abs(an), abs(fd), 1.0)

    def test_u(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            y, c, u = _instance(rng)
            _, gy, gc = loss_u((y, c), u)
            self._check(lambda z: loss_u((z, c), u)[0], gy, y, rng)
            self._check(lambda z: loss_u((y, z), u)[0], gc, c, rng)

    def test_s(self, geom8):
        rng = np.random.default_rng(11)
        for _ in range(10):
            y, c, u = _instance(rng)
            _, gy, gc = loss_s((y, c), u, geom8)
            self._check(lambda z: loss_s((z, c), u, geom8)[0], gy, y, rng)
            self._check(lambda z: loss_s((y, z), u, geom8)[0], gc, c, rng)

    def test_mse_family(self, geom8):
        rng = np.random.default_rng(12)
        for _ in range(10):
            y, _, u = _instance(rng)
            for fn in (lambda z: loss_mse(z, u), lambda z: loss_sinogram_mse(z, u, geom8), lambda z: loss_manifold(z, u)):
                self._check(lambda z: fn(z)[0], fn(y)[1], y, rng)

    @pytest.mark.parametrize("mode", ["U", "SU", "MSE", "MSE+S", "MSE+E"])
    def test_objective(self, geom8, mode):
        rng = np.random.default_rng(13)
        cfg = LossConfig()
        y, c, u = _instance(rng)
        _, gy, gc = objective(mode, (y, c), u, geom8, cfg)
        self._check(lambda z: objective(mode, (z, c), u, geom8, cfg)[0], gy, y, rng)
        if mode in ("U", "SU"):
            self._check(lambda z: objective(mode, (y, z), u, geom8, cfg)[0], gc, c, rng)
        else:
            assert not gc.any()


class TestErrors:
    def test_nonpositive_variance(self):
        with pytest.raises(DomainError):
            loss_u((np.ones((2, 2)), np.zeros((2, 2))), np.ones((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss_mse(np.ones((2, 2)), np.ones((3, 2)))
        with pytest.raises(ShapeError):
            HeteroPrediction(np.ones((2, 2)), np.ones((2, 3)))

    def test_unknown_mode(self, geom8):
        with pytest.raises(ConfigError):
            objective("L1", (np.ones((8, 8)), np.ones((8, 8))), np.ones((8, 8)), geom8, LossConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            LossConfig(epsilon=0.0, lambda_s=-1.0)

    def test_encoder_divisibility(self):
        with pytest.raises(ShapeError):
            AvgPoolEncoder(4).encode(np.zeros((6, 8)))
