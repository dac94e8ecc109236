"""
Tests de la SEGI: normalización, suavizado, similitud coseno e invariancia de modalidad
"""

import numpy as np
import pytest

from src import filters
from src.core import LABEL, Volume
from src.errors import ConfigError, InvalidVolumeError, ShapeMismatchError
from src.phantom import PhantomSpec, generate_pair
from src.segi import (
    VectorField,
    check_compatible,
    cosine_adjoint,
    cosine_map,
    gaussian_smooth_field,
    image_gradient,
    normalize_adjoint,
    normalize_gradient,
    segi,
    segi_forward,
    segi_loss,
)

SIGMAS = (1.0, 1.5, 3.0)

MONOTONE_REMAPS = {
    "affine": lambda t: 3.0 * t - 0.5,
    "square": lambda t: t * t,
    "exp": np.exp,
    "cubic": lambda t: t ** 3 + t,
}


# =============================================================================
# Normalización
# =============================================================================

class TestNormalizeGradient:

    def test_unit_or_zero(self, smooth_volume):
        vol = smooth_volume((8, 8, 8))
        data = np.array(vol.data)
        data[:, :, :3] = 0.2    # región plana
        g = image_gradient(Volume(data))
        normalized = normalize_gradient(g).norm()
        keep = g.norm() >= 1e-6
        np.testing.assert_allclose(normalized[keep], 1.0, atol=1e-12)
        assert np.all(normalized[~keep] == 0.0)
        assert (~keep).any()

    def test_known_vectors(self):
        g = np.zeros((2, 1, 1, 3))
        g[0, 0, 0] = [3.0, 4.0, 0.0]
        g[1, 0, 0] = [1e-9, 0.0, 0.0]
        normalized = normalize_gradient(VectorField(g)).vectors
        np.testing.assert_allclose(normalized[0, 0, 0], [0.6, 0.8, 0.0], atol=1e-15)
        assert np.all(normalized[1, 0, 0] == 0.0)

    def test_central_difference_of_parabola(self):
        i = np.arange(6, dtype=np.float64)
        vol = Volume(np.broadcast_to((i ** 2)[:, None, None], (6, 4, 4)))
        g = image_gradient(vol).vectors
        assert g[2, 1, 1, 0] == 4.0
        np.testing.assert_array_equal(g[1:-1, 2, 3, 0], 2.0 * i[1:-1])
        assert np.all(g[..., 1:] == 0.0)

    def test_label_volume_rejected(self):
        with pytest.raises(InvalidVolumeError):
            image_gradient(Volume(np.zeros((3, 3, 3)), kind=LABEL))

    def test_adjoint_matches_finite_differences(self, rng):
        g = rng.standard_normal((3, 3, 3, 3))
        bar = rng.standard_normal((3, 3, 3, 3))
        norm = np.linalg.norm(g, axis=-1)
        normalized = g / norm[..., None]
        analytic = normalize_adjoint(norm, normalized, bar, 1e-6)

        h = 1e-6
        numeric = np.zeros_like(g)
        for index in np.ndindex(g.shape):
            plus = np.array(g)
            minus = np.array(g)
            plus[index] += h
            minus[index] -= h
            f_plus = np.sum(normalize_gradient(VectorField(plus)).vectors * bar)
            f_minus = np.sum(normalize_gradient(VectorField(minus)).vectors * bar)
            numeric[index] = (f_plus - f_minus) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-7)


# =============================================================================
# Suavizado de campos vectoriales
# =============================================================================

class TestGaussianSmoothField:

    def test_impulse_response_is_separable_kernel(self):
        impulse = np.zeros((9, 9, 9, 3))
        impulse[4, 4, 4, 1] = 1.0
        response = gaussian_smooth_field(VectorField(impulse), 1.0).vectors
        k = filters.gaussian_kernel(1.0)
        expected = np.zeros((9, 9, 9))
        expected[1:8, 1:8, 1:8] = np.einsum("i,j,k->ijk", k, k, k)
        np.testing.assert_allclose(response[..., 1], expected, atol=1e-15)
        assert np.all(response[..., 0] == 0.0)
        assert np.all(response[..., 2] == 0.0)

    def test_matches_dense_convolution_with_replicated_border(self, rng):
        data = rng.standard_normal((9, 9, 9, 3))
        k = filters.gaussian_kernel(1.0)
        n = len(k)
        r = n // 2
        padded = np.pad(data, [(r, r)] * 3 + [(0, 0)], mode="edge")
        expected = np.zeros_like(data)
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    expected += k[a] * k[b] * k[c] * padded[a:a + 9, b:b + 9, c:c + 9]
        smoothed = gaussian_smooth_field(VectorField(data), 1.0).vectors
        np.testing.assert_allclose(smoothed, expected, atol=1e-12)

    def test_tiny_sigma_is_identity(self, rng):
        data = rng.standard_normal((5, 6, 7, 3))
        np.testing.assert_allclose(gaussian_smooth_field(VectorField(data), 0.1).vectors, data,
                                   atol=1e-9)


# =============================================================================
# Coseno
# =============================================================================

class TestCosine:

    def test_parallel_antiparallel_zero(self):
        a = np.zeros((1, 1, 3, 3))
        b = np.zeros((1, 1, 3, 3))
        a[0, 0, 0] = [1.0, 2.0, 0.0]
        b[0, 0, 0] = [2.0, 4.0, 0.0]
        a[0, 0, 1] = [0.0, 0.0, 1.0]
        b[0, 0, 1] = [0.0, 0.0, -3.0]
        a[0, 0, 2] = [1.0, 1.0, 1.0]
        np.testing.assert_allclose(cosine_map(a, b)[0, 0], [1.0, -1.0, 0.0], atol=1e-15)

    def test_adjoint_is_zero_at_alignment(self, rng):
        a = rng.standard_normal((2, 2, 2, 3))
        np.testing.assert_allclose(cosine_adjoint(a, 2.5 * a), 0.0, atol=1e-14)

    def test_adjoint_matches_finite_differences(self, rng):
        a = rng.standard_normal((2, 2, 2, 3))
        b = rng.standard_normal((2, 2, 2, 3))
        analytic = cosine_adjoint(a, b)
        h = 1e-6
        for index in np.ndindex(a.shape):
            plus = np.array(a)
            minus = np.array(a)
            plus[index] += h
            minus[index] -= h
            numeric = (cosine_map(plus, b)[index[:3]] - cosine_map(minus, b)[index[:3]]) / (2 * h)
            assert analytic[index] == pytest.approx(numeric, rel=1e-6, abs=1e-8)


# =============================================================================
# SEGI y distancia coseno
# =============================================================================

class TestSegi:

    def test_constant_volume_gives_zero_fields(self):
        field = segi(Volume(np.full((6, 6, 6), 0.3)), SIGMAS)
        assert field.sigmas == SIGMAS
        for f in field.fields:
            assert np.all(f.vectors == 0.0)
        assert segi_loss(field, field) == 0.0

    def test_small_sigma_limit_is_normalized_gradient(self, smooth_volume):
        vol = smooth_volume((10, 10, 10), seed=3)
        field = segi(vol, (0.1,))
        ngi = normalize_gradient(image_gradient(vol))
        np.testing.assert_allclose(field.fields[0].vectors, ngi.vectors, atol=1e-9)

    def test_matches_optimizer_tape(self, smooth_volume):
        vol = smooth_volume((10, 10, 10), seed=4)
        field = segi(vol, SIGMAS)
        tape = segi_forward(vol.data, SIGMAS, 1e-6)
        for f, smoothed in zip(field.fields, tape.smoothed):
            np.testing.assert_allclose(f.vectors, smoothed, atol=1e-15)

    def test_requires_sigmas(self, smooth_volume):
        with pytest.raises(ConfigError):
            segi(smooth_volume((6, 6, 6)), ())

    def test_self_loss_is_minimum(self, smooth_volume):
        a = segi(smooth_volume((10, 10, 10), seed=1), SIGMAS)
        b = segi(smooth_volume((10, 10, 10), seed=2), SIGMAS)
        self_loss = segi_loss(a, a)
        assert self_loss == pytest.approx(-1.0, abs=1e-12)
        assert -1.0 <= segi_loss(a, b) <= 1.0
        assert segi_loss(a, b) > self_loss
        assert segi_loss(a, b) == pytest.approx(segi_loss(b, a), abs=1e-15)

    def test_incompatible_fields(self, smooth_volume):
        a = segi(smooth_volume((6, 6, 6)), (1.0,))
        b = segi(smooth_volume((6, 6, 6)), (1.5,))
        c = segi(smooth_volume((6, 6, 7)), (1.0,))
        with pytest.raises(ShapeMismatchError):
            check_compatible(a, b)
        with pytest.raises(ShapeMismatchError):
            segi_loss(a, c)


# =============================================================================
# Invariancia frente a remapeos de intensidad
# =============================================================================

class TestModalityInvariance:

    @pytest.mark.parametrize("remap", sorted(MONOTONE_REMAPS))
    @pytest.mark.parametrize("dims", [(16, 12, 10), (20, 8, 8), (12, 12, 12)])
    def test_monotone_remap_on_axis_varying_volume(self, ramp_1d, remap, dims):
        vol = ramp_1d(dims)
        original = segi(vol, SIGMAS)
        remapped = segi(vol.with_data(MONOTONE_REMAPS[remap](vol.data)), SIGMAS)
        for f, g in zip(original.fields, remapped.fields):
            np.testing.assert_allclose(f.vectors, g.vectors, atol=1e-9)
        assert segi_loss(original, remapped) == pytest.approx(segi_loss(original, original), abs=1e-9)

    def test_inversion_flips_every_vector(self, ramp_1d):
        vol = ramp_1d()
        original = segi(vol, SIGMAS)
        inverted = segi(vol.with_data(1.0 - vol.data), SIGMAS)
        for f, g in zip(original.fields, inverted.fields):
            np.testing.assert_allclose(f.vectors, -g.vectors, atol=1e-9)
        assert segi_loss(original, inverted) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("shape", ["sphere", "two-spheres", "cuboid-with-notch"])
    def test_nonlinear_remap_on_phantom_stays_aligned(self, shape):
        pair = generate_pair(PhantomSpec(dims=(24, 24, 24), shape=shape))
        original = segi(pair.fixed, SIGMAS)
        remapped = segi(pair.fixed.with_data(pair.fixed.data ** 2), SIGMAS)
        assert segi_loss(original, remapped) < 0.8 * segi_loss(original, original)
