import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magduality.grid import (
    GridSpec,
    Region,
    ScalarField,
    VectorField,
    curl,
    curl_residual,
    divergence,
    divergence_residual,
    gradient_of_scalar,
    inner_product,
)
from magduality.helmholtz import (
    NotCurlFreeError,
    helmholtz_split,
    project_curl_free,
    recover_potential,
    stray_field,
)

from conftest import random_field


def test_projection_keeps_gradients_and_kills_curls(unit16, rng):
    phi = ScalarField(unit16, rng.standard_normal(unit16.shape))
    g = gradient_of_scalar(phi)
    assert (project_curl_free(g) - g).norm() <= 1e-12 * g.norm()
    c = curl(random_field(unit16, rng))
    assert project_curl_free(c).norm() <= 1e-12 * c.norm()


def test_constants_are_divergence_free(unit16):
    u = VectorField.uniform(unit16, [1.0, -2.0, 0.5])
    assert project_curl_free(u).norm() < 1e-15


def test_split_is_orthogonal_and_complete(unit16, rng):
    u = random_field(unit16, rng)
    s = helmholtz_split(u)
    assert (s.curl_free + s.div_free - u).norm() < 1e-12 * u.norm()
    assert abs(inner_product(s.curl_free, s.div_free)) < 1e-12 * u.norm() ** 2
    assert curl_residual(s.curl_free, u) < 1e-12
    assert divergence_residual(s.div_free, u) < 1e-12


def test_stray_field_of_full_torus_mode():
    # m = sin(2πx) e_x is curl-free, so h_s = -m
    spec = GridSpec(1.0, 16, 1.0)
    m = VectorField.from_function(spec, lambda x, y, z: (np.sin(2 * np.pi * x), 0 * y, 0 * z))
    h = stray_field(m, Region.full(spec))
    assert (h + m).norm() < 1e-13
    # uniform magnetization of the whole torus produces no stray field
    assert stray_field(VectorField.uniform(spec, [0, 0, 1]), Region.full(spec)).norm() < 1e-15


def test_stray_field_satisfies_maxwell(rng):
    spec = GridSpec(1.0, 16, 1.0)
    body = Region.ball(spec, [0.5] * 3, 0.3)
    m = random_field(spec, rng)
    h = stray_field(m, body)
    assert curl_residual(h, m) < 1e-12
    assert divergence_residual(h + m.masked(body), m) < 1e-12


def test_recover_potential_inverts_gradient(unit16, rng):
    phi = ScalarField(unit16, rng.standard_normal(unit16.shape))
    phi = ScalarField(unit16, phi.data - phi.data.mean())
    h = -1.0 * gradient_of_scalar(phi)
    rec = recover_potential(h)
    assert abs(rec.data.mean()) < 1e-14
    assert (gradient_of_scalar(rec) + h).norm() < 1e-12 * h.norm()


def test_recover_potential_rejects_curl(unit16, rng):
    with pytest.raises(NotCurlFreeError) as exc:
        recover_potential(random_field(unit16, rng))
    assert exc.value.residual > exc.value.tolerance


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.sampled_from([4, 8, 10]),
       length=st.floats(0.5, 3.0))
def test_projection_idempotent_self_adjoint(seed, n, length):
    rng = np.random.default_rng(seed)
    spec = GridSpec(length, n, 1.0)
    u, v = random_field(spec, rng), random_field(spec, rng)
    pu = project_curl_free(u)
    assert (project_curl_free(pu) - pu).norm() <= 1e-12 * u.norm()
    a, b = inner_product(pu, v), inner_product(u, project_curl_free(v))
    assert abs(a - b) <= 1e-12 * u.norm() * v.norm()
    # contraction
    assert pu.norm() <= u.norm() * (1 + 1e-12)
