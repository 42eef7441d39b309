import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fracshe.estimators import LyapunovRegressor, RhoRegressor, SpectralSemigroup
from fracshe.spectral import build_basis, semigroup_apply


def test_semigroup_transform_matches_function():
    sg = SpectralSemigroup(t=0.2, N=16, M=64).fit()
    f = np.cos(np.linspace(0, 3, 64))
    out = sg.transform(f[None, :])[0]
    assert np.allclose(out, semigroup_apply(build_basis(2.0, 16, 64), 0.2, f), atol=1e-13)


def test_semigroup_params_and_clone():
    sg = SpectralSemigroup(t=0.3, alpha=1.5, N=8, M=32)
    assert sg.get_params() == {"t": 0.3, "alpha": 1.5, "N": 8, "M": 32}
    c = clone(sg).set_params(t=0.1)
    assert c.t == 0.1 and sg.t == 0.3


def test_semigroup_requires_fit_and_width():
    sg = SpectralSemigroup(N=8, M=32)
    with pytest.raises(NotFittedError):
        sg.transform(np.ones((1, 32)))
    sg.fit()
    with pytest.raises(ValueError):
        sg.transform(np.ones((1, 31)))


def test_lyapunov_regressor():
    t = np.linspace(0, 2, 21)[:, None]
    y = 2.0 * np.exp(1.5 * t[:, 0])
    reg = LyapunovRegressor().fit(t, y)
    assert reg.slope_ == pytest.approx(1.5, abs=1e-12)
    assert np.allclose(reg.predict(t), y, rtol=1e-12)
    assert reg.score(t, y) == pytest.approx(1.0)
    logreg = LyapunovRegressor(window=(1.0, 2.0), log_values=True).fit(t, np.log(y))
    assert logreg.slope_ == pytest.approx(1.5, abs=1e-12)
    assert clone(logreg).get_params()["window"] == (1.0, 2.0)


def test_rho_regressor():
    t = np.geomspace(1.0, 3.0, 8)[:, None]
    y = np.exp(0.5 * t[:, 0] ** 1.7)
    reg = RhoRegressor().fit(t, y)
    assert reg.rho_ == pytest.approx(1.7, abs=1e-10)
    assert np.allclose(reg.predict(t), y, rtol=1e-10)
    raw = RhoRegressor(log_moment=False).fit(t, 3 * t[:, 0] ** 1.25)
    assert raw.rho_ == pytest.approx(1.25, abs=1e-12)
