import numpy as np
import pytest

from robustgrowth import model as mdl


@pytest.fixture(scope="session")
def dir2():
    """Dirichlet d=2, a=3, b=1, sigma2=0.1 (the two-asset reference market)."""
    return mdl.dirichlet(3.0, 1.0, sigma2=0.1, d=2)


@pytest.fixture(scope="session")
def presets():
    return {
        "dirichlet": mdl.dirichlet([3.0, 2.5, 4.0], [1.0, 1.5, 2.0], sigma2=0.2),
        "vol_stab": mdl.vol_stabilized(2.0, 4, 0.1),
        "gen_vol_stab": mdl.gen_vol_stab([3.0, 2.5, 4.0, 3.5], 0.35, sigma2=0.2),
        "logit_normal": mdl.logit_normal([0.2, -0.1, 0.0],
                                         [[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.8]],
                                         a=[3.0, 3.5, 2.5], b=[3.0, 2.5, 4.0], sigma2=0.5),
    }


@pytest.fixture(scope="session")
def interior_points():
    rng = np.random.default_rng(1234)

    def draw(d, n=100, lo=0.02):
        x = rng.dirichlet(np.full(d, 2.0), size=n)
        x = np.maximum(x, lo)
        return x / x.sum(axis=1, keepdims=True)

    return draw


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    log = getattr(request.config, "_acceptance_log", None)
    if log is None:
        log = request.config._acceptance_log = {}
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = getattr(config, "_acceptance_log", None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(log, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(log[key])
