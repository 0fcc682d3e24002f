import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dissren import spectral as sp

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def broadband():
    """Weak, wide Lorentzian used for the Wigner-Weisskopf regime checks."""
    m = sp.CouplingModel("Lorentzian", 0.0057, 2.0, 2.0)
    g = sp.FrequencyGrid.build("GaussLegendre", 2000, 6.0)
    c = sp.compute_renorm_constants(m, g, 2.0, sp.RenormOptions(fixed_point=True))
    return m, g, c


@pytest.fixture(scope="session")
def broadband_long():
    """Weaker broadband coupling on a dense grid so that 10/gamma stays
    well inside the grid recurrence time."""
    m = sp.CouplingModel("Lorentzian", 0.004, 2.0, 2.0)
    g = sp.FrequencyGrid.build("GaussLegendre", 6000, 6.0)
    c = sp.compute_renorm_constants(m, g, 2.0, sp.RenormOptions(fixed_point=True))
    return m, g, c


@pytest.fixture(scope="session")
def small_model():
    """Cheap model for dynamics tests."""
    m = sp.CouplingModel("Lorentzian", 0.02, 1.0, 1.0)
    g = sp.FrequencyGrid.build("GaussLegendre", 400, 21.0)
    c = sp.compute_renorm_constants(m, g, 1.0)
    return m, g, c


def exact_survival(model, grid, omega0, t):
    """<e|exp(-iHt)|e> by diagonalizing the discretized single-excitation
    Hamiltonian; independent of every solver in the package."""
    wg = sp.spectral_weights(model, grid)
    H = np.diag(np.concatenate([[omega0], grid.nodes]))
    H[0, 1:] = H[1:, 0] = np.sqrt(wg)
    lam, V = np.linalg.eigh(H)
    return np.exp(-1j * np.outer(np.atleast_1d(t), lam)) @ (np.abs(V[0]) ** 2)


@pytest.fixture
def exact_fl():
    return exact_survival


def run_cli(subcommand, config, out, **kw):
    from dissren import cli
    return cli.run(subcommand, str(config), str(out), **kw)


def output_bytes(out_dir):
    """All output files except the manifest, plus the manifest without its
    run-specific fields."""
    import json
    from pathlib import Path
    out = Path(out_dir)
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}
    man = json.loads((out / "manifest.json").read_text())
    for k in ("threads", "wall_time_s", "config_path"):
        man.pop(k)
    return files, man


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
