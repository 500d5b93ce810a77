import numpy as np

from zrplab import engine
from zrplab.infection import (
    InfectionState,
    front_path_to_csv,
    martingale_to_csv,
    replay_infection,
)
from zrplab.sim import SiteConfig, evolve, torus


def _overlay_run(id_rate, rep=0):
    n = engine.domain_size(id_rate, 3.0)
    dom = torus(n)
    counts, flags, origin = engine.standard_infection_start(
        id_rate, 1.0, n, 123, rep, t_end=3.0)
    traj = evolve(SiteConfig(counts), id_rate, dom, 3.0, 123, rep,
                  log_events=True)
    xi0 = np.where(flags == 1, counts, 0)
    st0 = InfectionState(xi=xi0, zeta=counts - xi0, front=0, domain=dom)
    return replay_infection(st0, traj, rate=id_rate, collect_martingale=True)


def test_front_path_csv(id_rate, tmp_path):
    _, path, _ = _overlay_run(id_rate)
    out = tmp_path / "front.csv"
    front_path_to_csv(path, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "time,front"
    assert len(lines) == 1 + len(path.times)


def test_martingale_csv(id_rate, tmp_path):
    _, _, mart = _overlay_run(id_rate)
    out = tmp_path / "mart.csv"
    martingale_to_csv(mart, out)
    text = out.read_text()
    assert text.startswith("time,martingale")
    assert "integrand_time,integrand" in text


def test_cli_entrypoint_module(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "zrplab.cli", "list-experiments"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "front-velocity" in proc.stdout
