import json
import shutil

import numpy as np
import pytest

from splitgev.cli import main
from splitgev.errors import MissingArtifactError, ValidationError
from splitgev.io import (
    ObservationTable,
    SiteTable,
    ingest_observations,
    read_config,
    read_covariates,
    read_sites,
    toy_config_path,
    write_observations,
    write_sites,
)
from splitgev.raster import read_ascii_grid
from splitgev.splitsampler import read_trace


def write(path, text):
    path.write_text(text)
    return path


def test_ingest_missing_row(tmp_path):
    p = write(tmp_path / "o.csv", "site_id,year,value_mm\nA,1,10\nA,2,11\nA,3,12\nB,1,9\nB,3,8\n")
    data = ingest_observations(p).to_data(["A", "B"])
    assert list(data.counts) == [3, 2]
    np.testing.assert_array_equal(data.years[3:], [1, 3])


def test_ingest_rejects_duplicates_and_nonpositive(tmp_path):
    p = write(tmp_path / "o.csv", "site_id,year,value_mm\nA,1,10\nA,1,11\n")
    with pytest.raises(ValidationError, match="duplicate"):
        ingest_observations(p)
    p = write(tmp_path / "o.csv", "site_id,year,value_mm\nA,1,10\nA,2,0\n")
    with pytest.raises(ValidationError, match=":3:"):
        ingest_observations(p)
    p = write(tmp_path / "o.csv", "site,year,value\nA,1,10\n")
    with pytest.raises(ValidationError, match="header"):
        ingest_observations(p)
    with pytest.raises(MissingArtifactError):
        ingest_observations(tmp_path / "nope.csv")


def test_unknown_site_rejected():
    table = ObservationTable({("A", 1): 1.0, ("Z", 1): 2.0})
    with pytest.raises(ValidationError, match="Z"):
        table.to_data(["A"])


def test_site_with_no_observations():
    data = ObservationTable({("A", 1): 1.0}).to_data(["A", "B"])
    assert list(data.counts) == [1, 0]


def test_full_size_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ids = [f"G{i:02d}" for i in range(86)]
    lines = ["site_id,year,value_mm"]
    for s in ids:
        for yr in range(1961, 2010):
            lines.append(f"{s},{yr},{rng.gamma(5.0, 8.0)!r}")
    p = write(tmp_path / "o.csv", "\n".join(lines) + "\n")
    data = ingest_observations(p).to_data(ids)
    assert data.n_sites == 86 and np.all(data.counts == 49)
    write_observations(tmp_path / "o2.csv", ids, data)
    again = ingest_observations(tmp_path / "o2.csv").to_data(ids)
    np.testing.assert_array_equal(again.y, data.y)


def test_sites_round_trip(tmp_path):
    t = SiteTable(["a", "b"], np.array([[1.5, 2.25], [0.1, 1e-3]]))
    write_sites(tmp_path / "s.csv", t)
    r = read_sites(tmp_path / "s.csv")
    assert r.ids == t.ids and np.array_equal(r.coords, t.coords)
    write(tmp_path / "d.csv", "site_id,x_km,y_km\na,1,2\na,3,4\n")
    with pytest.raises(ValidationError, match="duplicate"):
        read_sites(tmp_path / "d.csv")


def test_covariates_missing_site(tmp_path):
    write(tmp_path / "c.csv", "site_id,covariate\na,1.5\n")
    with pytest.raises(ValidationError, match="b"):
        read_covariates(tmp_path / "c.csv", ["a", "b"])


def test_read_config(tmp_path):
    p = write(tmp_path / "c.txt", "# comment\nseed = 3  # trailing\n\nname=x = y\n")
    assert read_config(p) == {"seed": "3", "name": "x = y"}
    write(p, "bad line\n")
    with pytest.raises(ValidationError):
        read_config(p)


@pytest.fixture
def toy(tmp_path):
    src = toy_config_path().parent
    dst = tmp_path / "toy"
    shutil.copytree(src, dst)
    return dst


def test_cli_pipeline_on_toy(toy, tmp_path):
    out = tmp_path / "out"
    cfg = str(toy / "config.txt")
    assert main(["fit", "--config", cfg, "--out", str(out), "--iters", "10", "--burnin", "2"]) == 0
    for c in range(2):
        tr = read_trace(out / "traces" / f"chain_{c}.csv")
        assert len(tr) == 10
        meta = json.loads((out / "traces" / f"chain_{c}.meta.json").read_text())
        assert meta["iterations_completed"] == 10 and meta["error"] is None
    man = json.loads((out / "manifest_fit.json").read_text())
    assert man["config"]["n_iter"] == "10" and len(man["config_hash"]) == 64
    assert main(["diagnose", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "diagnostics" / "summary.csv").exists()
    assert (out / "diagnostics" / "series" / "xi_acf.csv").exists()
    assert len(list((out / "diagnostics" / "cdf").glob("site_*.csv"))) == 8
    assert main(["predict", "--config", cfg, "--out", str(out), "--quantile", "0.9"]) == 0
    surf = read_ascii_grid(out / "predict" / "q0.9_mean.asc")
    assert surf.meta == read_ascii_grid(toy / "covariate.asc").meta


def test_cli_fit_is_reproducible(toy, tmp_path):
    cfg = str(toy / "config.txt")
    for name in ("a", "b"):
        assert main(["fit", "--config", cfg, "--out", str(tmp_path / name), "--iters", "5",
                     "--burnin", "0", "--chains", "1"]) == 0
    a = (tmp_path / "a" / "traces" / "chain_0.csv").read_text()
    b = (tmp_path / "b" / "traces" / "chain_0.csv").read_text()
    assert a == b


def test_cli_missing_artifact(toy, tmp_path, capsys):
    cfg = str(toy / "config.txt")
    assert main(["predict", "--config", cfg, "--out", str(tmp_path / "empty")]) == 1
    assert "fit.json" in capsys.readouterr().err
    write(toy / "bare.txt", "observations = observations.csv\nsites = sites.csv\n"
          "covariate_raster = covariate.asc\nmesh = mesh.txt\n")
    assert main(["fit", "--config", str(toy / "bare.txt"), "--out", str(tmp_path / "o2")]) == 1
    assert "tune-covariate" in capsys.readouterr().err


def test_cli_tune_covariate(toy, tmp_path):
    out = tmp_path / "o"
    assert main(["tune-covariate", "--config", str(toy / "config.txt"), "--out", str(out)]) == 0
    info = json.loads((out / "smoother.json").read_text())
    assert info["r"] > 0 and info["alpha"] > 0
    vals = read_covariates(out / "covariate.csv", read_sites(toy / "sites.csv").ids)
    assert np.all(np.isfinite(vals))


def test_cli_simulate_round_trip(tmp_path):
    out = tmp_path / "sim"
    cfg = write(tmp_path / "s.txt", "seed = 3\nsim_sites = 5\nsim_years = 7\nsim_extent = 40\n"
                "sim_mesh_n = 4\nsim_cellsize = 10\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    truth = json.loads((out / "truth.json").read_text())
    data = ingest_observations(out / "observations.csv").to_data(truth["site_ids"])
    assert data.n_sites == 5 and np.all(data.counts == 7)
    assert len(truth["mu"]) == 5
    assert main(["fit", "--config", str(out / "config.txt"), "--out", str(tmp_path / "f"),
                 "--iters", "3", "--chains", "1"]) == 0


def test_cli_simulate_refuses_nonpositive_maxima(tmp_path, capsys):
    # this seed draws a site with a very large scale, pushing some maxima below zero
    cfg = write(tmp_path / "s.txt", "seed = 4\nsim_sites = 5\nsim_years = 7\nsim_extent = 40\n"
                "sim_mesh_n = 4\nsim_cellsize = 10\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 1
    assert "non-positive" in capsys.readouterr().err
    assert not (tmp_path / "sim" / "observations.csv").exists()
