#!/usr/bin/env python3
"""Tests for FastAPI endpoints."""
import os
import sys

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402
from fastapi.testclient import TestClient  # noqa: E402

from microtrap.records import write_frame, write_json  # noqa: E402
from microtrap.reporting import build_field_report  # noqa: E402


@pytest.fixture
def results_dir(tmp_path):
    """Results directory with one record and a field report."""
    x = np.array([0.0, 1.0, 2.0, 3.0])
    frame = pd.DataFrame({"scan_value": x, "probe": "main", "p": 0.1 + 0.2 * x, "err": 0.01, "N": 100})
    write_frame(
        frame,
        str(tmp_path / "flop.csv"),
        {"seed": "3", "config_hash": "abcd", "variable": "duration", "unit": "us"},
    )
    write_json(build_field_report({"q_storage": 0.1441}), str(tmp_path / "field_report.json"))
    return str(tmp_path)


@pytest.fixture
def client(results_dir):
    """Create test client over the temporary results directory."""
    # Import here after path is set
    from microtrap.app import main as main_module  # noqa: E402

    original = main_module.RESULTS_DIR
    main_module.RESULTS_DIR = results_dir
    client = TestClient(main_module.app)
    yield client
    main_module.RESULTS_DIR = original


def test_root(client):
    """Test root endpoint."""
    response = client.get("/")
    assert response.status_code == 200
    assert "/records" in response.json()["endpoints"]


def test_healthz(client):
    """Test /healthz endpoint."""
    response = client.get("/healthz")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_field_report(client):
    """Test /reports/fields returns the stored report."""
    response = client.get("/reports/fields")
    assert response.status_code == 200
    assert response.json()["passed"] == 1


def test_field_report_missing(client, results_dir):
    """No report file is a 404."""
    os.remove(os.path.join(results_dir, "field_report.json"))
    assert client.get("/reports/fields").status_code == 404


def test_list_records(client):
    """Test /records lists the record with its metadata."""
    response = client.get("/records")
    assert response.status_code == 200
    data = response.json()
    assert len(data) == 1
    assert data[0]["file"] == "flop.csv"
    assert data[0]["rows"] == 4
    assert data[0]["config_hash"] == "abcd"


def test_get_record(client):
    """Test /records/{name} with and without the extension."""
    data = client.get("/records/flop").json()
    assert data["metadata"]["variable"] == "duration"
    assert len(data["rows"]) == 4
    assert client.get("/records/flop.csv").status_code == 200
    assert client.get("/records/other").status_code == 404
    assert client.get("/records/.hidden").status_code == 400


def test_fit_record(client):
    """Test /records/{name}/fit for a linear model and a mismatched one."""
    response = client.get("/records/flop/fit?model=linear")
    assert response.status_code == 200
    assert response.json()["slope"] == pytest.approx(0.2)
    assert client.get("/records/flop/fit?model=heating").status_code == 422


def test_calc_lamb_dicke(client):
    """Test /calc/lamb-dicke at the reference axial frequency."""
    data = client.get("/calc/lamb-dicke?axial_MHz=1.1").json()
    assert data["eta"] == pytest.approx(0.0653, abs=2e-4)
    assert data["eta_spont"] == pytest.approx(0.1713, abs=2e-4)


def test_calc_stability(client):
    """Test /calc/stability for the storage quadrupole."""
    data = client.get("/calc/stability?c2_per_m2=0.52e7").json()
    assert data["q"] == pytest.approx(0.1441, abs=5e-4)
    assert data["omega_MHz"] == pytest.approx(1.266, abs=5e-3)
    assert data["floquet_MHz"] is not None
    assert client.get("/calc/stability?c2_per_m2=-1").status_code == 422


def test_calc_cooling_limits(client):
    """Test /calc/cooling-limits with and without a heating steady state."""
    data = client.get("/calc/cooling-limits?gamma_eff_kHz=90").json()
    assert data["doppler_nbar"] == pytest.approx(12.0)
    assert data["laser_limited_nbar"] == pytest.approx(0.0119, abs=1e-4)
    assert data["trap_limited_nbar"] == pytest.approx(0.0)
    hot = client.get("/calc/cooling-limits?gamma_eff_kHz=50&heating_rate_per_ms=1000").json()
    assert hot["trap_limited_nbar"] is None
    assert hot["net_cooling_rate_per_s"] < 0
