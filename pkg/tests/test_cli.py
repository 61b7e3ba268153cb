import csv
import json
import subprocess
import sys

import pytest

from cloaklab import cli
from cloaklab.errors import ConfigurationError

FAST = ["--scheme", "ball3d", "--eps-list", "0.2,0.1,0.05", "--quad-level", "2"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_empty_config_gives_defaults():
    cfg = cli.parse_config_text("")
    assert cfg == cli.RunConfig()
    assert cfg.k == 2.0 and cfg.scheme == "ball3d"


@pytest.mark.parametrize("text,field", [
    ('{"k": 0}', "k"),
    ('{"scheme": "box"}', "scheme"),
    ('{"eps_list": [0.1, 0.2]}', "eps_list"),
    ('{"quad_level": 20}', "quad_level"),
    ('{"mfs": {"n_gamma": 3}}', "mfs"),
    ('{"colour": 1}', "colour"),
    ('{"source": [2.5, 0, 0, 1]}', "source"),
])
def test_invalid_config_names_field(text, field):
    with pytest.raises(ConfigurationError, match=field):
        cli.parse_config_text(text)


def test_source_outside_annulus_rejected():
    with pytest.raises(ConfigurationError, match="source"):
        cli.parse_config_text('{"source": [1.0, 0, 0, 1, 0]}')


def test_flags_override_config_file(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text('{"k": 3.0, "scheme": "ball2d"}')
    cmd, cfg, _ = cli.parse_config(["sweep", "--config", str(conf), "--k", "1.5", "--mfs-n-z", "64"])
    assert cmd == "sweep" and cfg.k == 1.5 and cfg.scheme == "ball2d" and cfg.mfs == {"n_z": 64}


def test_hash_ignores_output_location():
    a = cli.RunConfig(out="a").validate()
    b = cli.RunConfig(out="b", threads=3).validate()
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != cli.RunConfig(k=3.0).validate().config_hash()


def test_k_zero_exit_code(capsys):
    assert cli.main(["sweep", "--k", "0"]) == cli.EXIT_CONFIG
    assert "k:" in capsys.readouterr().err


def test_sweep_outputs(tmp_path):
    assert cli.main(["sweep", *FAST, "--out", str(tmp_path)]) == cli.EXIT_OK
    rows = _rows(tmp_path / "sweep.csv")
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
    assert [float(r["epsilon"]) for r in rows] == [0.2, 0.1, 0.05]
    assert all(r["flags"] == "" for r in rows)
    rep = json.loads((tmp_path / "audit-rates.json").read_text())
    assert rep["claims"][0]["verdict"] in ("confirmed", "refuted-as-printed")
    assert rep["config_hash"] == rows[0]["config_hash"]


def test_sweep_byte_identical_without_timing(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["sweep", *FAST, "--no-timing", "--out", str(d)]) == 0
    for name in ("sweep.csv", "audit-rates.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_coarse_cylinder_config_exits_2(tmp_path):
    code = cli.main(["sweep", "--scheme", "cyl3d", "--eps-list", "0.1", "--mfs-n-theta", "4",
                     "--mfs-n-z", "8", "--out", str(tmp_path)])
    assert code == cli.EXIT_GATE
    rows = _rows(tmp_path / "sweep.csv")
    assert rows[0]["flags"] == "uncertified" and float(rows[0]["certificate"]) > 1e-3


def test_materials_output(tmp_path):
    assert cli.main(["materials", "--grid-n", "9", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "materials.dat").read_text().splitlines()
    header = json.loads(text[0][2:])
    assert header["format"] == "cloaklab-mat-1" and header["skipped_interface"] > 0
    assert len(text) == header["records"] + 2


def test_audit_lowfreq_and_morawetz(tmp_path):
    assert cli.main(["audit-lowfreq", "--out", str(tmp_path)]) == 0
    assert cli.main(["audit-morawetz", "--out", str(tmp_path)]) == 0
    for name in ("lowfreq", "morawetz"):
        rep = json.loads((tmp_path / f"audit-{name}.json").read_text())
        assert all(c["verdict"] == "confirmed" for c in rep["claims"])


def test_selftest(capsys):
    assert cli.main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cloaklab", "sweep", "--eps-list", "0.2,0.3"],
                         capture_output=True, text=True)
    assert out.returncode == 3 and "eps_list" in out.stderr
