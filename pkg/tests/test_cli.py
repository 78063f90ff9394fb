import csv
import json
import subprocess
import sys

import pytest

from asiplab.cli import main, read_csv, render_report, write_csv
from asiplab.config import ExperimentConfig, from_dict, load_config
from asiplab.errors import ConfigError, MissingInput

CAT_CLT = """
[system]
kind = "catmap"

[observable]
kind = "CatCharacter"
k = [1, 0]

[process]
n_max = 1000
ensemble = 2000
seed = 42

[tests]
select = ["variance", "clt"]
"""


def write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_gamma_out_of_range(tmp_path):
    p = write(tmp_path, '[process]\nmode = "targets"\n\n[targets]\ngamma = 0.9\n')
    with pytest.raises(ConfigError, match=r"γ ∈ \(0, 3/4\)") as exc:
        load_config(p)
    assert exc.value.field == "targets.gamma"
    assert exc.value.line == 5
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_round_trip():
    cfg = from_dict({"process": {"seed": 2 ** 64 - 1, "n_max": 77},
                     "budget": {"lambda": 0.4},
                     "tests": {"select": ["clt"], "tolerances": {"clt_ks": 0.01}}})
    again = from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert cfg.budget.lam == 0.4


def test_json_ingestion(tmp_path):
    p = write(tmp_path, json.dumps({"process": {"n_max": 50}}), "exp.json")
    assert load_config(p).process.n_max == 50


@pytest.mark.parametrize("text,field", [
    ("[process]\nseed = -1\n", "process.seed"),
    ("[process]\nn_max = 0\n", "process.n_max"),
    ("[process]\nbogus = 1\n", "process.bogus"),
    ("[nope]\n", "nope"),
    ('[tests]\nselect = ["magic"]\n', "tests.select"),
    ('[system]\nkind = "sphere"\n', "system.kind"),
    ("[blocks]\neps = 1.5\n", "blocks.eps"),
])
def test_validation_errors(tmp_path, text, field):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, text))
    assert exc.value.field == field


def test_toml_syntax_error_line(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, "[process]\nn_max = = 3\n"))
    assert exc.value.line == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_minimal_catmap_clt(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--config", str(write(tmp_path, CAT_CLT)),
                 "--out", str(out)])
    assert code == 0
    files = {p.name for p in out.iterdir()}
    assert {"summary.json", "variance.csv", "clt.csv"} <= files
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {f["file"] for f in manifest["files"]}
    assert listed == files - {"manifest.json"}
    assert all(len(f["sha256"]) == 64 for f in manifest["files"])
    summary = json.loads((out / "summary.json").read_text())
    for est in summary["estimates"].values():
        assert {"estimator", "sample_size", "seed"} <= set(est)
    with open(out / "clt.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["n", "value", "stderr"]
    assert all(len(r) == len(rows[0]) for r in rows)


def test_rerun_same_digests(tmp_path):
    cfg = write(tmp_path, CAT_CLT)
    digests = []
    for name, workers in (("a", "1"), ("b", "3")):
        main(["run", "--config", str(cfg), "--out", str(tmp_path / name),
              "--workers", workers])
        m = json.loads((tmp_path / name / "manifest.json").read_text())
        digests.append({f["file"]: f["sha256"] for f in m["files"]})
    assert digests[0] == digests[1]


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, CAT_CLT)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"),
          "--seed", "43"])
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert b["seed"] == 43 and a["seed"] == 42
    assert a["estimates"]["clt_ks"] != b["estimates"]["clt_ks"]


def test_gate_failure_and_strict(tmp_path):
    text = CAT_CLT.replace('select = ["variance", "clt"]',
                           'select = ["clt", "moments"]\n'
                           'tolerances = {clt_ks = 1e-9}')
    cfg = write(tmp_path, text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 1
    s = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert [g["gate"] for g in s["gates"]] == ["moments", "clt"] or \
        [g["gate"] for g in s["gates"]] == ["clt", "moments"]
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"),
                 "--strict"]) == 1
    s = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert s["aborted"] and not s["gates"][-1]["passed"]


def test_blocks_and_budget_print(capsys):
    assert main(["blocks", "--eps", "0.5", "--jmax", "6"]) == 0
    assert capsys.readouterr().out.strip() == "tau = -1, 0, 1, 3, 5, 7, 10"
    assert main(["budget", "--k2", "0.5", "--kp", "1", "--lambda", "0.3"]) == 0
    out = capsys.readouterr().out
    eps = float(out.split("=")[1].split()[0])
    assert abs(eps - 0.0247) < 1e-3
    assert main(["budget", "--k2", "0.5", "--kp", "0.5", "--lambda", "0.2"]) == 3


def test_report_empty_dir(tmp_path):
    with pytest.raises(MissingInput):
        render_report(tmp_path)
    assert main(["report", "--out", str(tmp_path)]) == 3


def test_report_svgs(tmp_path):
    write_csv(tmp_path / "variance.csv", ["n", "value", "stderr", "ratio"],
              [(10, 5.0, 0.5, 0.5), (100, 50.0, 5.0, 0.5)])
    write_csv(tmp_path / "mixing.csv", ["n", "value", "stderr"],
              [(1, 0.1, 0.01), (2, 0.05, 0.01)])
    first = render_report(tmp_path)
    assert first == ["variance.svg", "mixing.svg"]
    a = (tmp_path / "variance.svg").read_text()
    assert "<!-- asiplab" in a and "sha256" in a
    render_report(tmp_path)
    assert (tmp_path / "variance.svg").read_text() == a


def test_csv_seventeen_digits(tmp_path):
    write_csv(tmp_path / "x.csv", ["n", "value", "stderr"],
              [(3, 0.1, None), (4, 1 / 3, float("nan"))])
    lines = (tmp_path / "x.csv").read_text().splitlines()
    assert lines[1] == "3,0.10000000000000001,"
    assert lines[2] == "4,0.33333333333333331,nan"
    d = read_csv(tmp_path / "x.csv")
    assert d["value"][1] == 1 / 3


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "asiplab.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.1.0"


def test_default_config_is_valid():
    cfg = ExperimentConfig()
    assert from_dict(cfg.to_dict()) == cfg
