import csv
import json

import pytest

from pmelab import cli
from pmelab.analysis import REGIME_ABSOLUTE, REGIME_HYPERBOLIC


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    code = cli.main(["run", "--config", name, "--out", str(out), *extra])
    return code, out, json.loads((out / "report.json").read_text())


def test_list_presets(capsys):
    assert cli.main(["list-presets"]) == 0
    text = capsys.readouterr().out
    for name in ("euclidean-barenblatt", "subpoincare-failure-thm45", "constants-gamma-fit",
                 "hyperbolic-thm21", "intermediate-a05-prop34", "weighted-absolute-thm41"):
        assert name in text


def test_every_preset_validates():
    for name in cli.PRESETS:
        assert cli.validate_config(cli.preset_config(name)) == []


def test_schema_errors_listed_exhaustively(tmp_path, capsys):
    bad = {"schema_version": 2, "scenario": "x",
           "profile": {"family": "sphere", "d": 1}, "m": 0.5, "bogus": 1}
    errs = cli.validate_config(bad)
    assert len(errs) == 5
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    for key in ("schema_version", "profile/family", "profile/d", "m:", "bogus"):
        assert key in err


def test_unknown_config_source():
    with pytest.raises(cli.ConfigError):
        cli.load_config("no-such-preset")


def test_defaults_merged():
    cfg = cli.load_config("subpoincare-failure-thm45")
    assert cfg["m"] == 2.0
    assert cfg["solver"]["enabled"] is False
    assert cfg["constants"]["witness_p"] == 1.5


def test_subpoincare_preset_strict(tmp_path):
    code, out, rep = _run(tmp_path, "subpoincare-failure-thm45", "--strict")
    assert code == 0 and rep["passed"]
    for f in ("geometry.json", "constants.json", "report.json"):
        text = (out / f).read_text(encoding="utf-8")
        doc = json.loads(text)
        assert text == json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def test_run_is_reproducible(tmp_path):
    _, _, a = _run(tmp_path / "a", "hyperbolic-thm21")
    _, _, b = _run(tmp_path / "b", "hyperbolic-thm21")
    assert a["checks"] == b["checks"]
    assert a["fit"]["decay_fit"]["beta"] == pytest.approx(b["fit"]["decay_fit"]["beta"], rel=1e-12)


def test_hyperbolic_preset_regime(tmp_path):
    code, out, rep = _run(tmp_path, "hyperbolic-thm21", "--strict")
    assert code == 0
    assert rep["fit"]["regime"]["verdict"] == REGIME_HYPERBOLIC
    with open(out / "trajectory.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header[:3] == ["t", "sup_norm", "mass"]


@pytest.mark.slow
def test_intermediate_preset_fits(tmp_path):
    code, _, rep = _run(tmp_path, "intermediate-a05-prop34", "--strict")
    assert code == 0
    assert "gamma_fit" in rep["constants"]
    assert rep["fit"]["regime"]["targets"]["log-power (2-a)/(a(m-1))"] == pytest.approx(3.0)
    assert "decay_fit" in rep["fit"]


def test_weighted_preset_exports_elliptic(tmp_path):
    code, out, rep = _run(tmp_path, "weighted-absolute-thm41", "--strict")
    assert code == 0
    assert rep["fit"]["regime"]["verdict"] == REGIME_ABSOLUTE
    assert rep["fit"]["regime"]["targets"][REGIME_ABSOLUTE] == 0.0
    lines = (out / "elliptic.csv").read_text().splitlines()
    assert lines[0] == "r_center,W" and len(lines) > 10


def test_strict_exit_on_failed_check(tmp_path):
    cfg = cli.preset_config("subpoincare-failure-thm45")
    # expecting a gamma of 5 on H^3 cannot pass
    cfg["constants"]["sigma_grid"] = cli.GAMMA_GRID
    cfg["constants"]["gamma_target"] = 5.0
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert cli.main(["constants", "--config", str(p), "--out", str(tmp_path / "o"),
                     "--strict"]) == 1
    assert cli.main(["constants", "--config", str(p), "--out", str(tmp_path / "o")]) == 0


def test_fit_subcommand_from_csv(tmp_path):
    out = tmp_path / "h"
    cli.main(["simulate", "--config", "hyperbolic-thm21", "--out", str(out)])
    assert cli.main(["fit", "--config", "hyperbolic-thm21", "--out", str(out), "--strict"]) == 0
    fit = json.loads((out / "fit.json").read_text())
    assert fit["regime"]["verdict"] == REGIME_HYPERBOLIC


def test_barrier_check_rejects_non_intermediate(tmp_path):
    assert cli.main(["barrier-check", "--config", "hyperbolic-thm21",
                     "--out", str(tmp_path)]) == 2
