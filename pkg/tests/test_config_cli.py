import json

import pytest

from imlab import cli
from imlab.config import ConfigError, config_hash, parse_config, serialize

SMALL = """
[run]
seed = 3
paths = 2

[model]
variant = Sabra
N = 4

[experiment]
alpha = 0.5
horizon = 4
batches = 4
reservoir = 20
reservoir_every = 5
checks = identity, tail
balance_horizon = 0.2

[integrator]
dt = 0.01
"""


def test_round_trip_is_canonical():
    cfg = parse_config(SMALL, kind="simulate")
    text = serialize(cfg)
    again = parse_config(text, kind="simulate")
    assert serialize(again) == text
    assert config_hash(again) == config_hash(cfg)
    assert cfg["model.N"] == 4 and cfg["run.seed"] == 3


def test_inline_comments_are_ignored():
    cfg = parse_config("[model]\nvariant = Sabra   ; shell model\nN = 6  # shells\n", kind="simulate")
    assert cfg["model.variant"] == "Sabra" and cfg["model.N"] == 6


def test_hash_changes_with_values():
    a = parse_config(SMALL, kind="simulate")
    b = a.with_overrides(**{"run.seed": 4})
    assert config_hash(a) != config_hash(b)


@pytest.mark.parametrize("text,path", [
    ("[model]\nvariant = Sabra\nbogus = 1\n", "model.bogus"),
    ("[model]\nvariant = Sabra\n[extras]\nx = 1\n", "extras"),
    ("[model]\nvariant = Sabra\n[dissipation]\nq = 5\n", "dissipation.q"),
    ("[model]\nvariant = Sabra\n[dissipation]\ns1_star = 4\n", "dissipation.s1_star"),
    ("[model]\nN = 4\n", "model.variant"),
    ("[model]\nvariant = Sabra\nN = many\n", "model.N"),
    ("[model]\nvariant = GSQG\nalpha_sqg = 0.8\n", "model.alpha_sqg"),
], ids=["key", "section", "q-even", "s1", "variant", "type", "singular"])
def test_invalid_configs_name_the_path(text, path):
    with pytest.raises(ConfigError) as info:
        parse_config(text, kind="simulate")
    assert any(p == path for p, _, _ in info.value.errors)
    assert path in str(info.value)


def test_all_errors_are_reported_together():
    with pytest.raises(ConfigError) as info:
        parse_config("[dissipation]\nq = 3\ns1_star = 2\n", kind="simulate")
    paths = {p for p, _, _ in info.value.errors}
    assert {"model.variant", "dissipation.q", "dissipation.s1_star"} <= paths


def test_singular_gsqg_allowed_with_flag():
    cfg = parse_config("[model]\nvariant = GSQG\nalpha_sqg = 0.8\nallow_singular = true\n", kind="simulate")
    assert cfg["model.alpha_sqg"] == 0.8


def test_mode_radius_sets_truncation():
    cfg = parse_config("[model]\nvariant = Euler2DVorticity\nmode_radius = 3\n", kind="simulate")
    assert cfg.N == 9


def test_unknown_variant_reported_once():
    with pytest.raises(ConfigError) as info:
        parse_config("[model]\nvariant = Euler2D\n", kind="simulate")
    assert [p for p, _, _ in info.value.errors] == ["model.variant"]


def test_verify_needs_no_variant():
    cfg = parse_config("", kind="verify")
    assert cfg.kind == "verify" and cfg["model.variant"] is None


def test_plots_data_headers_and_unknown_series(tmp_path):
    paths = cli.emit_plots_data({"series": {}}, tmp_path, ["energy_vs_t"])
    assert paths[0].read_text() == ",".join(cli.SERIES["energy_vs_t"]) + "\n"
    with pytest.raises(KeyError):
        cli.emit_plots_data({}, tmp_path, ["spectrum"])


def test_exit_code_strict_mode():
    inc = [{"status": "PASS"}, {"status": "INCONCLUSIVE"}]
    assert cli.exit_code(inc) == 0
    assert cli.exit_code(inc, strict=True) == 1
    assert cli.exit_code([{"status": "FAIL"}]) == 1


def test_verify_structure_command(tmp_path, capsys):
    cfg = tmp_path / "v.ini"
    cfg.write_text("[verify]\ntrials = 5\nmodels = Sabra, Euler2DVorticity\n")
    code = cli.main(["verify", "structure", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["verdicts"] and all(v["pass"] for v in report["verdicts"])
    assert "report:" in capsys.readouterr().out


def test_bad_config_exits_with_two(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[model]\nvariant = Sabra\n[dissipation]\nq = 3\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "dissipation.q" in capsys.readouterr().err


def _strip_times(text):
    rep = json.loads(text)
    rep["provenance"].pop("started")
    rep["provenance"].pop("finished")
    return rep


def test_simulate_outputs_reproducible(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text(SMALL)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["simulate", "--config", str(cfg), "--out", str(out)])
        outs.append(out)
    a, b = outs
    assert _strip_times((a / "report.json").read_text()) == _strip_times((b / "report.json").read_text())
    for f in sorted(p.name for p in a.glob("*.csv")) + ["config.ini"]:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    snaps = sorted(p.name for p in (a / "reservoir").iterdir())
    assert snaps and all((a / "reservoir" / s).read_bytes() == (b / "reservoir" / s).read_bytes() for s in snaps)
