import csv
import io
import json

import pytest

from levymalliavin.cli import main
from levymalliavin.config import (KINDS, PRESETS, ConfigError, ExperimentConfig, load_config,
                                  preset)
from levymalliavin.runner import CSV_COLUMNS, run


def _small(name, paths=200):
    return preset(name).with_overrides(paths=paths)


def test_every_preset_loads_with_a_known_kind():
    for name in PRESETS:
        assert preset(name).kind in KINDS


def test_yaml_round_trip(tmp_path):
    cfg = preset("duality-grid")
    f = tmp_path / "c.yaml"
    f.write_text(cfg.dumps())
    back = load_config(f)
    assert back.to_dict() == cfg.to_dict()
    assert back.hash == cfg.hash


def test_json_input_and_key_order_do_not_change_the_hash(tmp_path):
    cfg = preset("psi-algebra")
    data = cfg.to_dict()
    shuffled = {k: data[k] for k in reversed(list(data))}
    f = tmp_path / "c.json"
    f.write_text(json.dumps(shuffled, indent=3))
    assert load_config(f).hash == cfg.hash


def test_overrides_change_only_the_ensemble():
    cfg = preset("psi-algebra")
    new = cfg.with_overrides(seed=99, paths=10)
    assert (new.seed, new.paths) == (99, 10)
    assert new.model == cfg.model and new.hash != cfg.hash


@pytest.mark.parametrize("patch", [
    {"kind": "nope"},
    {"grid": {"M": 0}},
    {"model": {"T": -1.0}},
    {"model": {"sigma": "abc"}},
    {"ensemble": {"paths": 0}},
    {"ensemble": {"seed": -3}},
    {"partition": {"ratio": 1.5}},
    {"model": {"nu": {"kind": "density", "name": "unknown"}}},
    {"extra": 1},
])
def test_invalid_configs_are_rejected(patch):
    data = preset("psi-algebra").to_dict()
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(data.get(k), dict):
            data[k] = {**data[k], **v}
        else:
            data[k] = v
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_unknown_catalog_ids_are_config_errors():
    data = preset("duality-grid").with_overrides(paths=10).to_dict()
    data["params"]["fields"] = ["no_such_field"]
    with pytest.raises(ConfigError):
        run(ExperimentConfig.from_dict(data))


def test_malformed_yaml(tmp_path):
    f = tmp_path / "bad.yaml"
    f.write_text("kind: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(f)


def test_csv_layout():
    rep = run(_small("derivative-fd", 20))
    lines = rep.csv_text().splitlines()
    assert lines[0] == f"# config_hash={rep.config_hash}"
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert all(len(r) == len(CSV_COLUMNS) for r in rows[1:])


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["psi-algebra", "--preset", "psi-algebra", "--paths", "50",
                 "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "results.csv").exists()
    # too few cells for the ratio clause of the refinement check
    assert main(["verify-ito", "--preset", "adapted-ito-bm", "--paths", "50"]) == 1
    assert main(["verify-ito", "--preset", "psi-algebra"]) == 2
    assert main(["psi-algebra", "--preset", "no-such-preset"]) == 2
    assert main(["psi-algebra", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["presets"]) == 0
    capsys.readouterr()


def test_results_are_identical_across_worker_counts():
    data = _small("bridge-two-atom", 300).to_dict()
    data["ensemble"]["block_size"] = 64
    cfg = ExperimentConfig.from_dict(data)
    a = run(cfg, workers=1).csv_text()
    b = run(cfg, workers=3).csv_text()
    assert a == b
