from pathlib import Path

import numpy as np
import pytest

from config_utils import DEFAULTS, flatten, load_config, parse_overrides, parse_sections
from errors import ConfigError
from synth import SceneSpec, generate_scene


def test_defaults_without_file():
    cfg = load_config()
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS


def test_shipped_config_equals_defaults():
    assert load_config(str(Path(__file__).resolve().parent.parent / "config.yml")) == DEFAULTS


def test_file_then_preset_then_overrides(tmp_path):
    path = tmp_path / "c.yml"
    path.write_text("hua:\n  m: 50\n  k: 8\n", encoding="utf-8")
    cfg = load_config(str(path), ["hua.m=7"], preset="scannet")
    assert cfg["hua"]["m"] == 7
    assert cfg["hua"]["k"] == 8
    assert cfg["hua"]["p"] == 0.15
    assert cfg["hua"]["lambda"] == 2.0


def test_override_values_are_coerced():
    cfg = load_config(overrides=["hua.lambda=2", "gbd.enabled=false", "run.cloud=scene.owpc"])
    assert cfg["hua"]["lambda"] == 2.0 and isinstance(cfg["hua"]["lambda"], float)
    assert cfg["gbd"]["enabled"] is False
    assert cfg["run"]["cloud"] == "scene.owpc"


@pytest.mark.parametrize(
    "overrides,needle",
    [
        (["hua.bogus=1"], "hua.bogus"),
        (["nosection.m=1"], "nosection"),
        (["hua.m=1.5"], "hua.m"),
        (["gbd.enabled=1"], "gbd.enabled"),
        (["hua.m"], "hua.m"),
        (["m=3"], "m"),
    ],
)
def test_bad_overrides(overrides, needle):
    with pytest.raises(ConfigError) as err:
        load_config(overrides=overrides)
    assert needle in str(err.value)
    assert err.value.kind == "config-error"


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "c.yml"
    path.write_text("gbd:\n  epsilon: 2.0\n  sigma: 1\n", encoding="utf-8")
    with pytest.raises(ConfigError) as err:
        load_config(str(path))
    assert "gbd.sigma" in str(err.value)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_config(preset="kitti")


def test_env_expansion(tmp_path, monkeypatch):
    monkeypatch.setenv("OWPL_TEST_CLOUD", "/data/area5.owpc")
    path = tmp_path / "c.yml"
    path.write_text('run:\n  cloud: "${OWPL_TEST_CLOUD}"\n', encoding="utf-8")
    assert load_config(str(path))["run"]["cloud"] == "/data/area5.owpc"


def test_parse_overrides_and_flatten():
    assert parse_overrides(["a.b=1", "a.c=x", "d.e="]) == {"a": {"b": 1, "c": "x"}, "d": {"e": ""}}
    rows = flatten({"b": {"y": 1, "x": 2}, "a": {"z": 3}})
    assert rows == [("a.z", 3), ("b.x", 2), ("b.y", 1)]


def test_shipped_section_config_equals_defaults():
    assert load_config(str(Path(__file__).resolve().parent.parent / "owpl.conf")) == DEFAULTS


def test_section_format(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text(
        "# paper defaults\n"
        "[hua]\n"
        "m = 20\n"
        "p = 0.02\n"
        "lambda = 1.5   # looser stop\n"
        "\n"
        "[loss]\n"
        "alpha = 0.001\n"
        "[run]\n"
        "cloud = data/area_5.owpc\n"
        "[eval]\n"
        "old_classes = [0, 1]\n",
        encoding="utf-8",
    )
    cfg = load_config(str(path), ["hua.m=30"])
    assert cfg["hua"]["m"] == 30
    assert cfg["hua"]["p"] == 0.02
    assert cfg["hua"]["lambda"] == 1.5
    assert cfg["loss"]["alpha"] == 0.001
    assert cfg["run"]["cloud"] == "data/area_5.owpc"
    assert cfg["eval"]["old_classes"] == [0, 1]
    assert cfg["gbd"] == DEFAULTS["gbd"]


def test_cluster_sections_fill_synth_lists():
    parsed = parse_sections(
        "[synth]\n"
        "n_classes = 4\n"
        "[cluster]\n"
        "center = [0.0, 0.0, 0.0]\n"
        "radius = 0.5\n"
        "point_count = 30\n"
        "class_id = -1\n"
        "[cluster]\n"
        "center = [4.0, 0.0, 0.0]\n"
        "radius = 1.0\n"
        "point_count = 50\n"
        "class_id = 2\n",
        "scene.conf",
    )
    assert parsed["synth"]["n_classes"] == 4
    assert parsed["synth"]["known_clusters"] == [
        {"center": [4.0, 0.0, 0.0], "radius": 1.0, "point_count": 50, "class_id": 2}
    ]
    assert parsed["synth"]["unknown_clusters"] == [
        {"center": [0.0, 0.0, 0.0], "radius": 0.5, "point_count": 30, "class_id": -1}
    ]


def test_cluster_sections_drive_scene(tmp_path):
    path = tmp_path / "scene.conf"
    path.write_text(
        "[synth]\nn_classes = 4\n"
        "[cluster]\ncenter = [4.0, 0.0, 0.0]\nradius = 1.0\npoint_count = 50\nclass_id = 2\n"
        "[cluster]\ncenter = [0.0, 0.0, 0.0]\nradius = 0.5\npoint_count = 30\nclass_id = -1\n",
        encoding="utf-8",
    )
    cloud, truth = generate_scene(SceneSpec.from_config(load_config(str(path))["synth"]))
    assert cloud.n_points == 80 and cloud.n_classes == 4
    assert int(truth.sum()) == 30
    assert set(np.unique(cloud.labels)) == {-1, 2}


@pytest.mark.parametrize(
    "text,needle",
    [
        ("m = 3\n", "line 1"),
        ("[hua]\nm 20\n", "line 2"),
        ("[hua]\n = 20\n", "line 2"),
        ("[hua]\nm = [1,\n", "line 2"),
        ("[hua]\nbogus = 1\n", "hua.bogus"),
        ("[colour]\nm = 1\n", "colour"),
        ("[cluster]\ncolour = red\n", "cluster.colour"),
        ("[hua]\nm = many\n", "hua.m"),
    ],
)
def test_bad_section_files(tmp_path, text, needle):
    path = tmp_path / "bad.conf"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError) as err:
        load_config(str(path))
    assert needle in str(err.value)
    assert err.value.kind == "config-error"


def test_yaml_suffix_still_reads_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("hua:\n  m: 12\n", encoding="utf-8")
    assert load_config(str(path))["hua"]["m"] == 12
