import pytest

from focalfuse.config import (
    DEFAULTS,
    PRESETS,
    ConfigError,
    load_scene,
    parse_scene,
    write_scene_snapshot,
)

MINIMAL = """
[scene]
base_mesh = "base.obj"

[[regions]]
stretch = [0.3, 0.2, 0.2]
translation = [0.5, 0.0, 0.0]
"""


@pytest.fixture
def scene_dir(tmp_path):
    (tmp_path / "base.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    (tmp_path / "scene.toml").write_text(MINIMAL)
    return tmp_path


def test_minimal_config_gets_defaults(scene_dir):
    cfg = load_scene(scene_dir / "scene.toml")
    assert cfg.losses["k"] == 0.15
    assert cfg.losses["sigma1"] == 0.05 and cfg.losses["sigma2"] == 0.01
    assert cfg.losses["lambda_gf"] == 1000 and cfg.losses["lambda_ca"] == 100
    assert cfg.losses["lambda_b"] == 100 and cfg.losses["lambda_sc"] == 10
    assert cfg.scene["preset"] == "desk"
    assert cfg.grid["resolution"] == PRESETS["desk"]["grid"]["resolution"]
    assert cfg.base_mesh_path == scene_dir / "base.obj"
    assert len(cfg.regions) == 1 and cfg.regions[0].rotation_deg == [0.0, 0.0, 0.0]


def test_paper_preset(scene_dir):
    cfg = load_scene(scene_dir / "scene.toml", preset="paper")
    assert cfg.grid["resolution"] == 64
    assert cfg.geometry["steps"] == 3000 and cfg.appearance["steps"] == 2000
    assert cfg.geometry["init_iters"] == 15000 and cfg.geometry["init_batch"] == 10240


def test_explicit_values_override_preset():
    cfg = parse_scene(MINIMAL + "\n[grid]\nresolution = 12\n", check_paths=False, preset="paper")
    assert cfg.grid["resolution"] == 12


def test_malformed_file_names_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_scene('[scene]\nbase_mesh = "a.obj"\nseed = = 3\n', check_paths=False)


def test_negative_weight_rejected():
    text = MINIMAL + "\n[losses]\nlambda_gf = -1.0\n"
    with pytest.raises(ConfigError, match=r"line \d+: losses.lambda_gf"):
        parse_scene(text, check_paths=False)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="line 3: unknown key scene.colour"):
        parse_scene('[scene]\nbase_mesh = "a.obj"\ncolour = 1\n', check_paths=False)
    with pytest.raises(ConfigError, match="unknown table"):
        parse_scene(MINIMAL + "\n[extras]\nx = 1\n", check_paths=False)
    with pytest.raises(ConfigError, match="regions"):
        parse_scene(MINIMAL.replace("translation", "offset"), check_paths=False)


def test_missing_mesh(tmp_path):
    with pytest.raises(ConfigError, match="base_mesh is required"):
        parse_scene("[[regions]]\nstretch = [1, 1, 1]\n", check_paths=False)
    (tmp_path / "s.toml").write_text(MINIMAL)
    with pytest.raises(ConfigError, match="file not found"):
        load_scene(tmp_path / "s.toml")


def test_regions_required_and_validated():
    with pytest.raises(ConfigError, match="regions"):
        parse_scene('[scene]\nbase_mesh = "a.obj"\n', check_paths=False)
    with pytest.raises(ConfigError, match="positive"):
        parse_scene(MINIMAL.replace("[0.3, 0.2, 0.2]", "[0.3, 0.0, 0.2]"), check_paths=False)
    with pytest.raises(ConfigError, match="three"):
        parse_scene(MINIMAL.replace("[0.3, 0.2, 0.2]", "[0.3, 0.2]"), check_paths=False)


@pytest.mark.parametrize(
    "table, line, message",
    [
        ("geometry", "steps = -1", "steps"),
        ("geometry", 'coarse_objective = "clip"', "coarse_objective"),
        ("appearance", "l = 0", "appearance.s"),
        ("appearance", "r = [3.0, 2.0]", "appearance.r"),
        ("losses", "k = 0.0", "losses.k"),
        ("target", 'shape = "torus"', "target.shape"),
        ("render", 'format = "jpg"', "render.format"),
        ("render", 'normal_space = "tangent"', "render.normal_space"),
        ("grid", "bounds = [[0, 0, 0], [1, 0, 1]]", "grid.bounds"),
    ],
)
def test_validation(table, line, message):
    with pytest.raises(ConfigError, match=message):
        parse_scene(MINIMAL + f"\n[{table}]\n{line}\n", check_paths=False)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="preset"):
        parse_scene(MINIMAL, check_paths=False, preset="huge")


def test_snapshot_reloads_identically(scene_dir):
    cfg = load_scene(scene_dir / "scene.toml")
    snap = write_scene_snapshot(cfg, scene_dir / "run")
    again = load_scene(snap)
    assert again.to_dict() == cfg.to_dict()
    assert set(cfg.to_dict()) == set(DEFAULTS) | {"regions"}
