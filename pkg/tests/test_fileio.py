import numpy as np
import pytest
from conftest import make_panel

from tsbhb.fileio import (
    ExperimentConfig,
    ModelFileError,
    default_threads,
    load_config,
    load_model,
    save_model,
)
from tsbhb.model import TSBHB
from tsbhb.panel import split_fixed_origin
from tsbhb.simulate import SyntheticSpec, generate_panel


@pytest.fixture(scope="module")
def p_in():
    return split_fixed_origin(generate_panel(SyntheticSpec(80, 60, seed=2)).panel)[0]


@pytest.mark.parametrize("variant", ["lognormal", "gamma", "mle_lognormal"])
def test_model_roundtrip_is_exact(tmp_path, p_in, variant):
    model = TSBHB(variant=variant).fit(p_in)
    path = tmp_path / "m.tsbhb"
    save_model(model, path)
    back = load_model(path)
    assert back.variant == variant
    assert back.ids_ == model.ids_
    assert np.array_equal(back.y_hat_, model.y_hat_)
    assert back.occurrence_hyper_ == model.occurrence_hyper_
    assert back.size_hyper_ == model.size_hyper_
    assert back.header_["variant"] == variant


def test_model_file_is_plain_text(tmp_path, p_in):
    model = TSBHB(variant="gamma").fit(p_in)
    save_model(model, tmp_path / "g.tsbhb")
    lines = (tmp_path / "g.tsbhb").read_text().splitlines()
    assert lines[0] == "# tsbhb model file"
    assert "variant = gamma" in lines
    assert any(line.startswith("size.alpha_s = ") for line in lines)


def test_tampered_model_rejected(tmp_path, p_in):
    path = tmp_path / "m.tsbhb"
    save_model(TSBHB().fit(p_in), path)
    text = path.read_text()
    head, body = text.split("[items]\n")
    tampered = head.replace("occurrence.phi = ", "occurrence.phi = 9") + "[items]\n" + body
    path.write_text(tampered)
    with pytest.raises(ModelFileError, match="disagree"):
        load_model(path)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("hello\n", "not a tsbhb model"),
        ("# tsbhb model file\nvariant = lognormal\n", "items"),
        ("# tsbhb model file\nvariant = lognormal\n[items]\nid\n", "missing header key"),
        ("# tsbhb model file\nvariant = pareto\n[items]\n", "unknown variant"),
    ],
)
def test_corrupt_model_files(tmp_path, text, needle):
    path = tmp_path / "bad.tsbhb"
    path.write_text(text)
    with pytest.raises(ModelFileError, match=needle):
        load_model(path)


def test_empty_model_rejected(tmp_path, p_in):
    path = tmp_path / "m.tsbhb"
    save_model(TSBHB().fit(p_in), path)
    head = path.read_text().split("[items]\n")[0]
    header_line = path.read_text().split("[items]\n")[1].splitlines()[0]
    path.write_text(head + "[items]\n" + header_line + "\n")
    with pytest.raises(ModelFileError, match="no items"):
        load_model(path)


def test_unfitted_model_not_saved(tmp_path):
    with pytest.raises(ModelFileError):
        save_model(TSBHB(), tmp_path / "x")


def test_missing_model_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "nope")


# ------------------------------------------------------------------ config


def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.quantiles == (0.1, 0.25, 0.5, 0.75, 0.9)
    assert cfg.level == 0.8 and cfg.aggregation == "per_point"
    assert cfg.models[0] == "tsb-hb"
    assert len(cfg.tsb_grid) == 10


@pytest.mark.parametrize(
    "kw",
    [
        {"quantiles": (0.5, 0.1)},
        {"quantiles": (0.0, 0.5)},
        {"level": 1.0},
        {"aggregation": "mean"},
        {"tsb_validation": "cheat"},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(**kw)


def test_config_overrides_ignore_none():
    cfg = ExperimentConfig().with_overrides(level=0.9, quantiles=None)
    assert cfg.level == 0.9 and cfg.quantiles == ExperimentConfig().quantiles


def test_load_config_resolves_relative_path(tmp_path):
    (tmp_path / "cfg.toml").write_text(
        '[data]\npath = "panel.csv"\n[evaluation]\nquantiles = [0.5]\n[run]\nseed = 3\n'
    )
    cfg = load_config(tmp_path / "cfg.toml")
    assert cfg.data_path == str((tmp_path / "panel.csv").resolve())
    assert cfg.quantiles == (0.5,) and cfg.seed == 3


def test_load_config_rejects_unknown_keys(tmp_path):
    (tmp_path / "cfg.toml").write_text("[data]\npaht = 'x'\n")
    with pytest.raises(ValueError, match="unknown setting"):
        load_config(tmp_path / "cfg.toml")


def test_bundled_example_config(example_config_path):
    cfg = load_config(example_config_path)
    assert cfg.data_path.endswith("sample_panel.csv")


def test_default_threads_env(monkeypatch):
    monkeypatch.setenv("TSBHB_NUM_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("TSBHB_NUM_THREADS", "junk")
    assert default_threads() == 1


def test_make_panel_helper_smoke():
    assert make_panel([[1.0]]).ids == ["s0"]
