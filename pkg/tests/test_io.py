from __future__ import annotations

import json

import numpy as np
import pytest

from gravcont import NoiseSpec, add_noise, make_regular_observation_grid, synth_field
from gravcont import io
from gravcont.continuation import EstimatedSource
from gravcont.exceptions import ConfigError, FileFormatError

from conftest import SQUARE, TWO_SOURCES

BASE = {
    "sources": [
        {"mass": 0.1, "position": [-0.2, 0.2, -0.3]},
        {"mass": 0.2, "position": [0.3, -0.1, -0.4]},
    ],
    "observation": {"extent": [-1, 1, -1, 1], "N1": 40, "N2": 40},
    "continuation": {"extent": [-1, 1, -1, 1], "M1": 40, "M2": 40},
}


def _write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d, indent=2), encoding="utf-8")
    return p


def test_defaults(tmp_path):
    cfg = io.load_config(_write(tmp_path, BASE))
    assert len(cfg.sources) == 2
    assert cfg.depths[0] == 0.05 and cfg.depths[-1] == 0.8 and len(cfg.depths) == 151
    assert cfg.noise == NoiseSpec(0.0, 0)
    assert cfg.gravitational_constant == 1.0
    assert cfg.solver.warm_start and cfg.solver.ls_solver == "qr"
    assert cfg.peel.max_rounds == 5


def test_explicit_depth_list(tmp_path):
    cfg = io.load_config(_write(tmp_path, dict(BASE, depths=[0.3, 0.1])))
    assert cfg.depths == (0.3, 0.1) and cfg.depth_range is None


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"sources": None}, "sources"),
        ({"depths": []}, "depths"),
        ({"depths": [0.1, -0.2]}, "depths"),
        ({"observation": {"extent": [-1, 1, -1, 1], "N1": 0, "N2": 4}}, "observation.N1"),
        ({"continuation": {"extent": [1, -1, -1, 1], "M1": 4, "M2": 4}}, "continuation.extent"),
        ({"noise": {"delta": -1}}, "noise"),
        ({"solver": {"ls_solver": "lu"}}, "solver"),
        ({"gravitational_constant": 0}, "gravitational_constant"),
    ],
)
def test_invalid_fields_are_named(tmp_path, patch, field):
    d = dict(BASE, **patch)
    if patch.get("sources", 1) is None:
        del d["sources"]
    with pytest.raises(ConfigError) as info:
        io.load_config(_write(tmp_path, d))
    assert info.value.field == field
    assert f"field={field!r}" in str(info.value)


def test_error_reports_line(tmp_path):
    d = dict(BASE, depths=[])
    p = _write(tmp_path, d)
    with pytest.raises(ConfigError) as info:
        io.load_config(p)
    lines = p.read_text().splitlines()
    assert '"depths"' in lines[info.value.line - 1]


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "sources": [\n  oops\n}', encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        io.load_config(p)
    assert info.value.line == 3


def test_overrides_take_precedence(tmp_path):
    cfg = io.load_config(_write(tmp_path, dict(BASE, noise={"delta": 0.01, "seed": 3})))
    out = io.with_overrides(cfg, delta=0.05, output_directory="x", depth_stop=0.3,
                            ls_solver="normal", max_rounds=2)
    assert out.noise == NoiseSpec(0.05, 3)
    assert out.output_directory == "x"
    assert out.depths[-1] == 0.3 and out.depths[0] == 0.05
    assert out.solver.ls_solver == "normal" and out.solver.warm_start
    assert out.peel.max_rounds == 2
    assert io.with_overrides(cfg) == cfg


def test_config_dict_round_trip(tmp_path):
    cfg = io.load_config(_write(tmp_path, dict(BASE, noise={"delta": 0.05, "seed": 9})))
    again = io.config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_fmt_is_shortest_round_trip():
    for x in (0.1, 1 / 3, 1.337385281090806, 5e-324, -0.0, 1e22):
        assert float(io.fmt(x)) == x
    assert io.fmt(0.32) == "0.32"
    assert io.fmt(True) == "1" and io.fmt(np.int64(7)) == "7"


def test_observation_round_trip_is_bitwise(tmp_path):
    obs = make_regular_observation_grid(SQUARE, 40, 40)
    clean = synth_field(TWO_SOURCES, obs.points)
    noisy = add_noise(clean, NoiseSpec(0.01, 1))
    p = io.write_observations(tmp_path / "obs.csv", obs.points, clean, noisy)
    back, c2, n2 = io.read_observations(p)
    assert back.points.tobytes() == obs.points.tobytes()
    assert c2.tobytes() == clean.tobytes()
    assert n2.tobytes() == noisy.tobytes()
    assert back.values.tobytes() == noisy.tobytes()
    raw = p.read_bytes()
    assert raw.startswith(b"x1,x2,x3,g_clean,g_noisy\n") and b"\r" not in raw
    _, data = io.read_csv(p)
    i = np.flatnonzero(np.isclose(data[:, 0], -0.2) & np.isclose(data[:, 1], 0.2))
    assert i.size == 1
    assert data[i[0], 3] == pytest.approx(1.337385281090806, abs=1e-9)


def test_noise_free_file_has_four_columns(tmp_path):
    obs = make_regular_observation_grid(SQUARE, 2, 2)
    p = io.write_observations(tmp_path / "o.csv", obs.points, np.ones(9))
    assert p.read_text().splitlines()[0] == "x1,x2,x3,g_clean"
    back, clean, noisy = io.read_observations(p)
    assert noisy is None and np.all(back.values == 1)


@pytest.mark.parametrize(
    "text",
    ["", "a,b\n1,2\n", "x1,x2,x3,g_clean\n1,2,3\n", "x1,x2,x3,g_clean\n1,2,3,zz\n"],
)
def test_malformed_csv(tmp_path, text):
    p = tmp_path / "o.csv"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(FileFormatError):
        io.read_observations(p)


def test_sources_and_meta(tmp_path):
    srcs = [EstimatedSource(0.1, (-0.2, 0.2, -0.3), 1, 3.5)]
    p = io.write_sources(tmp_path / "s.csv", srcs)
    assert p.read_text() == "round,mass,x1,x2,depth,residual_after\n1,0.1,-0.2,0.2,0.3,3.5\n"
    m = io.write_meta(p, None, command="peel")
    assert m.name == "s.meta.json"
    rec = json.loads(m.read_text())
    assert rec["command"] == "peel" and rec["version"]
