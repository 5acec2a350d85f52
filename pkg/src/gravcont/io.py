"""Experiment configuration and CSV/JSON file formats."""
from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigError, FileFormatError, GravcontError
from .model import DEFAULT_G, NoiseSpec, ObservationSet, PointSource, Rectangle
from .nnls import NnlsOptions

OBSERVATION_HEADER = ("x1", "x2", "x3", "g_clean", "g_noisy")
SCAN_HEADER = ("h", "chi", "converged", "iterations")
DENSITY_HEADER = ("x1", "x2", "phi", "mass")
SOURCES_HEADER = ("round", "mass", "x1", "x2", "depth", "residual_after")


@dataclass(frozen=True)
class GridSpec:
    extent: Rectangle
    n1: int
    n2: int
    elevation: float = 0.0


@dataclass(frozen=True)
class PeelSpec:
    max_rounds: int = 5
    stop_fraction: float = 0.05
    depth_step: float = 0.005


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a synth/scan/continue/select/peel run."""

    sources: tuple[PointSource, ...]
    observation: GridSpec
    continuation: GridSpec
    depths: tuple[float, ...]
    depth_range: tuple[float, float, float] | None = None
    noise: NoiseSpec = NoiseSpec()
    gravitational_constant: float = DEFAULT_G
    output_directory: str = "output"
    solver: NnlsOptions = NnlsOptions(warm_start=True)
    peel: PeelSpec = PeelSpec()

    def to_dict(self) -> dict:
        obs, cont = self.observation, self.continuation
        d = {
            "sources": [
                {"mass": s.mass, "position": list(s.position)} for s in self.sources
            ],
            "observation": {
                "extent": list(obs.extent.bounds),
                "N1": obs.n1,
                "N2": obs.n2,
                "elevation": obs.elevation,
            },
            "continuation": {
                "extent": list(cont.extent.bounds),
                "M1": cont.n1,
                "M2": cont.n2,
            },
            "depths": (
                dict(zip(("start", "stop", "step"), self.depth_range))
                if self.depth_range is not None
                else list(self.depths)
            ),
            "noise": {"delta": self.noise.delta, "seed": int(self.noise.seed)},
            "gravitational_constant": self.gravitational_constant,
            "output_directory": self.output_directory,
            "solver": asdict(self.solver),
            "peel": asdict(self.peel),
        }
        return d


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _get(d, key, text, required=True, default=None, where=""):
    if key not in d:
        if required:
            raise ConfigError("missing required field", field=where + key, line=_line_of(text, key))
        return default
    return d[key]


def _rect(value, name, text):
    try:
        return Rectangle.from_bounds(value)
    except (TypeError, ValueError, GravcontError) as exc:
        raise ConfigError(f"invalid extent ({exc})", field=name, line=_line_of(text, name.split(".")[-1])) from None


def _positive_int(value, name, text):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"expected a positive integer, got {value!r}", field=name,
                          line=_line_of(text, name.split(".")[-1]))
    return value


def config_from_dict(d: dict, text: str | None = None) -> ExperimentConfig:
    """Validate a parsed JSON document; ``text`` is used for line numbers."""
    from .continuation import depth_grid

    if not isinstance(d, dict):
        raise ConfigError("top level must be a JSON object")
    raw_sources = _get(d, "sources", text)
    if not isinstance(raw_sources, list):
        raise ConfigError("expected a list", field="sources", line=_line_of(text, "sources"))
    sources = []
    for k, s in enumerate(raw_sources):
        try:
            sources.append(PointSource(float(s["mass"]), tuple(s["position"])))
        except (KeyError, TypeError, ValueError, GravcontError) as exc:
            raise ConfigError(f"invalid source ({exc})", field=f"sources[{k}]",
                              line=_line_of(text, "sources")) from None

    o = _get(d, "observation", text)
    observation = GridSpec(
        _rect(_get(o, "extent", text, where="observation."), "observation.extent", text),
        _positive_int(_get(o, "N1", text, where="observation."), "observation.N1", text),
        _positive_int(_get(o, "N2", text, where="observation."), "observation.N2", text),
        float(o.get("elevation", 0.0)),
    )
    c = _get(d, "continuation", text)
    continuation = GridSpec(
        _rect(_get(c, "extent", text, where="continuation."), "continuation.extent", text),
        _positive_int(_get(c, "M1", text, where="continuation."), "continuation.M1", text),
        _positive_int(_get(c, "M2", text, where="continuation."), "continuation.M2", text),
    )

    raw_depths = _get(d, "depths", text, required=False, default={"start": 0.05, "stop": 0.8, "step": 0.005})
    depth_range = None
    try:
        if isinstance(raw_depths, dict):
            depth_range = (float(raw_depths["start"]), float(raw_depths["stop"]), float(raw_depths["step"]))
            depths = tuple(depth_grid(*depth_range).tolist())
        else:
            depths = tuple(float(h) for h in raw_depths)
    except (KeyError, TypeError, ValueError, GravcontError) as exc:
        raise ConfigError(f"invalid depths ({exc})", field="depths", line=_line_of(text, "depths")) from None
    if not depths:
        raise ConfigError("depth list is empty", field="depths", line=_line_of(text, "depths"))
    if any(h <= 0 for h in depths):
        raise ConfigError("depths must be positive", field="depths", line=_line_of(text, "depths"))

    n = d.get("noise", {})
    try:
        noise = NoiseSpec(float(n.get("delta", 0.0)), int(n.get("seed", 0)))
    except (TypeError, ValueError, GravcontError) as exc:
        raise ConfigError(f"invalid noise ({exc})", field="noise", line=_line_of(text, "noise")) from None

    s = d.get("solver", {})
    try:
        solver = NnlsOptions(
            kkt_tolerance=s.get("kkt_tolerance"),
            max_outer_iterations=s.get("max_outer_iterations"),
            ls_solver=s.get("ls_solver", "qr"),
            warm_start=bool(s.get("warm_start", True)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver options ({exc})", field="solver", line=_line_of(text, "solver")) from None

    p = d.get("peel", {})
    try:
        peel = PeelSpec(int(p.get("max_rounds", 5)), float(p.get("stop_fraction", 0.05)),
                        float(p.get("depth_step", 0.005)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid peel options ({exc})", field="peel", line=_line_of(text, "peel")) from None
    if peel.max_rounds < 1 or not 0 < peel.stop_fraction < 1 or not peel.depth_step > 0:
        raise ConfigError("peel needs max_rounds >= 1, 0 < stop_fraction < 1, depth_step > 0",
                          field="peel", line=_line_of(text, "peel"))

    G = d.get("gravitational_constant", DEFAULT_G)
    if not isinstance(G, (int, float)) or not G > 0:
        raise ConfigError(f"expected a positive number, got {G!r}", field="gravitational_constant",
                          line=_line_of(text, "gravitational_constant"))

    return ExperimentConfig(
        sources=tuple(sources),
        observation=observation,
        continuation=continuation,
        depths=depths,
        depth_range=depth_range,
        noise=noise,
        gravitational_constant=float(G),
        output_directory=str(d.get("output_directory", "output")),
        solver=solver,
        peel=peel,
    )


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    return config_from_dict(d, text)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Apply command-line overrides; ``None`` values are ignored."""
    from .continuation import depth_grid

    changes = {}
    if kw.get("delta") is not None or kw.get("seed") is not None:
        changes["noise"] = NoiseSpec(
            cfg.noise.delta if kw.get("delta") is None else kw["delta"],
            cfg.noise.seed if kw.get("seed") is None else kw["seed"],
        )
    if kw.get("output_directory") is not None:
        changes["output_directory"] = str(kw["output_directory"])
    rng = [kw.get("depth_start"), kw.get("depth_stop"), kw.get("depth_step")]
    if any(v is not None for v in rng):
        base = cfg.depth_range or (min(cfg.depths), max(cfg.depths), 0.005)
        new = tuple(b if v is None else float(v) for b, v in zip(base, rng))
        changes["depth_range"] = new
        changes["depths"] = tuple(depth_grid(*new).tolist())
    if kw.get("ls_solver") is not None:
        changes["solver"] = replace(cfg.solver, ls_solver=kw["ls_solver"])
    peel = {k: kw[k] for k in ("max_rounds", "stop_fraction") if kw.get(k) is not None}
    if peel:
        changes["peel"] = replace(cfg.peel, **peel)
    return replace(cfg, **changes)


def fmt(x) -> str:
    """Shortest decimal that round-trips to the same double."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path, expected_header=None) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FileFormatError(f"{path}: empty file")
    header = rows[0]
    if expected_header is not None and tuple(header) not in expected_header:
        raise FileFormatError(f"{path}: unexpected header {','.join(header)}")
    data = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:]):
        if len(r) != len(header):
            raise FileFormatError(f"{path}:{i + 2}: expected {len(header)} fields, got {len(r)}")
        try:
            data[i] = [float(v) for v in r]
        except ValueError:
            raise FileFormatError(f"{path}:{i + 2}: non-numeric field") from None
    return header, data


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_meta(path, config: ExperimentConfig | None, **extra) -> Path:
    """Write ``<stem>.meta.json`` next to ``path``."""
    record = {"artifact": "gravcont", "version": __version__}
    if config is not None:
        record["config"] = config.to_dict()
        record["seed"] = int(config.noise.seed)
    record.update(extra)
    mp = meta_path(path)
    mp.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return mp


def write_observations(path, points, g_clean, g_noisy=None) -> Path:
    pts = np.asarray(points, dtype=float)
    if g_noisy is None:
        header = OBSERVATION_HEADER[:4]
        rows = (tuple(p) + (g,) for p, g in zip(pts, g_clean))
    else:
        header = OBSERVATION_HEADER
        rows = (tuple(p) + (g, gn) for p, g, gn in zip(pts, g_clean, g_noisy))
    return write_csv(path, header, rows)


def read_observations(path, prefer_noisy=True) -> tuple[ObservationSet, np.ndarray, np.ndarray | None]:
    """Return ``(obs, g_clean, g_noisy)``; ``obs.values`` is the noisy column when present."""
    header, data = read_csv(path, (OBSERVATION_HEADER, OBSERVATION_HEADER[:4]))
    clean = data[:, 3]
    noisy = data[:, 4] if len(header) == 5 else None
    values = noisy if (prefer_noisy and noisy is not None) else clean
    return ObservationSet(data[:, :3], values), clean, noisy


def write_scan(path, scan) -> Path:
    rows = zip(scan.depths, scan.residuals, scan.converged_flags, scan.iterations)
    return write_csv(path, SCAN_HEADER, rows)


def read_scan(path):
    _, data = read_csv(path, (SCAN_HEADER,))
    return data[:, 0], data[:, 1], data[:, 2].astype(bool), data[:, 3].astype(int)


def write_density(path, density) -> Path:
    nodes = density.grid.nodes
    rows = zip(nodes[:, 0], nodes[:, 1], density.phi, density.masses)
    return write_csv(path, DENSITY_HEADER, rows)


def write_sources(path, sources) -> Path:
    rows = (
        (s.provenance, s.mass, s.position[0], s.position[1], -s.position[2], s.residual_after)
        for s in sources
    )
    return write_csv(path, SOURCES_HEADER, rows)
