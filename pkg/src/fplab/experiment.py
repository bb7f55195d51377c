"""Experiment configuration, transfer runs, sweeps and batch metric reports.

Everything here is a thin composition of library calls; the CLI only parses
arguments and maps exceptions to exit codes.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .conditioning import ConditionConfig, encode_appearance, encode_structure
from .diffusion import (
    ConditionImages,
    GaussianMixtureModel,
    LinearDenoiser,
    OracleDenoiser,
    SamplerConfig,
    Window,
    fit_linear_denoiser,
    make_linear_schedule,
    sample_loop,
    validate_windows,
)
from .filters import FilterChain, apply_chain, gaussian_blur
from .imagecore import Image, decode_ppm, encode_ppm, load_ppm, save_ppm, to_rgb
from .metrics import (
    DegenerateHistogramError,
    EmptyMaskError,
    FeatureStats,
    canny_chamfer,
    chc,
    feature_stats,
    foreground_mask,
    frechet_distance,
    glcm_contrast,
    glcm_distance,
    iou,
    otsu_mask,
    psnr,
    spearman_rho,
)
from .toydata import SHAPES, DecodeMap, ShapeSpec, gen_shape_image, random_color_specs

log = logging.getLogger(__name__)

METRIC_NAMES = ("sp", "cd", "ffd", "glcm", "psnr", "chc")
SWEEP_PARAMS = ("appearance_blur_radius", "filter_window_end", "branch_start")
SWEEP_CHAIN_ID = "__sweep_appearance"


class ConfigError(ValueError):
    """Invalid experiment configuration (exit status 2)."""


class MissingFilesError(FileNotFoundError):
    """One or more referenced files do not exist (exit status 1)."""

    def __init__(self, paths):
        self.paths = [str(p) for p in paths]
        super().__init__("missing files: " + ", ".join(self.paths))


# --- schema -----------------------------------------------------------------

_COLOR = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 3, "maxItems": 3}
_STAGE = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"type": "string"}, "params": {"type": "object"}},
    "additionalProperties": False,
}
_CHAIN_REF = {"type": ["string", "null"]}
_TEXTURE = {
    "type": "object",
    "properties": {
        "fill": {"enum": ["solid", "stripes", "dots"]},
        "fg": _COLOR,
        "bg": _COLOR,
        "period": {"type": "integer", "minimum": 2},
        "angle": {"type": "number"},
        "dot_radius": {"type": "number", "exclusiveMinimum": 0},
        "spacing": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["structure_image", "appearance_image", "denoiser"],
    "properties": {
        "structure_image": {"type": "string"},
        "appearance_image": {"type": "string"},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
        "schedule": {
            "type": "object",
            "properties": {
                "T": {"type": "integer", "minimum": 2},
                "beta1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "betaT": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        "sampler": {
            "type": "object",
            "properties": {
                "alpha": {"type": "number"},
                "beta": {"type": "number"},
                "lambda": {"type": "number"},
                "allow_unnormalized": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "conditioning": {
            "type": "object",
            "properties": {
                "thumbnail": {"type": "integer", "minimum": 1},
                "hist_bins": {"type": "integer", "minimum": 2},
                "text_dim": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "chains": {"type": "object", "additionalProperties": {"type": "array", "items": _STAGE}},
        "windows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["start", "end"],
                "properties": {
                    "start": {"type": "integer", "minimum": 1},
                    "end": {"type": "integer", "minimum": 1},
                    "structure": {"type": "boolean"},
                    "appearance": {"type": "boolean"},
                    "structure_chain": _CHAIN_REF,
                    "appearance_chain": _CHAIN_REF,
                },
                "additionalProperties": False,
            },
        },
        "denoiser": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["oracle", "linear"]},
                "model": {"type": "string"},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "component_std": {"type": "number", "minimum": 0},
                "gallery": {
                    "type": "object",
                    "properties": {
                        "shapes": {"type": "array", "items": {"enum": list(SHAPES)}, "minItems": 1},
                        "size": {"type": "integer", "minimum": 4},
                        "structure_fg": _COLOR,
                        "structure_bg": _COLOR,
                        "structure_anchor_chain": _CHAIN_REF,
                        "appearance_anchor_chain": _CHAIN_REF,
                        "appearance_shape": {"enum": list(SHAPES)},
                        "textures": {"type": "array", "items": _TEXTURE, "minItems": 1},
                        "blur_radii": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "metrics": {"type": "array", "items": {"enum": list(METRIC_NAMES)}},
        "snapshot_every": {"type": "integer", "minimum": 0},
        "batch": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _locate_line(text: str, parts) -> int | None:
    """Best-effort line number of the deepest named key along ``parts``."""
    keys = [p for p in parts if isinstance(p, str)]
    pos = 0
    for key in keys:
        found = text.find(f'"{key}"', pos)
        if found < 0:
            break
        pos = found
    else:
        if keys:
            return text.count("\n", 0, pos) + 1
    return None


def read_json(text: str, source: str = "<json>"):
    """Parse JSON, reporting syntax errors as ``source:line:col: message``."""
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    raw = read_json(text, source)
    if isinstance(raw, dict) and "config" in raw and "outputs" in raw:
        raw = raw["config"]  # run manifest
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            parts = list(err.absolute_path)
            line = _locate_line(text, parts)
            where = f"{source}:{line}" if line else source
            lines.append(f"{where}: {_json_path(parts)}: {err.message}")
        raise ConfigError("\n".join(lines))
    return raw


# --- resolved configuration -------------------------------------------------


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    output_dir: Path | None = None

    @classmethod
    def load(cls, path, output_dir=None, seed: int | None = None) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        raw = parse_config_text(text, str(path))
        cfg = cls(raw, path.resolve().parent)
        if seed is not None:
            cfg.raw["seed"] = int(seed)
        out = output_dir if output_dir is not None else raw.get("output_dir")
        cfg.output_dir = cfg.resolve(out) if out else None
        cfg.validate()
        cfg.check_files()
        return cfg

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".", output_dir=None) -> "ExperimentConfig":
        raw = parse_config_text(json.dumps(raw))
        cfg = cls(copy.deepcopy(raw), Path(base_dir).resolve(), Path(output_dir) if output_dir else None)
        cfg.validate()
        return cfg

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    # -- accessors
    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def T(self) -> int:
        return int(self.raw.get("schedule", {}).get("T", 200))

    def schedule(self):
        s = self.raw.get("schedule", {})
        try:
            return make_linear_schedule(self.T, s.get("beta1", 1e-4), s.get("betaT", 0.05))
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None

    def cond_config(self) -> ConditionConfig:
        return ConditionConfig(**self.raw.get("conditioning", {}))

    def chains(self) -> dict[str, FilterChain]:
        out = {}
        for name, stages in self.raw.get("chains", {}).items():
            try:
                out[name] = FilterChain.from_list(stages)
            except ValueError as exc:
                raise ConfigError(f"chains.{name}: {exc}") from None
        return out

    def windows(self) -> list[Window]:
        items = self.raw.get("windows") or [{"start": 1, "end": self.T}]
        return [Window(**w) for w in items]

    def sampler(self) -> SamplerConfig:
        s = self.raw.get("sampler", {})
        try:
            return SamplerConfig(
                alpha_w=float(s.get("alpha", 0.5)),
                beta_w=float(s.get("beta", 0.5)),
                lambda_w=float(s.get("lambda", 1.0)),
                windows=tuple(self.windows()),
                seed=self.seed,
                allow_unnormalized=bool(s.get("allow_unnormalized", False)),
            )
        except ValueError as exc:
            raise ConfigError(f"sampler: {exc}") from None

    def validate(self) -> None:
        chains = self.chains()
        try:
            validate_windows(self.windows(), self.T)
        except ValueError as exc:
            raise ConfigError(f"windows: {exc}") from None
        for i, w in enumerate(self.windows()):
            for ref in (w.structure_chain, w.appearance_chain):
                if ref is not None and ref not in chains:
                    raise ConfigError(f"windows[{i}]: unknown chain id {ref!r}")
        gallery = self.raw["denoiser"].get("gallery", {})
        for key in ("structure_anchor_chain", "appearance_anchor_chain"):
            ref = gallery.get(key)
            if ref is not None and ref not in chains:
                raise ConfigError(f"denoiser.gallery.{key}: unknown chain id {ref!r}")
        den = self.raw["denoiser"]
        if den["kind"] == "linear" and "model" not in den:
            raise ConfigError("denoiser: linear denoiser needs a 'model' path")
        s = self.raw.get("sampler", {})
        total = s.get("alpha", 0.5) + s.get("beta", 0.5) * s.get("lambda", 1.0)
        if s.get("allow_unnormalized") and abs(total - 1.0) > 1e-12:
            log.warning("branch weights are not normalized: alpha + beta*lambda = %g", total)
        self.sampler()
        self.schedule()

    def check_files(self) -> None:
        missing = [p for p in self.input_paths() if not p.is_file()]
        if missing:
            raise MissingFilesError(missing)

    def input_paths(self) -> list[Path]:
        paths = [self.resolve(self.raw["structure_image"]), self.resolve(self.raw["appearance_image"])]
        if self.raw["denoiser"]["kind"] == "linear":
            paths.append(self.resolve(self.raw["denoiser"]["model"]))
        return paths

    def resolved_raw(self) -> dict:
        """Copy with absolute input paths and no output directory (manifest form)."""
        raw = copy.deepcopy(self.raw)
        raw.pop("output_dir", None)
        raw["structure_image"] = str(self.resolve(raw["structure_image"]))
        raw["appearance_image"] = str(self.resolve(raw["appearance_image"]))
        if raw["denoiser"]["kind"] == "linear":
            raw["denoiser"]["model"] = str(self.resolve(raw["denoiser"]["model"]))
        raw["seed"] = self.seed
        return raw

    def with_raw(self, raw: dict) -> "ExperimentConfig":
        cfg = ExperimentConfig(copy.deepcopy(raw), self.base_dir, self.output_dir)
        cfg.validate()
        return cfg


# --- denoiser construction --------------------------------------------------

DEFAULT_TEXTURE = {"fill": "stripes", "period": 4, "fg": [0.9, 0.5, 0.2], "bg": [0.1, 0.1, 0.2]}


def _texture_spec(tex: dict, shape: str, size: int) -> tuple[ShapeSpec, int]:
    tex = dict(tex)
    seed = int(tex.pop("seed", 0))
    if "fg" in tex:
        tex["fg"] = tuple(tex["fg"])
    if "bg" in tex:
        tex["bg"] = tuple(tex["bg"])
    return ShapeSpec(shape=shape, size=size, **tex), seed


def build_paired_gallery(gallery: dict, chains: dict[str, FilterChain], cond: ConditionConfig):
    """Components = shape x texture x blur, each with paired condition anchors.

    Image k is ``blur_r(shape_i filled with texture_j)``. Its structure anchor
    encodes the plain shape_i drawn in the neutral structure colors; its
    appearance anchor encodes ``blur_r(texture_j on the appearance shape)``.
    """
    shapes = gallery.get("shapes", list(SHAPES))
    size = int(gallery.get("size", 32))
    textures = gallery.get("textures", [DEFAULT_TEXTURE])
    radii = gallery.get("blur_radii", [0, 1, 2, 3, 4, 5, 6, 8])
    s_fg = tuple(gallery.get("structure_fg", [0.8, 0.8, 0.8]))
    s_bg = tuple(gallery.get("structure_bg", [0.1, 0.1, 0.1]))
    s_chain = chains.get(gallery.get("structure_anchor_chain"), FilterChain())
    a_chain = chains.get(gallery.get("appearance_anchor_chain"), FilterChain())
    app_shape = gallery.get("appearance_shape", "square")
    images, s_anchors, a_anchors, labels = [], [], [], []
    struct_cache = {}
    for shape in shapes:
        if shape not in struct_cache:
            plain = gen_shape_image(ShapeSpec(shape=shape, fill="solid", fg=s_fg, bg=s_bg, size=size), 0)
            struct_cache[shape] = encode_structure(plain, s_chain, cond)
        for j, tex in enumerate(textures):
            spec, seed = _texture_spec(tex, shape, size)
            swatch_spec, _ = _texture_spec(tex, app_shape, size)
            base = gen_shape_image(spec, seed)
            swatch = gen_shape_image(swatch_spec, seed)
            for r in radii:
                images.append(gaussian_blur(base, r))
                s_anchors.append(struct_cache[shape])
                a_anchors.append(encode_appearance(gaussian_blur(swatch, r), a_chain, cond))
                labels.append({"shape": shape, "texture": j, "blur": r})
    return images, np.stack(s_anchors), np.stack(a_anchors), labels


def build_denoiser(cfg: ExperimentConfig, sched, decode: DecodeMap):
    den = cfg.raw["denoiser"]
    if den["kind"] == "linear":
        model = LinearDenoiser.load(cfg.resolve(den["model"]))
        if model.dim != decode.dim:
            raise ConfigError(f"denoiser.model: model dimension {model.dim} does not match output layout {decode.dim}")
        return model
    images, s_anchors, a_anchors, _ = build_paired_gallery(den.get("gallery", {}), cfg.chains(), cfg.cond_config())
    if images[0].shape != (decode.height, decode.width, decode.channels):
        raise ConfigError(
            f"denoiser.gallery.size: gallery images {images[0].shape} do not match output layout "
            f"{(decode.height, decode.width, decode.channels)}"
        )
    K = len(images)
    gm = GaussianMixtureModel(
        np.full(K, 1.0 / K),
        np.stack([decode.encode(im) for im in images]),
        float(den.get("component_std", 0.0)),
        struct_anchors=s_anchors,
        app_anchors=a_anchors,
        tau=float(den.get("tau", 0.05)),
    )
    return OracleDenoiser(gm, sched)


# --- pair metrics -----------------------------------------------------------


def _safe(fn, *args):
    try:
        return fn(*args)
    except (DegenerateHistogramError, EmptyMaskError):
        return math.nan


def structure_preservation(structure: Image, generated: Image) -> float:
    return iou(otsu_mask(structure), otsu_mask(generated))


def pair_ffd(a: Image, b: Image) -> float:
    """Fréchet feature distance of two single images (zero covariances)."""
    fa = encode_appearance(a)
    fb = encode_appearance(b)
    zero = np.zeros((fa.size, fa.size))
    return frechet_distance(FeatureStats(fa, zero, 1), FeatureStats(fb, zero, 1))


def pair_metrics(structure: Image, appearance: Image, generated: Image, which=METRIC_NAMES) -> dict[str, float]:
    """SP/CD/FFD against the structure image, GLCM/PSNR/CHC against the appearance image."""
    out = {}
    if "sp" in which:
        out["sp"] = _safe(structure_preservation, structure, generated)
    if "cd" in which:
        out["cd"] = canny_chamfer(structure, generated)
    if "ffd" in which:
        out["ffd"] = pair_ffd(structure, generated)
    if "glcm" in which:
        out["glcm"] = glcm_distance(appearance, generated)
    if "psnr" in which:
        a, g = appearance, generated
        if a.channels != g.channels:
            a, g = to_rgb(a), to_rgb(g)
        out["psnr"] = psnr(a, g) if a.shape == g.shape else math.nan
    if "chc" in which:
        out["chc"] = _safe(lambda: chc(appearance, generated, foreground_mask(appearance), foreground_mask(generated)))
    return out


def fmt_value(v) -> str:
    return repr(float(v))


def json_value(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _map(fn, items, jobs: int):
    """Ordered map, optionally over worker processes; order follows ``items``."""
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- transfer ---------------------------------------------------------------


@dataclass
class TransferResult:
    images: list[Image]
    report: dict
    files: dict[str, bytes] = field(default_factory=dict)


def run_transfer(cfg: ExperimentConfig) -> TransferResult:
    """Sample ``batch`` outputs and assemble all artifacts in memory."""
    struct_img = load_ppm(cfg.resolve(cfg.raw["structure_image"]))
    app_img = load_ppm(cfg.resolve(cfg.raw["appearance_image"]))
    sched = cfg.schedule()
    decode = DecodeMap(struct_img.height, struct_img.width, 3)
    model = build_denoiser(cfg, sched, decode)
    sampler = cfg.sampler()
    batch = int(cfg.raw.get("batch", 1))
    every = int(cfg.raw.get("snapshot_every", 0))
    result = sample_loop(
        ConditionImages(struct_img, app_img),
        model,
        sampler,
        sched,
        chains=cfg.chains(),
        n_samples=None if batch == 1 else batch,
        dim=decode.dim,
        snapshot_every=every,
        cond_config=cfg.cond_config(),
    )
    finals = [result.final] if batch == 1 else list(result.final)
    files: dict[str, bytes] = {}
    images = []
    for i, v in enumerate(finals):
        data = encode_ppm(decode.decode(v))
        files["final.ppm" if batch == 1 else f"final_{i:03d}.ppm"] = data
        images.append(decode_ppm(data))  # score exactly what is written
    for step, x in result.trajectory:
        rows = [x] if batch == 1 else list(x)
        for i, row in enumerate(rows):
            name = f"snapshots/step_{step:04d}.ppm" if batch == 1 else f"snapshots/s{i:03d}_step_{step:04d}.ppm"
            files[name] = encode_ppm(decode.decode(row))
    which = cfg.raw.get("metrics", [m for m in METRIC_NAMES if m != "ffd"])
    per_sample = [{k: json_value(v) for k, v in pair_metrics(struct_img, app_img, img, which).items()} for img in images]
    report: dict[str, Any] = {"samples": per_sample, "glcm_contrast": [glcm_contrast(img) for img in images]}
    if batch > 1:
        ref = feature_stats([struct_img, struct_img])
        report["set_ffd"] = json_value(frechet_distance(feature_stats(images), ref))
    files["report.json"] = dumps(report).encode()
    manifest = {
        "config": cfg.resolved_raw(),
        "inputs": {str(p): sha256_file(p) for p in cfg.input_paths()},
        "outputs": {name: sha256_bytes(data) for name, data in sorted(files.items())},
    }
    files["manifest.json"] = dumps(manifest).encode()
    return TransferResult(images, report, files)


def write_files(out_dir: Path, files: dict[str, bytes]) -> None:
    for name, data in files.items():
        path = out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)


# --- ablation ---------------------------------------------------------------


def sweep_config(cfg: ExperimentConfig, param: str, value, seed: int) -> ExperimentConfig:
    raw = copy.deepcopy(cfg.raw)
    raw["seed"] = int(seed)
    T = cfg.T
    windows = raw.get("windows") or [{"start": 1, "end": T}]
    base = dict(windows[0])
    if param == "appearance_blur_radius":
        r = int(value)
        if r < 0 or r != value:
            raise ConfigError(f"appearance_blur_radius must be a non-negative integer, got {value}")
        raw.setdefault("chains", {})[SWEEP_CHAIN_ID] = (
            [{"kind": "gaussian_blur", "params": {"radius": r}}] if r > 0 else []
        )
        for w in windows:
            w["appearance_chain"] = SWEEP_CHAIN_ID
        raw["windows"] = windows
    elif param == "filter_window_end":
        end = int(value)
        if not 0 <= end <= T or end != value:
            raise ConfigError(f"filter_window_end must be an integer in [0, {T}], got {value}")
        filtered = dict(base, start=1, end=end)
        plain = dict(base, start=end + 1, end=T, appearance_chain=None)
        raw["windows"] = [w for w in (filtered, plain) if w["start"] <= w["end"]]
    elif param == "branch_start":
        start = int(value)
        if not 1 <= start <= T or start != value:
            raise ConfigError(f"branch_start must be an integer in [1, {T}], got {value}")
        early = dict(base, start=1, end=start - 1, appearance=False, structure=True)
        late = dict(base, start=start, end=T, appearance=True, structure=True)
        raw["windows"] = [w for w in (early, late) if w["start"] <= w["end"]]
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}; expected one of {', '.join(SWEEP_PARAMS)}")
    return cfg.with_raw(raw)


ABLATION_COLUMNS = ("param", "value", "seed", "glcm_contrast") + tuple(m for m in METRIC_NAMES if m != "ffd")


@dataclass
class AblationResult:
    rows: list[dict]
    trend: dict
    runs: list[tuple[str, TransferResult]]


def run_ablation(cfg: ExperimentConfig, param: str, values, seeds: int = 1, jobs: int = 1) -> AblationResult:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; expected one of {', '.join(SWEEP_PARAMS)}")
    jobs_list = []
    for v in values:
        for i in range(seeds):
            seed = cfg.seed + i
            jobs_list.append((v, seed, sweep_config(cfg, param, v, seed)))

    results = _map(run_transfer, [c for _, _, c in jobs_list], jobs)

    rows, runs = [], []
    for (v, seed, _), res in zip(jobs_list, results):
        sample = res.report["samples"][0]
        row = {"param": param, "value": v, "seed": seed, "glcm_contrast": res.report["glcm_contrast"][0]}
        for m in ABLATION_COLUMNS[4:]:
            row[m] = sample.get(m)
        rows.append(row)
        runs.append((f"value_{v}_seed_{seed}", res))
    xs = [float(r["value"]) for r in rows]
    ys = [float(r["glcm_contrast"]) for r in rows]
    means = [float(np.mean([y for x, y in zip(xs, ys) if x == float(v)])) for v in values]
    trend = {
        "param": param,
        "values": list(values),
        "seeds": seeds,
        "mean_glcm_contrast": means,
        "spearman_rho": json_value(spearman_rho(xs, ys)) if len(set(xs)) > 1 else None,
        "monotone_nonincreasing": all(b <= a for a, b in zip(means, means[1:])),
    }
    return AblationResult(rows, trend, runs)


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_COLUMNS)
    for r in rows:
        cells = []
        for c in ABLATION_COLUMNS:
            v = r[c]
            if c == "param":
                cells.append(v)
            elif c in ("seed",):
                cells.append(str(v))
            elif c == "value":
                cells.append(str(v))
            else:
                cells.append(fmt_value(math.nan if v is None else (math.inf if v == "inf" else v)))
        writer.writerow(cells)
    return buf.getvalue()


# --- batch metrics ----------------------------------------------------------

PAIR_COLUMNS = ("index", "generated") + METRIC_NAMES


def load_pairs_manifest(path) -> tuple[list[dict], list[str]]:
    """Return (rows with resolved paths, missing file list)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    items = raw.get("pairs") if isinstance(raw, dict) else raw
    if not isinstance(items, list):
        raise ConfigError(f"{path}: expected a list of pairs or an object with 'pairs'")
    base = path.resolve().parent
    rows, missing = [], []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "generated" not in item:
            raise ConfigError(f"{path}: pairs[{i}]: need 'generated' plus 'reference' or 'structure'/'appearance'")
        if "reference" in item:
            struct = app = item["reference"]
        elif "structure" in item and "appearance" in item:
            struct, app = item["structure"], item["appearance"]
        else:
            raise ConfigError(f"{path}: pairs[{i}]: need 'reference' or both 'structure' and 'appearance'")
        row = {}
        for key, rel in (("structure", struct), ("appearance", app), ("generated", item["generated"])):
            p = Path(rel)
            p = p if p.is_absolute() else base / p
            row[key] = p
            if not p.is_file() and str(p) not in missing:
                missing.append(str(p))
        rows.append(row)
    return rows, missing


def _metrics_row(row):
    s = load_ppm(row["structure"])
    a = s if row["appearance"] == row["structure"] else load_ppm(row["appearance"])
    g = load_ppm(row["generated"])
    return pair_metrics(s, a, g), (s, g)


def run_metrics(rows, jobs: int = 1):
    results = _map(_metrics_row, rows, jobs)
    metrics = [m for m, _ in results]
    summary: dict[str, Any] = {"count": len(rows)}
    for name in METRIC_NAMES:
        vals = np.array([m[name] for m in metrics], dtype=np.float64)
        finite = vals[np.isfinite(vals)]
        summary[name] = {
            "mean": json_value(finite.mean()) if finite.size else None,
            "std": json_value(finite.std()) if finite.size else None,
            "n_finite": int(finite.size),
        }
    if len(results) >= 2:
        structs = [s for _, (s, _) in results]
        gens = [g for _, (_, g) in results]
        summary["set_ffd"] = json_value(frechet_distance(feature_stats(gens), feature_stats(structs)))
    return metrics, summary


def metrics_csv(rows, metrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PAIR_COLUMNS)
    for i, (row, m) in enumerate(zip(rows, metrics)):
        writer.writerow([str(i), str(row["generated"])] + [fmt_value(m[name]) for name in METRIC_NAMES])
    return buf.getvalue()


# --- dataset generation and fitting -----------------------------------------


def gen_items(gen: dict) -> list[tuple[ShapeSpec, int, int]]:
    """(spec, seed, blur radius) triples from a gen config."""
    items = []
    if "random" in gen:
        r = dict(gen["random"])
        n = int(r.pop("n"))
        seed = int(r.pop("seed", 0))
        for i, spec in enumerate(random_color_specs(n, seed, **r)):
            items.append((spec, seed + i, 0))
    for it in gen.get("items", []):
        items.append((ShapeSpec.from_dict(it["spec"]), int(it.get("seed", 0)), int(it.get("blur", 0))))
    if not items:
        raise ConfigError("gen config produced no items; use 'random' or 'items'")
    return items


def run_gen(gen: dict, out_dir: Path) -> dict:
    out_dir = Path(out_dir)
    entries = []
    files = {}
    for i, (spec, seed, blur) in enumerate(gen_items(gen)):
        img = gaussian_blur(gen_shape_image(spec, seed), blur)
        name = f"images/item_{i:04d}.ppm"
        files[name] = encode_ppm(img)
        entries.append({"spec": spec.to_dict(), "seed": seed, "blur": blur, "file": name})
    manifest = {"items": entries}
    files["manifest.json"] = dumps(manifest).encode()
    write_files(out_dir, files)
    return manifest


def load_dataset_images(manifest_path) -> list[Image]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.resolve().parent
    return [load_ppm(base / e["file"]) for e in manifest["items"]]


def dataset_items(images, conditions: str = "none", cond: ConditionConfig | None = None):
    from .conditioning import ConditionSet, build_condition_set

    cond = cond or ConditionConfig()
    items = []
    for img in images:
        rgb = to_rgb(img)
        if conditions == "none":
            c = ConditionSet.empty()
        elif conditions == "self":
            c = build_condition_set(rgb, rgb, config=cond)
        else:
            raise ConfigError(f"unknown conditions mode {conditions!r}")
        items.append((DecodeMap.for_image(rgb).encode(rgb), c))
    return items


FIT_DEFAULTS = {
    "T": 200,
    "beta1": 1e-4,
    "betaT": 0.05,
    "buckets": 20,
    "lambda": 1e-6,
    "samples_per_item": 4,
    "seed": 0,
    "conditions": "none",
}


def run_fit(dataset_manifest, out_path, params: dict) -> tuple[LinearDenoiser, dict]:
    """Fit on a generated dataset, save the model and return it with a replay manifest."""
    p = {**FIT_DEFAULTS, **params}
    dataset_manifest = Path(dataset_manifest).resolve()
    images = load_dataset_images(dataset_manifest)
    sched = make_linear_schedule(int(p["T"]), float(p["beta1"]), float(p["betaT"]))
    items = dataset_items(images, p["conditions"])
    model = fit_linear_denoiser(items, sched, int(p["buckets"]), float(p["lambda"]), int(p["samples_per_item"]), int(p["seed"]))
    buf = io.BytesIO()
    model.save(buf)
    data = buf.getvalue()
    Path(out_path).write_bytes(data)
    manifest = {
        "fit": {**p, "dataset": str(dataset_manifest)},
        "inputs": {str(dataset_manifest): sha256_file(dataset_manifest)},
        "outputs": {Path(out_path).name: sha256_bytes(data)},
    }
    return model, manifest


def apply_chain_file(chain: FilterChain, src, dst) -> Image:
    out = apply_chain(chain, load_ppm(src))
    save_ppm(out, dst)
    return out
