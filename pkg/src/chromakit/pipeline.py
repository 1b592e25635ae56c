"""End-to-end dataset generation: mask-driven green-screening, keying, and
the n x m composition grid with labels and a manifest.

Each (foreground, background) grid cell owns an RNG stream keyed by
(seed, fg index, bg index), so output bytes are identical regardless of
worker count or scheduling. Cell failures are logged and recorded in the
manifest instead of aborting the run, unless strict mode is on.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .annotations import DatasetManifest, FailureRecord, ManifestEntry, write_label, write_manifest
from .chromakey import ChromaParams, apply_greenscreen, remove_green
from .composer import ComposeConfig, EffectToggles, cell_rng, compose_at, sample_transform
from .errors import ChromakitError, ConfigError, DataError
from .imagecore import RgbaImage, load_image, load_mask, save_image

logger = logging.getLogger(__name__)

ENV_PREFIX = "CHROMAKIT_"

MANIFEST_NAME = "manifest.jsonl"

_REQUIRED_KEYS = ("images", "masks", "backgrounds", "out", "class")

_CONFIG_KEYS = _REQUIRED_KEYS + (
    "seed",
    "dark_offset",
    "alpha_threshold",
    "norm_factor",
    "key_color",
    "scale",
    "rotate",
    "sigmoid",
    "blur",
    "gradient",
    "sigmoid_cutoff",
    "sigmoid_gain",
    "blur_sigma",
    "blur_fraction",
    "workers",
    "strict",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Fully resolved inputs for one dataset-generation run."""

    images_dir: Path
    masks_dir: Path
    backgrounds_dir: Path
    output_dir: Path
    class_name: str
    seed: int = 0
    compose: ComposeConfig = field(default_factory=ComposeConfig)
    chroma: ChromaParams = field(default_factory=ChromaParams)
    workers: int | None = None
    strict: bool = False


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected a number, got {raw!r}") from None


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected an integer, got {raw!r}") from None


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"config key {key!r}: expected on/off, got {raw!r}")


def parse_range(raw: str, key: str = "range") -> tuple[float, float]:
    """Parse a LO:HI pair."""
    parts = raw.split(":")
    if len(parts) != 2:
        raise ConfigError(f"config key {key!r}: expected LO:HI, got {raw!r}")
    lo, hi = (_parse_float(key, p) for p in parts)
    if lo > hi:
        raise ConfigError(f"config key {key!r}: range low {lo} exceeds high {hi}")
    return lo, hi


def parse_color(raw: str, key: str = "key_color") -> tuple[int, int, int]:
    """Parse an R,G,B triple of 8-bit values."""
    parts = raw.split(",")
    if len(parts) != 3:
        raise ConfigError(f"config key {key!r}: expected R,G,B, got {raw!r}")
    values = tuple(_parse_int(key, p) for p in parts)
    if any(not 0 <= v <= 255 for v in values):
        raise ConfigError(f"config key {key!r}: channel outside [0, 255] in {raw!r}")
    return values


def _read_config_file(path: Path) -> dict[str, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such config file: {path}") from None
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = raw.strip()
    return values


def parse_config(
    path: str | Path | None = None,
    overrides: dict[str, str] | None = None,
    env: dict[str, str] | None = None,
) -> PipelineConfig:
    """Resolve a pipeline configuration from file, environment, and flags.

    Precedence: built-in defaults, then the config file, then CHROMAKIT_*
    environment variables, then flag overrides. Input directories must
    exist.
    """
    values: dict[str, str] = {}
    if path is not None:
        values.update(_read_config_file(Path(path)))
    env = os.environ if env is None else env
    for key in _CONFIG_KEYS:
        env_value = env.get(ENV_PREFIX + key.upper())
        if env_value is not None:
            values[key] = env_value
    for key, raw in (overrides or {}).items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = raw
    missing = [key for key in _REQUIRED_KEYS if key not in values]
    if missing:
        raise ConfigError("missing required config key(s): " + ", ".join(missing))

    class_name = values["class"]
    if not class_name or any(c.isspace() for c in class_name):
        raise ConfigError(f"config key 'class': must be a whitespace-free token, got {class_name!r}")
    seed = _parse_int("seed", values.get("seed", "0"))
    if seed < 0:
        raise ConfigError("config key 'seed': must be non-negative")
    workers = _parse_int("workers", values["workers"]) if "workers" in values else None
    if workers is not None and workers < 1:
        raise ConfigError("config key 'workers': must be at least 1")

    try:
        chroma = ChromaParams(
            norm_factor=_parse_float("norm_factor", values.get("norm_factor", "255")),
            dark_offset=_parse_float("dark_offset", values.get("dark_offset", "0.2")),
            alpha_threshold=_parse_float("alpha_threshold", values.get("alpha_threshold", "50")),
            key_color=parse_color(values.get("key_color", "0,100,0")),
        )
        compose = ComposeConfig(
            rng_seed=seed,
            scale_range=parse_range(values.get("scale", "1:1"), "scale"),
            rotation_range=parse_range(values.get("rotate", "0:0"), "rotate"),
            effects=EffectToggles(
                sigmoid=_parse_bool("sigmoid", values.get("sigmoid", "off")),
                blur=_parse_bool("blur", values.get("blur", "off")),
                alpha_gradient=_parse_bool("gradient", values.get("gradient", "off")),
            ),
            sigmoid_cutoff=_parse_float("sigmoid_cutoff", values.get("sigmoid_cutoff", "0.5")),
            sigmoid_gain=_parse_float("sigmoid_gain", values.get("sigmoid_gain", "10")),
            blur_sigma=_parse_float("blur_sigma", values.get("blur_sigma", "3.0")),
            blur_fraction=_parse_float("blur_fraction", values.get("blur_fraction", "0.5")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    dirs = {key: Path(values[key]) for key in ("images", "masks", "backgrounds")}
    for key, directory in dirs.items():
        if not directory.is_dir():
            raise DataError(f"missing required directory for {key!r}: {directory}")
    return PipelineConfig(
        images_dir=dirs["images"],
        masks_dir=dirs["masks"],
        backgrounds_dir=dirs["backgrounds"],
        output_dir=Path(values["out"]),
        class_name=class_name,
        seed=seed,
        compose=compose,
        chroma=chroma,
        workers=workers,
        strict=_parse_bool("strict", values.get("strict", "off")),
    )


def _sorted_pngs(directory: Path) -> list[Path]:
    return sorted(directory.glob("*.png"))


def _compose_cell(
    fg_index: int,
    fg_stem: str,
    fg: RgbaImage,
    bg_stem: str,
    bg: RgbaImage,
    bg_index: int,
    out_dir: Path,
    cfg: ComposeConfig,
    class_name: str,
    seed: int,
    fg_source: str,
    bg_source: str,
) -> ManifestEntry:
    rng = cell_rng(seed, fg_index, bg_index)
    t = sample_transform(fg, bg, cfg, rng)
    composite, box = compose_at(fg, bg, t, cfg, class_name)
    name = f"{fg_stem}__{bg_stem}"
    save_image(composite, out_dir / f"{name}.png")
    write_label([box], out_dir / f"{name}.txt")
    return ManifestEntry(
        image_path=f"{name}.png",
        label_path=f"{name}.txt",
        fg_source=fg_source,
        bg_source=bg_source,
        seed=seed,
        rotation=t.rotation,
        scale=t.scale,
        translate=t.translate,
    )


def _run_grid(
    foregrounds: list[tuple[int, str, str, RgbaImage]],
    backgrounds: list[tuple[int, str, str, RgbaImage]],
    out_dir: Path,
    cfg: ComposeConfig,
    class_name: str,
    seed: int,
    workers: int | None,
    strict: bool,
) -> tuple[list[ManifestEntry], list[FailureRecord]]:
    """Compose every (fg, bg) cell with a worker pool; deterministic output."""
    workers = workers or os.cpu_count() or 1
    cells = [(fg, bg) for fg in foregrounds for bg in backgrounds]
    results: dict[tuple[int, int], ManifestEntry | FailureRecord] = {}

    def run_cell(fg, bg):
        i, fg_stem, fg_source, fg_img = fg
        j, bg_stem, bg_source, bg_img = bg
        try:
            return (i, j), _compose_cell(
                i, fg_stem, fg_img, bg_stem, bg_img, j, out_dir, cfg, class_name,
                seed, fg_source, bg_source,
            )
        except (ChromakitError, ValueError) as exc:
            if strict:
                raise
            logger.warning("cell %s x %s failed: %s", fg_stem, bg_stem, exc)
            return (i, j), FailureRecord(fg_source, bg_source, str(exc))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for key, outcome in pool.map(lambda c: run_cell(*c), cells):
            results[key] = outcome

    entries, failures = [], []
    for key in sorted(results):
        outcome = results[key]
        if isinstance(outcome, ManifestEntry):
            entries.append(outcome)
        else:
            failures.append(outcome)
    return entries, failures


def compose_directories(
    foregrounds_dir: str | Path,
    backgrounds_dir: str | Path,
    out_dir: str | Path,
    cfg: ComposeConfig,
    class_name: str = "object",
    workers: int | None = None,
    strict: bool = False,
) -> DatasetManifest:
    """Compose pre-keyed foreground PNGs over background PNGs.

    Writes one composite, one label, and one manifest entry per (fg, bg)
    pair into out_dir.
    """
    foregrounds_dir, backgrounds_dir = Path(foregrounds_dir), Path(backgrounds_dir)
    fg_paths = _sorted_pngs(foregrounds_dir)
    bg_paths = _sorted_pngs(backgrounds_dir)
    if not fg_paths:
        raise DataError(f"no PNG foregrounds in {foregrounds_dir}")
    if not bg_paths:
        raise DataError(f"no PNG backgrounds in {backgrounds_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    foregrounds = [(i, p.stem, str(p), load_image(p)) for i, p in enumerate(fg_paths)]
    backgrounds = [(j, p.stem, str(p), load_image(p)) for j, p in enumerate(bg_paths)]
    entries, failures = _run_grid(
        foregrounds, backgrounds, out_dir, cfg, class_name, cfg.rng_seed, workers, strict
    )
    manifest = DatasetManifest(entries, failures)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def run_pipeline(cfg: PipelineConfig) -> DatasetManifest:
    """Full run: green-screen each input via its mask, key the green out,
    compose against every background, and write labels plus the manifest.

    Produces n x m composites for n inputs and m backgrounds; failed cells
    are recorded in the manifest (strict mode aborts instead).
    """
    fg_paths = _sorted_pngs(cfg.images_dir)
    bg_paths = _sorted_pngs(cfg.backgrounds_dir)
    if not fg_paths:
        raise DataError(f"no PNG images in {cfg.images_dir}")
    if not bg_paths:
        raise DataError(f"no PNG backgrounds in {cfg.backgrounds_dir}")
    missing = [p.stem for p in fg_paths if not (cfg.masks_dir / f"{p.stem}.png").is_file()]
    if missing:
        raise DataError("missing mask for image(s): " + ", ".join(missing))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    backgrounds = [(j, p.stem, str(p), load_image(p)) for j, p in enumerate(bg_paths)]
    foregrounds = []
    key_failures: list[FailureRecord] = []
    for i, path in enumerate(fg_paths):
        try:
            photo = load_image(path)
            mask = load_mask(cfg.masks_dir / f"{path.stem}.png")
            keyed = remove_green(apply_greenscreen(photo, mask, cfg.chroma), cfg.chroma)
            foregrounds.append((i, path.stem, str(path), keyed))
        except (ChromakitError, ValueError) as exc:
            if cfg.strict:
                raise
            logger.warning("keying %s failed: %s", path.stem, exc)
            key_failures.extend(
                FailureRecord(str(path), bg_source, f"keying failed: {exc}")
                for _, _, bg_source, _ in backgrounds
            )

    entries, failures = _run_grid(
        foregrounds, backgrounds, cfg.output_dir, cfg.compose, cfg.class_name,
        cfg.seed, cfg.workers, cfg.strict,
    )
    manifest = DatasetManifest(entries, key_failures + failures)
    write_manifest(manifest, cfg.output_dir / MANIFEST_NAME)
    return manifest
