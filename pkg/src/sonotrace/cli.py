"""Command-line frontend: preprocess scenes, simulate datasets, build phantoms, measure."""

import argparse
import hashlib
import itertools
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anatomy import (build_anatomy, load_anatomy, load_segmentation, load_tissue_table, save_anatomy,
                      save_segmentation, save_tissue_table)
from .metrics import (MetricsReport, measure_contrast, measure_tre, region_roi, speckle_stats,
                      summarize_tre)
from .pathtracer import SimParams
from .phantom import build_phantom, builtin_spec, builtin_specs, load_ground_truth, load_phantom_spec
from .postproc import BModeImage, PostprocParams, load_pgm, save_pgm, to_bmode
from .rng import derive_seed
from .scatterfield import AnalyticBeamProfile, profile_from_json
from .simulator import UltrasoundSimulator
from .transducer import ProbePose, TransducerConfig, make_geometry

log = logging.getLogger("sonotrace")

# bracketed ranges of the view-classification experiment
TABLE3_SWEEP = {
    "beam_coherence": [0.01, 0.05, 0.075, 0.1],
    "num_rays_per_element": [1000, 2000, 3000, 5000],
    "dynamic_range_db": [65.0, 75.0, 85.0, 95.0],
    "reject_db": [35.0, 45.0, 50.0, 60.0],
}
SIM_SWEEP_KEYS = ("beam_coherence", "num_rays_per_element")
DISPLAY_SWEEP_KEYS = ("dynamic_range_db", "reject_db")


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def _read_json(path, what):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _inline_or_file(value, base, what):
    """A config section given inline as an object or as a path to a JSON file."""
    if value is None:
        return None
    if isinstance(value, dict):
        return value
    return _read_json(base / value, what)


def params_hash(params):
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode("utf-8")).hexdigest()[:16]


@dataclass
class RunConfig:
    """Everything one ``simulate`` run needs.

    Exactly one of ``scene`` (an SVDB file) and ``phantom`` (a built-in view
    name or a phantom spec path) selects the anatomy.  ``sweep`` maps
    parameter names to value lists; ``"table3"`` selects the full grid of
    the view-classification experiment.
    """

    poses: list
    output_dir: Path
    scene: Path = None
    phantom: str = None
    tissues: Path = None
    transducer: TransducerConfig = field(default_factory=TransducerConfig)
    sim_params: SimParams = field(default_factory=SimParams)
    postproc: PostprocParams = field(default_factory=PostprocParams)
    beam: dict = None
    depth: float = None
    scatter_density: float = 600.0
    scatter_region: tuple = None
    sweep: dict = field(default_factory=dict)
    jobs: int = 1
    seed: int = 0
    save_arrays: bool = False
    views: list = None

    def __post_init__(self):
        if (self.scene is None) == (self.phantom is None):
            raise ConfigError("set exactly one of 'scene' and 'phantom'")
        if not self.poses:
            raise ConfigError("'poses' must list at least one probe pose")
        if self.scene is not None and not Path(self.scene).exists():
            raise ConfigError(f"scene file not found: {self.scene}")
        if self.tissues is not None and not Path(self.tissues).exists():
            raise ConfigError(f"tissue table not found: {self.tissues}")
        unknown = set(self.sweep) - set(TABLE3_SWEEP)
        if unknown:
            raise ConfigError(f"cannot sweep {sorted(unknown)}; choose from {sorted(TABLE3_SWEEP)}")
        for k, v in self.sweep.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"sweep values for {k!r} must be a non-empty list")

    @classmethod
    def from_json(cls, obj, base_dir="."):
        base = Path(base_dir)
        known = {"scene", "phantom", "tissues", "transducer", "sim_params", "postproc", "beam", "depth_mm",
                 "scatter_density_per_mm2", "scatter_region_mm", "poses", "sweep", "output_dir", "jobs",
                 "seed", "save_arrays"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        try:
            poses = [ProbePose.from_json(p) for p in obj.get("poses", [{"position_mm": [0, 0, 0]}])]
            views = [p.get("view") for p in obj.get("poses", [{}])]
            transducer = TransducerConfig.from_json(_inline_or_file(obj.get("transducer"), base, "transducer") or {})
            sim = SimParams.from_json(_inline_or_file(obj.get("sim_params"), base, "simulation parameters") or {})
            post = PostprocParams.from_json(_inline_or_file(obj.get("postproc"), base, "postprocessing") or {})
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed run config: {exc}") from exc
        sweep = obj.get("sweep", {})
        if sweep == "table3":
            sweep = {k: list(v) for k, v in TABLE3_SWEEP.items()}
        phantom = obj.get("phantom")
        if phantom is not None and phantom not in builtin_specs():
            phantom = str(base / phantom)
        region = obj.get("scatter_region_mm")
        cfg = cls(poses=poses, output_dir=base / obj.get("output_dir", "out"),
                  scene=base / obj["scene"] if obj.get("scene") else None, phantom=phantom,
                  tissues=base / obj["tissues"] if obj.get("tissues") else None,
                  transducer=transducer, sim_params=sim, postproc=post,
                  beam=_inline_or_file(obj.get("beam"), base, "beam profile"),
                  depth=float(obj["depth_mm"]) if "depth_mm" in obj else None,
                  scatter_density=float(obj.get("scatter_density_per_mm2", 600.0)),
                  scatter_region=tuple(tuple(r) for r in region) if region else None,
                  sweep=sweep, jobs=int(obj.get("jobs", 1)), seed=int(obj.get("seed", sim.seed)),
                  save_arrays=bool(obj.get("save_arrays", False)), views=views)
        return cfg


def load_run_config(path):
    path = Path(path)
    return RunConfig.from_json(_read_json(path, "run config"), path.parent)


def sweep_variations(sweep, keys):
    """Cartesian product of the swept values for ``keys`` as a list of dicts."""
    axes = [(k, sweep[k]) for k in keys if k in sweep]
    if not axes:
        return [{}]
    names = [k for k, _ in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in axes))]


def _apply_sim_variation(params, var):
    changes = {}
    if "beam_coherence" in var:
        changes["beam_coherence_c0"] = float(var["beam_coherence"])
    if "num_rays_per_element" in var:
        changes["rays_per_scanline"] = int(var["num_rays_per_element"])
    return params.replace(**changes) if changes else params


def _apply_display_variation(params, var):
    return params.replace(**{k: float(v) for k, v in var.items()}) if var else params


# --- per-process scene cache ------------------------------------------------------

_SCENES = {}


def _load_scene(cfg):
    """``(anatomy, phantom spec or None)`` for a run config, cached per process."""
    key = (str(cfg.scene), cfg.phantom, str(cfg.tissues))
    if key not in _SCENES:
        if cfg.phantom is not None:
            spec = builtin_spec(cfg.phantom) if cfg.phantom in builtin_specs() else load_phantom_spec(cfg.phantom)
            build = build_phantom(spec)
            _SCENES[key] = (build_anatomy(build.segmentation, build.tissues), spec)
        else:
            anatomy = load_anatomy(cfg.scene)
            if cfg.tissues is not None:
                from .anatomy import AnatomyVolume

                tissues = load_tissue_table(cfg.tissues)
                anatomy = AnatomyVolume(anatomy.label_grid, anatomy.sdfs, tissues)
            _SCENES[key] = (anatomy, None)
    return _SCENES[key]


def _simulator(cfg, spec, sim_params, n_threads):
    if spec is not None:
        beam = cfg.beam or spec.beam
        depth = cfg.depth or spec.depth
        region = cfg.scatter_region or spec.scatter_region
    else:
        beam = cfg.beam or AnalyticBeamProfile().to_json()
        depth = cfg.depth or 100.0
        region = cfg.scatter_region
    return UltrasoundSimulator(cfg.transducer, sim_params, cfg.postproc, profile_from_json(beam), depth,
                               cfg.scatter_density, region, n_jobs=n_threads), beam, depth


def _pose_inside(anatomy, pose):
    grid = anatomy.label_grid
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.dims) * np.asarray(grid.spacing)
    return bool(np.all(pose.position >= lo) and np.all(pose.position <= hi))


def _render(cfg, pose_index, sim_index, n_threads):
    """Simulate one (pose, simulation variation) and write every display variant."""
    anatomy, spec = _load_scene(cfg)
    pose = cfg.poses[pose_index]
    sim_var = sweep_variations(cfg.sweep, SIM_SWEEP_KEYS)[sim_index]
    display_vars = sweep_variations(cfg.sweep, DISPLAY_SWEEP_KEYS)
    seed = derive_seed(cfg.seed, pose_index, sim_index)
    sim_params = _apply_sim_variation(cfg.sim_params, sim_var).replace(seed=seed)
    sim, beam, depth = _simulator(cfg, spec, sim_params, n_threads)
    if spec is None and not _pose_inside(anatomy, pose):
        warnings.warn(f"pose {pose_index} lies outside the scene volume; the image shows background only",
                      stacklevel=2)
    t0 = time.perf_counter()
    result = sim.fit(anatomy).simulate(pose, seed)
    sim_ms = (time.perf_counter() - t0) * 1e3
    view = (cfg.views or [None] * len(cfg.poses))[pose_index]
    records, timings = [], []
    for display_index, dvar in enumerate(display_vars):
        t1 = time.perf_counter()
        post = _apply_display_variation(cfg.postproc, dvar)
        image = to_bmode(result.envelope, result.geometry, post) if dvar else result.image
        stem = f"img_p{pose_index:04d}_v{sim_index:03d}_d{display_index:03d}"
        params = {"transducer": cfg.transducer.to_json(), "sim_params": sim_params.to_json(),
                  "postproc": post.to_json(), "beam": beam, "depth_mm": depth,
                  "scatter_density_per_mm2": cfg.scatter_density, "pose": pose.to_json()}
        phash = params_hash(params)
        side = {"params": params, "params_hash": phash, "seed": seed, "pose_index": pose_index,
                "variation": {**sim_var, **dvar}, "view": view}
        if cfg.save_arrays:
            np.savez(cfg.output_dir / f"{stem}.npz", linear=image.linear, mask=image.mask,
                     envelope=result.envelope.values)
            side["arrays"] = f"{stem}.npz"
        save_pgm(image, cfg.output_dir / f"{stem}.pgm", side)
        records.append({"file": f"{stem}.pgm", "sidecar": f"{stem}.json", "pose_index": pose_index,
                        "pose": pose.to_json(), "variation": {**sim_var, **dvar}, "params_hash": phash,
                        "seed": seed, "view": view})
        timings.append({"file": f"{stem}.pgm",
                        "wall_clock_ms": (sim_ms if display_index == 0 else 0.0)
                        + (time.perf_counter() - t1) * 1e3})
    return records, timings


def _render_job(args):
    cfg, pose_index, sim_index = args
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = _render(cfg, pose_index, sim_index, 1)
    return out, [str(w.message) for w in caught]


def run_simulation(cfg, jobs=None):
    """Render every pose x variation of ``cfg``; returns the manifest dict."""
    jobs = max(1, int(jobs or cfg.jobs or 1))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    n_sim = len(sweep_variations(cfg.sweep, SIM_SWEEP_KEYS))
    work = [(cfg, p, v) for p in range(len(cfg.poses)) for v in range(n_sim)]
    t0 = time.perf_counter()
    if jobs > 1 and len(work) > 1:
        # process-level parallelism across images, one tracing thread each
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            results = list(pool.map(_render_job, work))
        for _, msgs in results:
            for m in msgs:
                warnings.warn(m, stacklevel=2)
        results = [r for r, _ in results]
    else:
        results = [_render(cfg, p, v, jobs) for _, p, v in work]
    records = [rec for recs, _ in results for rec in recs]
    timings = [t for _, ts in results for t in ts]
    manifest = {"run_seed": cfg.seed, "num_images": len(records), "records": records}
    (cfg.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    total_ms = (time.perf_counter() - t0) * 1e3
    (cfg.output_dir / "timings.json").write_text(
        json.dumps({"jobs": jobs, "total_ms": total_ms, "images": timings}, indent=2), encoding="utf-8")
    return manifest


# --- phantoms and metrics ------------------------------------------------------------

def write_phantom(spec, out_dir):
    """Scene, segmentation, tissue table, spec and ground truth for ``spec``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    build = build_phantom(spec)
    save_segmentation(build.segmentation, out / "segmentation.json")
    save_tissue_table(build.tissues, out / "tissues.json")
    save_anatomy(build_anatomy(build.segmentation, build.tissues), out / "scene.svdb")
    (out / "spec.json").write_text(json.dumps(spec.to_json(), indent=2), encoding="utf-8")
    (out / "truth.json").write_text(json.dumps(build.truth.to_json(), indent=2), encoding="utf-8")
    return build


def _load_image(path):
    """Display image with the mask, linear envelope and raw envelope when saved."""
    image = load_pgm(path)
    arrays = image.meta.get("arrays")
    envelope = None
    if arrays:
        data = np.load(Path(path).parent / arrays)
        image = BModeImage(image.pixels, data["mask"], image.pixel_spacing, image.x0, image.z0,
                           data["linear"], image.meta)
        envelope = data["envelope"]
    return image, envelope


def _sidecar_geometry(meta):
    params = meta["params"]
    cfg = TransducerConfig.from_json(params["transducer"])
    return make_geometry(cfg, ProbePose.from_json(params["pose"]), float(params["depth_mm"]))


def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)} if v.size else {}


def compute_metrics(image_paths, truth):
    """Metrics for each image and their aggregates, grouped by view tag."""
    per_image = []
    for path in image_paths:
        image, env = _load_image(path)
        entry = {"file": str(path), "view": image.meta.get("view"), "seed": image.meta.get("seed")}
        if truth.wires:
            tre = measure_tre(image, truth)
            entry["tre"] = tre
            entry["tre_summary"] = summarize_tre(tre)
        if truth.lesions:
            if image.linear is None:
                raise ValueError(f"{path}: lesion contrast needs the saved envelope arrays (save_arrays)")
            entry["lesions"] = []
            for i, les in enumerate(truth.lesions):
                m = measure_contrast(image, truth.lesion_mask(image, i), truth.background_mask(image, i))
                entry["lesions"].append({"name": les["name"], **m})
        if truth.speckle_region:
            if env is None:
                raise ValueError(f"{path}: speckle statistics need the saved envelope arrays (save_arrays)")
            geometry = _sidecar_geometry(image.meta)
            margin = profile_from_json(image.meta["params"]["beam"]).lateral_cutoff
            entry["speckle"] = speckle_stats(env, region_roi(geometry, truth.speckle_region, margin))
        per_image.append(entry)
    report = MetricsReport()
    views = {}
    for e in per_image:
        views.setdefault(e["view"] or "default", []).append(e)
    aggregate = {}
    for view, entries in views.items():
        agg = {}
        tre = [t for e in entries for t in e.get("tre", [])]
        if tre:
            agg["tre"] = summarize_tre(tre)
            report.tre.extend(tre)
        if any("lesions" in e for e in entries):
            names = [les["name"] for les in entries[0]["lesions"]]
            agg["lesions"] = {n: {k: _mean_std([les[k] for e in entries for les in e["lesions"] if les["name"] == n])
                                  for k in ("gcnr", "cnr", "contrast_db")} for n in names}
            report.lesions.extend(les for e in entries for les in e["lesions"])
        if any("speckle" in e for e in entries):
            agg["speckle"] = {k: _mean_std([e["speckle"][k] for e in entries])
                              for k in ("snr", "rayleigh_sse", "rayleigh_sse_mass", "fitted_scale")}
            report.speckle = agg["speckle"]
        aggregate[view] = agg
    if report.tre:
        report.tre_summary = summarize_tre(report.tre)
    out = report.to_json()
    out["views"] = aggregate
    out["images"] = [{k: v for k, v in e.items() if k != "tre"} for e in per_image]
    return out


# --- commands --------------------------------------------------------------------------

def cmd_preprocess(args):
    seg = load_segmentation(args.segmentation)
    tissues = load_tissue_table(args.tissues)
    t0 = time.perf_counter()
    anatomy = build_anatomy(seg, tissues, n_jobs=args.jobs or 1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_anatomy(anatomy, out)
    log.info("scene written to %s in %.1f s", out, time.perf_counter() - t0)
    return 0


def cmd_simulate(args):
    cfg = load_run_config(args.config)
    if args.out:
        cfg.output_dir = Path(args.out)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    manifest = run_simulation(cfg, args.jobs)
    log.info("%d images written to %s", manifest["num_images"], cfg.output_dir)
    return 0


def cmd_phantom(args):
    if args.list:
        print("\n".join(sorted(builtin_specs())))
        return 0
    if not args.spec:
        raise ConfigError("give a built-in phantom name or a spec path (see --list)")
    spec = builtin_spec(args.spec) if args.spec in builtin_specs() else load_phantom_spec(args.spec)
    write_phantom(spec, args.out or Path("phantom") / spec.name)
    log.info("phantom %s written to %s", spec.name, args.out)
    return 0


def cmd_metrics(args):
    truth_path = Path(args.truth)
    if not truth_path.exists():
        raise ConfigError(f"ground truth not found: {truth_path}")
    truth = load_ground_truth(truth_path)
    paths = [Path(p) for p in args.images]
    if args.manifest:
        manifest = _read_json(args.manifest, "manifest")
        paths += [Path(args.manifest).parent / r["file"] for r in manifest["records"]]
    if not paths:
        raise ConfigError("no images given")
    report = compute_metrics(paths, truth)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="sonotrace", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build a scene file from a segmentation and tissue table")
    p.add_argument("segmentation", help="segmentation header JSON")
    p.add_argument("tissues", help="tissue table JSON")
    p.add_argument("--out", required=True, help="output scene (.svdb)")
    p.add_argument("--jobs", type=int, default=1, help="threads for SDF construction")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("simulate", help="render the images of a run config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--jobs", type=int, help="worker count (overrides the config)")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("phantom", help="write a phantom scene and its ground truth")
    p.add_argument("spec", nargs="?", help="built-in view name or phantom spec JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--list", action="store_true", help="list the built-in views")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("metrics", help="measure images against a ground truth")
    p.add_argument("images", nargs="*", help="P5 images written by 'simulate'")
    p.add_argument("--truth", required=True, help="ground-truth JSON from 'phantom'")
    p.add_argument("--manifest", help="measure every image of a manifest")
    p.add_argument("--out", help="report path (default: stdout)")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"sonotrace {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
