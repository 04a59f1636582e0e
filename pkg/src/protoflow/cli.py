"""Command-line pipeline: data generation, prototypes, sampling, evaluation, reports.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, DivergenceError, ProtoflowError
from .guided_sampler import (GuidanceConfig, SolverConfig, SynthesisResult, synthesize_set,
                             write_trajectory_log)
from .latent_space import (ClassPool, LatentCodec, MixtureSpec, Standardizer, fit_standardizer,
                           load_dataset, sample_mixture_dataset, save_dataset)
from .metrics import (CoverageReport, EvalReport, coverage_report, eval_summary, nfe_report,
                      nfe_summary, probe_eval, write_coverage_csv, write_summary)
from .prototypes import MODES, PrototypeSet, assign_prototypes, build_prototypes
from .scenarios import scenario_spec
from .velocity import OracleMixtureField, TrainableField, VelocityField, train_field

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3, 4
TEST_SEED_OFFSET = 1_000_003
MANIFEST = "manifest.json"


# -- configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    """Every knob of a pipeline run. JSON key ``lambda`` maps to ``lam``."""

    scenario: str | None = "desk8"
    mixture: str | None = None
    dataset: str | None = None
    test_dataset: str | None = None
    n_per_class: int = 500
    n_test_per_class: int = 500
    data_seed: int = 0
    ipc: int = 10
    k: int | None = None
    proto_mode: str = "centroid"
    kmeans_tol: float = 1e-4
    kmeans_max_iter: int = 300
    lam: float = 0.5
    s_end: float = 0.6
    rho0: float = 0.5
    rho_min: float = 0.1
    c: float = 1e-8
    eta_init: float = 0.09
    steps: int = 48
    substeps: int = 4
    method: str = "heun"
    cfg_scale: float = 0.3
    field: str = "oracle"
    train_epochs: int = 30
    train_batch_size: int = 256
    train_lr: float = 1e-3
    train_hidden: tuple[int, ...] = (64, 64)
    seed: int = 0
    baseline: bool = True
    probe_seeds: int = 3
    knn: int = 50
    s_vae: float = 1.0
    workers: int = 1
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.train_hidden = tuple(int(h) for h in self.train_hidden)
        self.validate()

    @property
    def K(self) -> int:
        return self.ipc if self.k is None else self.k

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(self.lam, self.s_end, self.rho0, self.rho_min, self.c, self.eta_init)

    def solver(self) -> SolverConfig:
        return SolverConfig(self.steps, self.substeps, self.method)

    def validate(self) -> None:
        self.guidance()
        self.solver()
        sources = [x for x in (self.scenario, self.mixture, self.dataset) if x is not None]
        if len(sources) != 1:
            raise ConfigError("set exactly one of scenario, mixture, dataset")
        if self.field not in ("oracle", "trained"):
            raise ConfigError(f"field must be 'oracle' or 'trained', got {self.field!r}")
        if self.field == "oracle" and self.dataset is not None:
            raise ConfigError("the oracle field needs a scenario or mixture, not a dataset file")
        if self.proto_mode not in MODES:
            raise ConfigError(f"proto_mode must be one of {MODES}")
        for name in ("n_per_class", "n_test_per_class", "ipc", "K", "kmeans_max_iter",
                     "probe_seeds", "knn", "workers", "train_epochs", "train_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.kmeans_tol <= 0 or self.train_lr <= 0 or self.s_vae <= 0:
            raise ConfigError("kmeans_tol, train_lr and s_vae must be positive")
        if not np.isfinite(self.cfg_scale) or self.cfg_scale < 0:
            raise ConfigError("cfg_scale must be finite and >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        d["train_hidden"] = list(self.train_hidden)
        return dict(sorted(d.items()))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def _save_standardizer(st: Standardizer, path: Path) -> None:
    write_summary({"mu": st.mu.tolist(), "sigma": st.sigma.tolist()}, path)


def _load_spec(scenario: str | None, mixture: str | None) -> MixtureSpec | None:
    if scenario is not None:
        return scenario_spec(scenario)
    if mixture is not None:
        return MixtureSpec.load(mixture)
    return None


# -- manifest ------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: Path, config: RunConfig, files: list[str], complete: bool,
                   failed_stage: str | None = None, extra: dict | None = None) -> None:
    data = {
        "tool": "protoflow",
        "version": __version__,
        "complete": complete,
        "failed_stage": failed_stage,
        "config": config.to_dict(),
        "seeds": {"data": config.data_seed, "prototypes": config.seed, "sampler": config.seed,
                  "test": config.data_seed + TEST_SEED_OFFSET, "probe": list(range(config.probe_seeds))},
        "files": {f: sha256_file(run_dir / f) for f in sorted(set(files)) if (run_dir / f).exists()},
    }
    if extra:
        data.update(extra)
    write_summary(data, run_dir / MANIFEST)


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST
    if not path.exists():
        raise DataError(f"no manifest in {run_dir}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from None


def verify_manifest(run_dir: str | Path) -> list[str]:
    """Problems found when re-hashing every listed file; empty when intact."""
    run_dir = Path(run_dir)
    problems = []
    for name, digest in read_manifest(run_dir)["files"].items():
        path = run_dir / name
        if not path.exists():
            problems.append(f"missing: {name}")
        elif sha256_file(path) != digest:
            problems.append(f"modified: {name}")
    return problems


# -- pipeline ------------------------------------------------------------------

class _Stages:
    """Runs named stages; on failure the manifest is marked incomplete."""

    def __init__(self, run_dir: Path, config: RunConfig):
        self.run_dir = run_dir
        self.config = config
        self.files: list[str] = []

    def add(self, *names: str) -> None:
        self.files.extend(names)

    def run(self, name, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            write_manifest(self.run_dir, self.config, self.files, complete=False, failed_stage=name)
            exc.stage = name
            raise


def _ingest(cfg: RunConfig, run_dir: Path):
    spec = _load_spec(cfg.scenario, cfg.mixture)
    if spec is not None:
        pool = sample_mixture_dataset(spec, cfg.n_per_class, cfg.data_seed)
        test = sample_mixture_dataset(spec, cfg.n_test_per_class, cfg.data_seed + TEST_SEED_OFFSET)
        spec.save(run_dir / "mixture.json")
    else:
        pool = load_dataset(cfg.dataset)
        test = load_dataset(cfg.test_dataset) if cfg.test_dataset else pool
    save_dataset(pool, run_dir / "data.txt")
    return spec, pool, test


def _make_field(cfg: RunConfig, spec, pool: ClassPool, run_dir: Path) -> VelocityField:
    if cfg.field == "oracle":
        return OracleMixtureField(spec)
    field, log = train_field(pool, cfg.train_epochs, cfg.train_batch_size, cfg.train_lr,
                             cfg.seed, cfg.train_hidden)
    field.save(run_dir / "field.f64")
    write_summary({"initial_eval_loss": log.initial_eval_loss,
                   "final_eval_loss": log.final_eval_loss, "updates": len(log.losses)},
                  run_dir / "training.json")
    return field


def _variants(cfg: RunConfig) -> list[tuple[str, bool]]:
    return [("pgfm", True)] + ([("fm", False)] if cfg.baseline else [])


def run_pipeline(cfg: RunConfig) -> Path:
    """Ingest, standardize, cluster, synthesize, evaluate and report.

    Returns the run directory. Errors propagate with a ``stage`` attribute
    after the manifest has been marked incomplete.
    """
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    stages = _Stages(run_dir, cfg)
    codec = LatentCodec(s_vae=cfg.s_vae)

    spec, pool, test = stages.run("ingest", _ingest, cfg, run_dir)
    stages.add("data.txt", *(["mixture.json"] if spec is not None else []))

    st = stages.run("standardize", fit_standardizer, pool)
    _save_standardizer(st, run_dir / "standardizer.json")
    stages.add("standardizer.json")
    pool_std, test_std = pool.map(st.forward), test.map(st.forward)

    def cluster():
        protos = build_prototypes(pool_std, cfg.K, cfg.proto_mode, cfg.seed, cfg.kmeans_tol,
                                  cfg.kmeans_max_iter, cfg.workers)
        protos.save(run_dir / "prototypes.txt", pool.num_classes)
        return protos

    protos_std = stages.run("prototypes", cluster)
    stages.add("prototypes.txt")

    field = stages.run("field", _make_field, cfg, spec, pool, run_dir)
    if cfg.field == "trained":
        stages.add("field.f64", "field.f64.json", "training.json")

    results: dict[str, SynthesisResult] = {}
    for name, guided in _variants(cfg):
        def synth(guided=guided, name=name):
            res = synthesize_set(protos_std.mapped(st.inverse), field, cfg.guidance(), cfg.solver(),
                                 cfg.ipc, cfg.seed, cfg.cfg_scale, codec, guided, cfg.workers)
            save_dataset(res.samples, run_dir / f"synthetic_{name}.txt")
            write_trajectory_log(res.records, run_dir / f"trajectories_{name}.csv")
            return res

        results[name] = stages.run(f"synthesize[{name}]", synth)
        stages.add(f"synthetic_{name}.txt", f"trajectories_{name}.csv")

    def evaluate():
        summary = {"variants": {}}
        for name, res in results.items():
            nfe = nfe_report(res.records, cfg.steps, cfg.substeps)
            cov = coverage_report(name, res.latents.map(st.forward), res.assignments, protos_std,
                                  pool_std, cfg.knn, res.latents, spec, nfe.total)
            probe = probe_eval(res.latents.map(st.forward), test_std, cfg.probe_seeds, name)
            write_coverage_csv(cov, run_dir / f"coverage_{name}.csv")
            summary["variants"][name] = _variant_summary(cov, probe) | {"nfe": nfe_summary(nfe),
                                                                        "decode": res.choices}
        write_summary(summary, run_dir / "summary.json")

    stages.run("evaluate", evaluate)
    stages.add(*(f"coverage_{n}.csv" for n in results), "summary.json")
    write_manifest(run_dir, cfg, stages.files, complete=True)
    stages.run("report", emit_report, run_dir)
    return run_dir


def _variant_summary(cov: CoverageReport, probe: EvalReport) -> dict:
    return {"coverage": cov.summary(), "probe": eval_summary(probe)}


# -- report --------------------------------------------------------------------

REPORT_METRICS = [("hit rate (%)", ("coverage", "hit_rate")),
                  ("coverage", ("coverage", "coverage")),
                  ("representativeness", ("coverage", "representativeness")),
                  ("probe accuracy", ("probe", "probe_mean")),
                  ("NFE", ("coverage", "total_nfe"))]

REQUIRED = ["data.txt", "prototypes.txt", "standardizer.json", "summary.json"]


def emit_report(run_dir: str | Path) -> list[Path]:
    """Write ``report.txt`` and, for 2-D latents, SVG scatter plots.

    Returns the paths written. The new files are added to the manifest.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    missing = [f for f in REQUIRED if f not in manifest["files"] or not (run_dir / f).exists()]
    if not manifest.get("complete") or missing:
        raise DataError("incomplete run; missing artifacts: " + (", ".join(missing) or
                        f"stage {manifest.get('failed_stage')} did not finish"))
    summary = json.loads((run_dir / "summary.json").read_text())
    variants = list(summary["variants"])

    lines = [f"{'metric':<20} {'variant':<8} {'value':>12}  std"]
    for label, (section, key) in REPORT_METRICS:
        for v in variants:
            block = summary["variants"][v][section]
            value = block[key]
            std = f"  {block['probe_std']:.4f}" if key == "probe_mean" else ""
            text = f"{value:d}" if isinstance(value, int) else f"{value:.4f}"
            lines.append(f"{label:<20} {v:<8} {text:>12}{std}")
    written = [run_dir / "report.txt"]

    pool = load_dataset(run_dir / "data.txt")
    if pool.dim == 2:
        written += _scatter_plots(run_dir, variants)
    else:
        lines.append(f"scatter plots skipped: latents are {pool.dim}-D, plots need 2-D")
    written[0].write_text("\n".join(lines) + "\n")

    config = RunConfig.from_dict(manifest["config"])
    files = list(manifest["files"]) + [str(p.relative_to(run_dir)) for p in written]
    write_manifest(run_dir, config, files, complete=True)
    return written


def _scatter_plots(run_dir: Path, variants: list[str]) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "protoflow"
    data = load_dataset(run_dir / "data.txt")
    st_raw = json.loads((run_dir / "standardizer.json").read_text())
    st = Standardizer(np.array(st_raw["mu"]), np.array(st_raw["sigma"]))
    protos = PrototypeSet.load(run_dir / "prototypes.txt").mapped(st.inverse)
    synth = {v: load_dataset(run_dir / f"synthetic_{v}.txt") for v in variants}
    colors = {"pgfm": "tab:red", "fm": "tab:blue"}

    def draw(ax, classes):
        for i, y in enumerate(classes):
            ax.scatter(*data[y].T, s=4, c="0.75", label="real" if i == 0 else None)
        for i, y in enumerate(classes):
            ax.scatter(*protos[y].T, s=60, marker="x", c="k", label="prototypes" if i == 0 else None)
        for v in variants:
            for i, y in enumerate(classes):
                ax.scatter(*synth[v][y].T, s=22, c=colors.get(v, "tab:green"),
                           label=f"synthetic ({v})" if i == 0 else None)
        ax.legend(loc="upper right", fontsize=7)
        ax.set_aspect("equal", adjustable="datalim")

    out_dir = run_dir / "figures"
    out_dir.mkdir(exist_ok=True)
    written = []
    for name, classes in [(f"class_{y}", [y]) for y in data.classes] + [("all", data.classes)]:
        fig, ax = plt.subplots(figsize=(5, 5))
        draw(ax, classes)
        ax.set_title(name.replace("_", " "))
        path = out_dir / f"scatter_{name}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


# -- argument parsing ------------------------------------------------------------

def _add_guidance_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("guidance and solver")
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--s-end", type=float)
    g.add_argument("--rho0", type=float)
    g.add_argument("--rho-min", type=float)
    g.add_argument("--c", type=float)
    g.add_argument("--eta-init", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--substeps", type=int)
    g.add_argument("--method", choices=("euler", "heun"))
    g.add_argument("--cfg-scale", type=float)
    g.add_argument("--ipc", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)


def _add_source_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--scenario", help="bundled mixture, e.g. desk8")
    src.add_argument("--mixture", help="mixture JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a labeled dataset from a mixture")
    _add_source_flags(p)
    p.add_argument("--n-per-class", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--spec-out", help="also write the mixture as JSON")

    p = sub.add_parser("prototypes", help="cluster each class in standardized space")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=MODES, default="centroid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="distill a synthetic set")
    p.add_argument("--data", required=True, help="real pool the prototypes were built from")
    p.add_argument("--protos", required=True)
    _add_source_flags(p, required=False)
    p.add_argument("--field", help="trained field file (instead of an oracle mixture)")
    p.add_argument("--unguided", action="store_true", help="plain flow-matching sampler")
    p.add_argument("--s-vae", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="trajectory CSV path")
    _add_guidance_flags(p)

    p = sub.add_parser("evaluate", help="score synthetic sets")
    p.add_argument("--data", required=True)
    p.add_argument("--protos", required=True)
    p.add_argument("--synthetic", required=True, nargs="+", help="files named <variant>.txt")
    p.add_argument("--test", help="held-out labeled set for the probe (default: --data)")
    _add_source_flags(p, required=False)
    p.add_argument("--s-vae", type=float, default=1.0)
    p.add_argument("--probe-seeds", type=int, default=3)
    p.add_argument("--knn", type=int, default=50)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("report", help="summary table and SVG figures for a run directory")
    p.add_argument("run_dir")

    p = sub.add_parser("verify", help="re-hash every file listed in a run manifest")
    p.add_argument("run_dir")

    p = sub.add_parser("pipeline", help="end-to-end run from a JSON config")
    p.add_argument("--config", help="JSON config; missing keys take defaults")
    p.add_argument("--output-dir")
    p.add_argument("--no-baseline", action="store_true")
    _add_guidance_flags(p)
    return parser


OVERRIDES = ("lam", "s_end", "rho0", "rho_min", "c", "eta_init", "steps", "substeps", "method",
             "cfg_scale", "ipc", "seed", "workers", "output_dir")


def _config_from_args(args) -> RunConfig:
    data = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    data["lam"] = data.pop("lambda")
    for key in OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if args.no_baseline:
        data["baseline"] = False
    return RunConfig.from_dict(data)


def _guidance_from_args(args) -> tuple[GuidanceConfig, SolverConfig]:
    base = RunConfig()
    kw = {k: getattr(args, k) if getattr(args, k) is not None else getattr(base, k)
          for k in ("lam", "s_end", "rho0", "rho_min", "c", "eta_init")}
    sv = {k: getattr(args, k) if getattr(args, k) is not None else getattr(base, k)
          for k in ("steps", "substeps", "method")}
    return GuidanceConfig(**kw), SolverConfig(**sv)


def _cmd_gen_data(args) -> None:
    spec = _load_spec(args.scenario, args.mixture)
    save_dataset(sample_mixture_dataset(spec, args.n_per_class, args.seed), args.out)
    if args.spec_out:
        spec.save(args.spec_out)


def _cmd_prototypes(args) -> None:
    pool = load_dataset(args.data)
    st = fit_standardizer(pool)
    protos = build_prototypes(pool.map(st.forward), args.k, args.mode, args.seed, args.tol,
                              args.max_iter, args.workers)
    protos.save(args.out, pool.num_classes)


def _cmd_sample(args) -> None:
    gcfg, scfg = _guidance_from_args(args)
    pool = load_dataset(args.data)
    st = fit_standardizer(pool)
    protos = PrototypeSet.load(args.protos).mapped(st.inverse)
    spec = _load_spec(args.scenario, args.mixture)
    if args.field:
        field = TrainableField.load(args.field)
    elif spec is not None:
        field = OracleMixtureField(spec)
    else:
        raise ConfigError("sample needs --scenario, --mixture or --field")
    base = RunConfig()
    res = synthesize_set(protos, field, gcfg, scfg,
                         args.ipc if args.ipc is not None else base.ipc,
                         args.seed if args.seed is not None else base.seed,
                         args.cfg_scale if args.cfg_scale is not None else base.cfg_scale,
                         LatentCodec(s_vae=args.s_vae), not args.unguided,
                         args.workers if args.workers is not None else 1)
    save_dataset(res.samples, args.out)
    if args.log:
        write_trajectory_log(res.records, args.log)
    nfe = nfe_report(res.records, scfg.steps, scfg.substeps)
    write_summary({"guided": res.guided, "nfe": nfe_summary(nfe), "decode": res.choices},
                  f"{args.out}.meta.json")


def _cmd_evaluate(args) -> None:
    pool = load_dataset(args.data)
    st = fit_standardizer(pool)
    protos_std = PrototypeSet.load(args.protos)
    test = load_dataset(args.test) if args.test else pool
    spec = _load_spec(args.scenario, args.mixture)
    codec = LatentCodec(s_vae=args.s_vae)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"variants": {}}
    for path in args.synthetic:
        name = Path(path).stem
        latents = load_dataset(path).map(codec.encode)
        assignments = {y: assign_prototypes(protos_std.K, len(latents[y])) for y in latents.classes}
        meta_path = Path(f"{path}.meta.json")
        total_nfe = json.loads(meta_path.read_text())["nfe"]["total"] if meta_path.exists() else 0
        latents_std = latents.map(st.forward)
        cov = coverage_report(name, latents_std, assignments, protos_std, pool.map(st.forward),
                              args.knn, latents, spec, total_nfe)
        probe = probe_eval(latents_std, test.map(st.forward), args.probe_seeds, name)
        write_coverage_csv(cov, out / f"coverage_{name}.csv")
        summary["variants"][name] = _variant_summary(cov, probe)
    write_summary(summary, out / "summary.json")


def _cmd_report(args) -> None:
    for path in emit_report(args.run_dir):
        print(path)
    if load_dataset(Path(args.run_dir) / "data.txt").dim != 2:
        print("notice: scatter plots skipped for latents that are not 2-D")


def _cmd_verify(args) -> None:
    problems = verify_manifest(args.run_dir)
    for p in problems:
        print(p)
    if problems:
        raise DataError(f"{len(problems)} file(s) fail verification")
    print("ok")


def _cmd_pipeline(args) -> None:
    run_dir = run_pipeline(_config_from_args(args))
    print((run_dir / "report.txt").read_text(), end="")


COMMANDS = {"gen-data": _cmd_gen_data, "prototypes": _cmd_prototypes, "sample": _cmd_sample,
            "evaluate": _cmd_evaluate, "report": _cmd_report, "verify": _cmd_verify,
            "pipeline": _cmd_pipeline}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    return EXIT_OTHER


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ProtoflowError, OSError) as exc:
        stage = getattr(exc, "stage", None)
        where = f" in stage {stage}" if stage else ""
        print(f"protoflow {args.command}: error{where}: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
