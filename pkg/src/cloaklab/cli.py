"""
Command-line front end.

Every subcommand writes machine-readable files into ``--out``:
``sweep.csv`` for sweeps, ``audit-<name>.json`` for audits and
``materials.dat`` for material exports. Exit status is 0 on success, 2 when a
certificate or accuracy gate fails (outputs are still written, with flags)
and 3 on configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import cloak_transform as ct
from . import experiments as ex
from . import mfs
from .errors import AccuracyError, CertificateError, CloakLabError, ConfigurationError
from .fields import PointSourceSet, default_sources

logger = logging.getLogger("cloaklab")

FORMAT_VERSION = "cloaklab-run-1"
EXIT_OK, EXIT_GATE, EXIT_CONFIG = 0, 2, 3
SUBCOMMANDS = ("sweep", "audit-morawetz", "audit-symmetry", "audit-transform", "audit-lowfreq",
               "proof-split", "stability", "materials", "selftest")
SWEEP_COLUMNS = ("epsilon", "visibility_h1", "certificate", "n_unknowns", "runtime_s", "flags",
                 "config_hash")
MFS_FIELDS = tuple(f.name for f in dataclasses.fields(mfs.MfsConfig))
# fields that do not change results and so stay out of the hash
UNHASHED = ("out", "threads", "timing")


@dataclass
class RunConfig:
    """Fully defaulted run configuration.

    ``source`` is ``(x, y[, z], re, im)``; ``mfs`` holds overrides of
    :class:`MfsConfig` fields applied on top of the per-``eps`` defaults.
    """

    scheme: str = "ball3d"
    k: float = ex.DEFAULT_K
    eps_list: tuple | None = None
    source: tuple | None = None
    quad_level: int = ex.DEFAULT_LEVEL
    mfs: dict = field(default_factory=dict)
    out: str = "."
    seed: int = 0
    threads: int = 1
    timing: bool = True
    grid_n: int = 17
    format_version: str = FORMAT_VERSION

    def validate(self) -> "RunConfig":
        if self.scheme not in ex.SCHEMES:
            raise ConfigurationError(f"scheme: expected one of {ex.SCHEMES}, got {self.scheme!r}")
        if not np.isfinite(self.k) or self.k <= 0:
            raise ConfigurationError(f"k: wavenumber must be > 0, got {self.k}")
        if self.eps_list is not None:
            eps = tuple(float(e) for e in self.eps_list)
            if not eps or any(not 0.0 < e < 1.0 for e in eps):
                raise ConfigurationError("eps_list: values must lie in (0, 1)")
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigurationError("eps_list: must be strictly decreasing")
            if self.scheme == "cyl3d" and eps[0] >= 0.5:
                raise ConfigurationError("eps_list: cylinder radii must be < 1/2")
            if self.k * eps[0] > 10:
                raise ConfigurationError("eps_list: k * eps must not exceed 10")
            self.eps_list = eps
        if self.source is not None:
            src = tuple(float(v) for v in self.source)
            if len(src) != self.dim + 2:
                raise ConfigurationError(
                    f"source: expected {self.dim} coordinates plus re,im for scheme {self.scheme}")
            self.source = src
            self.point_sources()
        if not 1 <= int(self.quad_level) <= ex.MAX_LEVEL:
            raise ConfigurationError(f"quad_level: must lie in 1..{ex.MAX_LEVEL}")
        unknown = set(self.mfs) - set(MFS_FIELDS)
        if unknown:
            raise ConfigurationError(f"mfs: unknown parameter(s) {sorted(unknown)}")
        mfs.MfsConfig(**self.mfs)  # field-level checks
        if self.threads < 1:
            raise ConfigurationError("threads: must be >= 1")
        if self.grid_n < 2:
            raise ConfigurationError("grid_n: must be >= 2")
        if self.format_version != FORMAT_VERSION:
            raise ConfigurationError(f"format_version: expected {FORMAT_VERSION!r}")
        return self

    @property
    def dim(self) -> int:
        return 2 if self.scheme == "ball2d" else 3

    def point_sources(self) -> PointSourceSet:
        if self.source is None:
            return default_sources(self.dim)
        *loc, re, im = self.source
        try:
            return PointSourceSet.single(loc, complex(re, im))
        except CloakLabError as exc:
            raise ConfigurationError(f"source: {exc}") from exc

    def eps_for(self, default) -> tuple:
        return self.eps_list if self.eps_list is not None else tuple(default)

    def mfs_config(self):
        if not self.mfs:
            return None
        overrides = dict(self.mfs)
        return lambda eps: mfs.MfsConfig.for_eps(eps, **overrides)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eps_list"] = list(self.eps_list) if self.eps_list is not None else None
        d["source"] = list(self.source) if self.source is not None else None
        return d

    def config_hash(self) -> str:
        d = {k: v for k, v in self.as_dict().items() if k not in UNHASHED}
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown configuration key(s): {sorted(unknown)}")
        return cls(**data).validate()


def parse_config_text(text: str) -> RunConfig:
    """Configuration from a JSON object; empty text gives all defaults."""
    if not text.strip():
        return RunConfig().validate()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"configuration is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a JSON object")
    return RunConfig.from_mapping(data)


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"not a comma-separated list of numbers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration keys (flags override it)")
    common.add_argument("--scheme", choices=ex.SCHEMES)
    common.add_argument("--k", type=float)
    common.add_argument("--eps-list", help="strictly decreasing, comma separated")
    common.add_argument("--source", help="x,y[,z],re,im")
    common.add_argument("--quad-level", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--grid-n", type=int, help="grid points per axis for materials")
    common.add_argument("--no-timing", action="store_true", help="write zero runtimes")
    common.add_argument("-v", "--verbose", action="store_true")
    for name in MFS_FIELDS:
        kind = float if name in ("proxy_scale_radial", "proxy_scale_axial", "tikhonov",
                                 "validation_oversample") else int
        common.add_argument(f"--mfs-{name.replace('_', '-')}", dest=f"mfs_{name}", type=kind)
    parser = argparse.ArgumentParser(prog="cloaklab", description="Cloaking visibility sweeps and audits")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def parse_config(argv=None) -> tuple[str, RunConfig, argparse.Namespace]:
    """Parse command-line flags into ``(subcommand, config, namespace)``."""
    args = build_parser().parse_args(argv)
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = parse_config_text(fh.read()).as_dict()
    flags = {"scheme": args.scheme, "k": args.k, "quad_level": args.quad_level, "out": args.out,
             "seed": args.seed, "threads": args.threads, "grid_n": args.grid_n}
    data.update({key: v for key, v in flags.items() if v is not None})
    if args.eps_list is not None:
        data["eps_list"] = _float_list(args.eps_list)
    if args.source is not None:
        data["source"] = _float_list(args.source)
    if args.no_timing:
        data["timing"] = False
    overrides = dict(data.get("mfs") or {})
    overrides.update({n: getattr(args, f"mfs_{n}") for n in MFS_FIELDS
                      if getattr(args, f"mfs_{n}") is not None})
    data["mfs"] = overrides
    return args.command, RunConfig.from_mapping(data), args


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------
def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    return obj


def write_report(cfg: RunConfig, name: str, body: dict) -> str:
    doc = {"format": cfg.format_version, "audit": name, "config_hash": cfg.config_hash(),
           "config": {k: v for k, v in cfg.as_dict().items() if k not in UNHASHED}}
    doc.update(body)
    path = os.path.join(cfg.out, f"audit-{name}.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_to_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_sweep_csv(cfg: RunConfig, result: ex.SweepResult) -> str:
    path = os.path.join(cfg.out, "sweep.csv")
    h = cfg.config_hash()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for p in result.points:
        runtime = p.runtime_s if cfg.timing else 0.0
        w.writerow([repr(p.eps), repr(float(p.visibility)), repr(float(p.certificate)), p.n_unknowns,
                    f"{runtime:.3f}", "|".join(p.flags), h])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_sweep(cfg: RunConfig) -> int:
    default = ex.DEFAULT_CYL_EPS if cfg.scheme == "cyl3d" else ex.DEFAULT_EPS
    try:
        result = ex.visibility_sweep(cfg.scheme, cfg.k, cfg.point_sources(), cfg.eps_for(default),
                                     cfg.quad_level, cfg.mfs_config(), threads=cfg.threads)
        failed = any(not p.certified for p in result.points)
    except CertificateError as exc:
        result, failed = exc.payload, True
        logger.error("%s", exc)
    write_sweep_csv(cfg, result)
    body = {"scheme": result.scheme, "k": result.k, "sources": result.sources,
            "rates": result.rates.as_dict() if result.rates else None,
            "claims": [result.rate_claim()], "notes": result.notes}
    if cfg.scheme == "ball3d" and len(result.points) >= 3:
        body["monopole_law_slope"] = ex.monopole_slope(cfg.k, result.eps)
    write_report(cfg, "rates", body)
    for p in result.points:
        logger.info("eps=%-8g visibility=%.6e certificate=%.2e %s", p.eps, p.visibility,
                    p.certificate, ",".join(p.flags))
    return EXIT_GATE if failed else EXIT_OK


def cmd_morawetz(cfg: RunConfig) -> int:
    claims = ex.morawetz_report(cfg.k, level=max(cfg.quad_level, 6))
    write_report(cfg, "morawetz", {"claims": claims})
    return EXIT_OK


def cmd_symmetry(cfg: RunConfig) -> int:
    eps = cfg.eps_for([0.1])[0]
    reports, status = [], EXIT_OK
    for mode in ex.DATA_MODES:
        try:
            reports.append(ex.symmetry_audit(eps, cfg.k, mode, config=mfs.MfsConfig.for_eps(eps, **cfg.mfs)))
        except CertificateError as exc:
            status = EXIT_GATE
            reports.append({"mode": mode, "error": str(exc)})
    write_report(cfg, "symmetry", {"reports": reports,
                                   "claims": [c for r in reports for c in r.get("claims", [])]})
    return status


def cmd_transform(cfg: RunConfig) -> int:
    eps = cfg.eps_for([0.1])[0]
    if eps >= 0.5:
        raise ConfigurationError("eps_list: the cylinder map needs eps < 1/2")
    claims = ex.transform_report(eps, cfg.k)
    write_report(cfg, "transform", {"eps": eps, "claims": claims})
    return EXIT_OK


def cmd_lowfreq(cfg: RunConfig) -> int:
    eps = cfg.eps_for([1e-1, 1e-2, 1e-3])
    write_report(cfg, "lowfreq", {"claims": ex.lowfreq_report(cfg.k, eps)})
    return EXIT_OK


def cmd_proof_split(cfg: RunConfig) -> int:
    eps_list = cfg.eps_for([0.2, 0.1, 0.05])
    rows, status = [], EXIT_OK
    for eps in eps_list:
        try:
            ps = ex.proof_split(eps, cfg.k, cfg.point_sources(),
                                mfs.MfsConfig.for_eps(eps, **cfg.mfs), cfg.quad_level)
        except CertificateError as exc:
            status = EXIT_GATE
            rows.append({"eps": eps, "error": str(exc)})
            continue
        rows.append(dataclasses.asdict(ps) | {"relative_sum_check": ps.relative_sum_check})
    ok = [r for r in rows if "error" not in r]
    ratios = [a["norm_w2"] / b["norm_w2"] for a, b in zip(ok, ok[1:]) if b["norm_w2"] > 0]
    if len(ratios) == 0:
        verdict = ex.INFO
    else:
        # O(eps) means halving eps shrinks the piece by at least about 2
        verdict = ex.CONFIRMED if min(ratios) >= 2.0 * (1 - ex.SLOPE_SLACK) else ex.REFUTED
    claims = [ex.claim("second data piece is O(eps): halving eps shrinks norm_w2 by at least 2",
                       "corollary bound on the data and its gradient", {"ratios": ratios}, 2.0,
                       verdict)]
    write_report(cfg, "proof-split", {"rows": rows, "claims": claims})
    return status


def cmd_stability(cfg: RunConfig) -> int:
    scheme = cfg.scheme if cfg.scheme in ("ball3d", "cyl3d") else "ball3d"
    default = ex.DEFAULT_CYL_EPS if scheme == "cyl3d" else ex.DEFAULT_EPS
    tab = ex.stability_audit(scheme, cfg.k, None, cfg.eps_for(default), cfg.quad_level, cfg.mfs_config(),
                             threads=cfg.threads)
    ratio = tab.max_min_ratio
    claim = ex.claim("annulus norm of the total field stays bounded as eps shrinks",
                     "uniform stability lemma", {"max_min_ratio": ratio}, "bounded",
                     ex.CONFIRMED if np.isfinite(ratio) and ratio <= 1.5 else ex.REFUTED)
    write_report(cfg, "stability", {"scheme": scheme, "eps": tab.eps, "norms": tab.norms,
                                    "certified": tab.certified, "free_norm": tab.free_norm,
                                    "claims": [claim]})
    return EXIT_OK if all(tab.certified) else EXIT_GATE


def cmd_materials(cfg: RunConfig) -> int:
    eps = cfg.eps_for([0.1])[0]
    cmap = ct.make_radial_map(eps, 3)
    g = np.linspace(-2.0, 2.0, cfg.grid_n)
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = grid[np.linalg.norm(grid, axis=1) <= 2.0]
    rec = ct.export_materials(cmap, grid, os.path.join(cfg.out, "materials.dat"), cfg.config_hash())
    logger.info("wrote %d material records (%d interface points skipped)", len(rec), rec.skipped_interface)
    return EXIT_OK


def cmd_selftest(cfg: RunConfig) -> int:
    """Quick closed-form checks; exit 0 when all pass."""
    from . import numkit as nk
    from .analytic_ball import BallGeom, sphere_flux_average

    checks = []

    def check(name, ok):
        checks.append((name, bool(ok)))

    r = nk.gauss_legendre(2, -1.0, 1.0)
    check("two-point Gauss nodes", np.allclose(np.abs(r.nodes), 1 / np.sqrt(3)) and np.allclose(r.weights, 1))
    check("sph_j0(pi) = 0", abs(nk.bessel("sph_j", 0, np.pi)) < 1e-15)
    check("|h0(2)| = 1/2", abs(abs(nk.bessel("sph_h1", 0, 2.0)) - 0.5) < 1e-15)
    check("P3(0.3)", abs(nk.legendre_p(3, 0.3) + 0.3825) < 1e-15)
    fit = nk.fit_rates([0.4, 0.2, 0.1], [0.4, 0.2, 0.1])
    check("fit y = eps", abs(fit.power_slope - 1) < 1e-12)
    ann = ex.Annulus()
    zero = ex.h1_annulus_norm(lambda x: ex.FieldSample(np.zeros(len(x), complex), np.zeros(x.shape, complex)), ann, 2)
    check("annulus norm of zero", zero == 0.0)
    one = ex.h1_annulus_at(lambda x: ex.FieldSample(np.ones(len(x), complex), np.zeros(x.shape, complex)), ann, 2)
    check("annulus volume", abs(one - np.sqrt(ann.volume)) < 1e-10 * one)
    geom = BallGeom(0.2, 3)
    check("sphere flux closed form", abs(sphere_flux_average(geom, 2.0, 1.0) - 4 * np.pi * (2j * 0.04 - 0.2)) < 1e-14)
    cmap = ct.make_radial_map(0.1, 3)
    y = np.array([0.3, -0.5, 1.2])
    check("radial map round trip", np.allclose(cmap.forward(cmap.inverse(y)), y, atol=1e-12))
    rep = ct.continuity_audit(ct.make_cylinder_map(0.1), 100)
    check("cylinder map lateral jump 0.375", abs(rep.probes[0]["axial_jump"] - 0.375) < 1e-12)
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_GATE


COMMANDS = {
    "sweep": cmd_sweep,
    "audit-morawetz": cmd_morawetz,
    "audit-symmetry": cmd_symmetry,
    "audit-transform": cmd_transform,
    "audit-lowfreq": cmd_lowfreq,
    "proof-split": cmd_proof_split,
    "stability": cmd_stability,
    "materials": cmd_materials,
    "selftest": cmd_selftest,
}


def run(command: str, cfg: RunConfig) -> int:
    """Dispatch a validated configuration; returns the exit code."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown subcommand {command!r}")
    os.makedirs(cfg.out, exist_ok=True)
    t0 = time.perf_counter()
    code = COMMANDS[command](cfg)
    logger.info("%s finished in %.1f s with exit code %d", command, time.perf_counter() - t0, code)
    return code


def main(argv=None) -> int:
    try:
        command, cfg, args = parse_config(argv)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(command, cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CertificateError, AccuracyError) as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
