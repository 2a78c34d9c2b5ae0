"""Command line interface: ``anisotv denoise|audit|refine-study|cone-check``.

Exit codes: 0 success, 2 unreadable input or config, 3 solver did not
converge, 4 a sampled check was violated, 5 an invariant was violated.
Files written by a command that fails are removed again, except for complete
reports documenting a violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from anisotv.conegeom import DivergenceBox, VertexPolytope, special_cone_check
from anisotv.errors import (
    AnisoTVError,
    AuditFailure,
    ConvergenceError,
    InfeasibleCertificateError,
    InvariantError,
    MembershipError,
    ParseError,
    ShapeError,
)
from anisotv.graph import total_variation
from anisotv.grid import PcrFunction
from anisotv.io import RunConfig, load_config, load_dataset, output_suffix, save_dataset
from anisotv.minimality import (
    convex_catalog,
    lp_norms_report,
    minimality_audit,
    pcr_minimality_audit,
    refinement_study,
)
from anisotv.rof import solve_rof

EXIT_OK, EXIT_PARSE, EXIT_CONVERGENCE, EXIT_AUDIT, EXIT_INVARIANT = 0, 2, 3, 4, 5
LP_LIST = (1.0, 1.5, 2.0, 3.0, 4.0, float("inf"))

logger = logging.getLogger("anisotv")


class Artifacts:
    """Collects output files so a failing command can take them back."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.paths = []

    def path(self, name) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.paths.append(p)
        return p

    def write_text(self, name, text):
        target = self.path(name)
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, target)
        return target

    def write_json(self, name, obj):
        return self.write_text(name, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def remove(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.paths.clear()


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, infinities to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _probes(cfg):
    catalog = convex_catalog()
    if not cfg.probes:
        return catalog
    by_name = {p.name: p for p in catalog}
    missing = [n for n in cfg.probes if n not in by_name]
    if missing:
        raise ParseError(f"unknown probes {missing}; available: {sorted(by_name)}")
    return [by_name[n] for n in cfg.probes]


def _lp_rows(rows):
    return [{"p": p, "norm_u": nu, "norm_f": nf} for p, nu, nf in rows]


def cmd_denoise(cfg, ds, art, name):
    g = ds.solver_graph
    sol = solve_rof(g, ds.values, cfg.alpha, cfg.tol, cfg.max_iter)
    out = art.path(f"{name}_denoised{output_suffix(ds, cfg.quantize)}")
    extra = save_dataset(out, ds, sol.u, quantize=cfg.quantize)
    art.paths.extend(p for p in extra if p not in art.paths)
    art.write_json(f"{name}_denoised.json", {
        "input": name,
        "kind": ds.kind,
        "alpha": cfg.alpha,
        "tol": cfg.tol,
        "gap": sol.gap,
        "relative_gap": sol.relative_gap(),
        "iterations": sol.iterations,
        "primal": sol.primal,
        "tv": total_variation(g, sol.u),
        "lp_norms": _lp_rows(lp_norms_report(g, ds.values, cfg.alpha, LP_LIST, solution=sol)),
        "output": out.name,
    })
    return EXIT_OK


def cmd_audit(cfg, ds, art, name):
    probes = _probes(cfg)
    if cfg.alpha <= 0:
        raise ParseError("audit needs alpha > 0")
    kw = dict(n_samples=cfg.n_samples, seed=cfg.seed, tol=cfg.audit_tol, probes=probes,
              solver_tol=cfg.tol, raise_on_failure=False)
    if ds.grid is not None:
        report = pcr_minimality_audit(ds.grid, PcrFunction(ds.grid, ds.values), cfg.alpha, **kw)
    else:
        report = minimality_audit(ds.solver_graph, ds.values, cfg.alpha, **kw)
    report.extra["input"] = name
    art.write_text(f"{name}_audit.json", report.to_json() + "\n")
    art.write_text(f"{name}_audit.csv", report.to_csv())
    if not report.passed:
        bad = report.failures()[0]
        raise AuditFailure(report, bad.to_dict())
    return EXIT_OK


def cmd_refine(cfg, ds, art, name):
    if ds.grid is None:
        raise ParseError("refine-study needs grid data (signal, image, tensor or PCR)")
    study = refinement_study(ds.grid, PcrFunction(ds.grid, ds.values), cfg.alpha, cfg.tol,
                             max_iter=cfg.max_iter)
    art.write_json(f"{name}_refine.json", dict(study.to_dict(), input=name, alpha=cfg.alpha))
    lines = ["m,cells,diagonal,norm_level,norm_averaged,norm_data"]
    for r in study.rows:
        lines.append(",".join(repr(float(r[k])) if k not in ("m", "cells") else str(r[k])
                              for k in ("m", "cells", "diagonal", "norm_level",
                                        "norm_averaged", "norm_data")))
    art.write_text(f"{name}_refine.csv", "\n".join(lines) + "\n")
    if not study.passed:
        raise InvariantError("refinement inequalities or nested consistency violated")
    return EXIT_OK


def cmd_cone(cfg, ds, art, name):
    if ds.kind == "polytope":
        M = VertexPolytope(ds.values)
    elif ds.kind == "graph" or ds.graph is not None:
        if cfg.alpha <= 0:
            raise ParseError("cone-check on a graph needs alpha > 0")
        M = DivergenceBox(ds.graph, cfg.alpha)
    elif ds.grid is not None:
        if cfg.alpha <= 0:
            raise ParseError("cone-check on a grid needs alpha > 0")
        M = DivergenceBox(ds.grid.graph, cfg.alpha)
    else:
        raise ParseError(f"cone-check cannot use a {ds.kind} dataset")
    rng = np.random.default_rng(cfg.seed)
    points = M.sample(rng, cfg.n_points)
    verdicts = []
    for i, x in enumerate(points):
        res = special_cone_check(M, x)
        verdicts.append({"point": i, "x": x, "holds": res.holds,
                         "directions": [list(p) for p in res.directions],
                         "candidates": res.n_candidates, "exhaustive": res.exhaustive})
    all_hold = all(v["holds"] for v in verdicts)
    art.write_json(f"{name}_cone.json", {"input": name, "set": type(M).__name__,
                                         "seed": cfg.seed, "all_hold": all_hold,
                                         "points": verdicts})
    if not all_hold:
        bad = next(v for v in verdicts if not v["holds"])
        raise AuditFailure(None, {"point": bad["point"], "x": [float(v) for v in bad["x"]]})
    return EXIT_OK


COMMANDS = {"denoise": cmd_denoise, "audit": cmd_audit, "refine-study": cmd_refine,
            "cone-check": cmd_cone}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("input", help="data file")
    common.add_argument("--alpha", type=float, help="regularization weight (default 0.1)")
    common.add_argument("--tol", type=float, help="relative duality gap target (default 1e-9)")
    common.add_argument("--seed", type=int, help="seed for sampling (default 0)")
    common.add_argument("--config", help="key = value file; flags take precedence")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--samples", dest="n_samples", type=int, help="audit competitors")
    common.add_argument("--points", dest="n_points", type=int, help="cone-check points")
    common.add_argument("--audit-tol", dest="audit_tol", type=float)
    common.add_argument("--probes", help="comma separated probe names")
    common.add_argument("--format", help="input format if the extension does not tell")
    common.add_argument("--quantize", action="store_const", const=True,
                        help="write PGM output, clamped and rounded")
    common.add_argument("--normalize", action="store_const", const=True,
                        help="divide PGM pixels by maxval")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="anisotv",
                                     description="Anisotropic TV denoising and its checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("alpha", "tol", "seed", "out", "max_iter",
                                                "n_samples", "n_points", "audit_tol",
                                                "probes", "format", "quantize", "normalize")}
    art = None
    try:
        try:
            cfg = load_config(args.config) if args.config else RunConfig()
            cfg = cfg.merged(overrides)
        except (ValueError, FileNotFoundError) as exc:
            raise ParseError(str(exc)) from exc
        ds = load_dataset(args.input, cfg.format, cfg.normalize)
        art = Artifacts(cfg.out)
        name = Path(args.input).stem
        return COMMANDS[args.command](cfg, ds, art, name)
    except ParseError as exc:
        code, keep = EXIT_PARSE, False
        msg = exc
    except ConvergenceError as exc:
        code, keep = EXIT_CONVERGENCE, False
        msg = exc
    except AuditFailure as exc:
        code, keep = EXIT_AUDIT, True
        msg = exc
    except (InvariantError, InfeasibleCertificateError, MembershipError, ShapeError,
            AnisoTVError) as exc:
        code, keep = EXIT_INVARIANT, False
        msg = exc
    if art is not None and not keep:
        art.remove()
    print(f"anisotv: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
