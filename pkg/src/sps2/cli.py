"""Command-line front end: system-spec files, pipelines, reports and CSV.

``sps2 <command> <spec.json> [--eps-order K] [--x-order N] [--step H]
[--eps LIST] [--out DIR] [--csv PATH]`` with commands ``normal-form``,
``triangularize``, ``levelt`` and ``verify``.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .borel_laplace import DEFAULT_BOREL_ORDER, DEFAULT_STEP, DEFAULT_XI_MAX, default_eps_samples
from .errors import ParseError, Sps2Error, StructuralError
from .matrix_system import SystemSpec
from .series_core import ArcSpec, fit_gevrey

log = logging.getLogger("sps2")

COMMANDS = ("normal-form", "triangularize", "levelt", "verify")
ENTRIES = ("a11", "a12", "a21", "a22")
MIN_TRUNC = 4
NORMAL_FORM_ORDER = 12
NORMAL_FORM_TOL = 1e-9
DEFAULT_X_ORDER = 31

CONVENTIONS = {
    "system": "eps x psi' + A(x, eps) psi = 0",
    "gauge_action": "phi = G psi, A' = G A G^-1 - eps x G' G^-1",
    "direction_ordering": "Re(exp(-i theta) (m1 - m2)) < 0 on the arc",
    "diagonal_factor": "eps x g_ii' = v_ii g_ii, g_ii(x*) = 1, x* = working radius",
    "levelt_exponent_sign": "|psi_i| ~ |x|^(-Re(nu_i/eps)); psi_1 is subdominant at x = 0",
    "coupling_normalisation": "ghat = u / (eps x E), E = exp(-int_0^x mu12/eps)",
    "gevrey_fit": "(C, M) is a strong bound on the stored truncation only",
}

_QUAD = {"type": "array", "minItems": 4, "maxItems": 4,
         "prefixItems": [{"type": "integer", "minimum": 0}, {"type": "integer", "minimum": 0},
                         {"type": "number"}, {"type": "number"}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["arc", "disc_radius", "sector_radius", "trunc", "matrix"],
    "additionalProperties": False,
    "properties": {
        "arc": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "disc_radius": {"type": "number", "exclusiveMinimum": 0},
        "sector_radius": {"type": "number", "exclusiveMinimum": 0},
        "trunc": {"type": "object", "required": ["eps", "x"], "additionalProperties": False,
                  "properties": {"eps": {"type": "integer", "minimum": 0},
                                 "x": {"type": "integer", "minimum": 0}}},
        "matrix": {"type": "object", "required": list(ENTRIES), "additionalProperties": False,
                   "properties": {k: {"type": "array", "items": _QUAD} for k in ENTRIES}},
    },
}


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def parse_system(text: str) -> SystemSpec:
    """Parse the JSON text of a system-spec file."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
                         line=e.lineno) from None
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ParseError(e.message, _pointer(e.absolute_path))
    K, N = doc["trunc"]["eps"], doc["trunc"]["x"]
    t0, t1 = doc["arc"]
    if not t0 <= t1:
        raise ParseError("arc must satisfy theta_minus <= theta_plus", "/arc")
    arr = np.zeros((2, 2, K + 1, N + 1), complex)
    for idx, name in enumerate(ENTRIES):
        seen = set()
        for j, (k, n, re, im) in enumerate(doc["matrix"][name]):
            ptr = f"/matrix/{name}/{j}"
            if k > K or n > N:
                raise ParseError(f"term eps^{k} x^{n} exceeds the truncation ({K}, {N})", ptr,
                                 entry=name)
            if (k, n) in seen:
                raise ParseError(f"duplicate term eps^{k} x^{n}", ptr, entry=name)
            seen.add((k, n))
            arr[idx // 2, idx % 2, k, n] = complex(re, im)
    try:
        return SystemSpec.from_array(arr, ArcSpec(float(t0), float(t1)),
                                     float(doc["disc_radius"]), float(doc["sector_radius"]))
    except StructuralError as e:
        raise ParseError(str(e), "/matrix") from None


def load_system(path) -> SystemSpec:
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"no such file: {p}")
    return parse_system(p.read_text())


def dump_system(spec: SystemSpec) -> str:
    """Canonical text: sorted keys, one term per line, nonzero terms ordered by ``(k, n)``."""
    arr = spec.array
    lines = ["{",
             f'  "arc": [{_num(spec.arc.theta_minus)}, {_num(spec.arc.theta_plus)}],',
             f'  "disc_radius": {_num(spec.disc_radius)},',
             '  "matrix": {']
    for idx, name in enumerate(ENTRIES):
        c = arr[idx // 2, idx % 2]
        terms = [f"      [{k}, {n}, {_num(c[k, n].real)}, {_num(c[k, n].imag)}]"
                 for k in range(c.shape[0]) for n in range(c.shape[1]) if c[k, n] != 0]
        tail = "," if idx < 3 else ""
        if terms:
            lines.append(f'    "{name}": [')
            lines.append(",\n".join(terms))
            lines.append(f"    ]{tail}")
        else:
            lines.append(f'    "{name}": []{tail}')
    lines += ["  },",
              f'  "sector_radius": {_num(spec.sector_radius)},',
              f'  "trunc": {{"eps": {spec.K}, "x": {spec.N}}}',
              "}"]
    return "\n".join(lines) + "\n"


def _num(v):
    v = float(v)
    return json.dumps(0.0 if v == 0 else v)


def save_system(spec: SystemSpec, path):
    Path(path).write_text(dump_system(spec))


# ---------------------------------------------------------------------------
# configuration and pipelines
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """One pipeline run. ``eps_order`` is the formal order for ``normal-form``
    and the Borel order for the resummation commands."""

    command: str
    input: str | None = None
    eps_order: int | None = None
    x_order: int = DEFAULT_X_ORDER
    step: float = DEFAULT_STEP
    xi_max: float = DEFAULT_XI_MAX
    z_max: float | None = None
    eps: list = field(default_factory=list)
    out: str = "."
    csv: str | None = None
    log_level: str = "WARNING"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise StructuralError(f"unknown command {self.command!r}")
        if self.command != "verify" and self.input is None:
            raise StructuralError("this command needs a system-spec file")
        if self.eps_order is None:
            self.eps_order = NORMAL_FORM_ORDER if self.command == "normal-form" \
                else DEFAULT_BOREL_ORDER
        if self.z_max is None:
            self.z_max = self.xi_max
        if min(self.eps_order, self.x_order) < MIN_TRUNC:
            raise StructuralError(f"truncations must be >= {MIN_TRUNC}")
        if not self.step > 0:
            raise StructuralError("step must be positive")
        for name in ("xi_max", "z_max"):
            q = getattr(self, name) / self.step
            if abs(q - round(q)) > 1e-9 * max(1.0, q) or round(q) < 1:
                raise StructuralError(f"step must divide {name}")
        # the strip grid is a triangle z + r <= xi_max
        if not math.isclose(self.z_max, self.xi_max):
            raise StructuralError("z_max must equal xi_max on the triangular strip grid")

    @property
    def lines(self):
        return self.x_order + 1


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def _eps_samples(cfg: RunConfig, spec: SystemSpec):
    if cfg.eps:
        return np.asarray(cfg.eps, complex)
    return default_eps_samples(spec.arc)


def _stage_normal_form(cfg, spec, report):
    from .formal_solver import formal_normal_form
    nf = formal_normal_form(spec, cfg.eps_order)
    rel = float(np.max(nf.relative_residual))
    fits = {name: fit_gevrey(g) for name, g in (("g12", nf.g12), ("g21", nf.g21))}
    sd = nf.spectral
    report["normal_form"] = {
        "eps_order": nf.K,
        "relative_residual": rel,
        "m1": sd.m1, "m2": sd.m2,
        "gevrey": {k: {"C": f[0], "M": f[1]} for k, f in fits.items()},
    }
    return rel <= NORMAL_FORM_TOL, []


def _resum_kw(cfg):
    return dict(lines=cfg.lines, borel_order=cfg.eps_order, step=cfg.step, xi_max=cfg.xi_max)


def _stage_triangularize(cfg, spec, report):
    from .levelt import TRIANGULAR_TOL, triangularise
    G, T = triangularise(spec, _eps_samples(cfg, spec), check=False, **_resum_kw(cfg))
    u0 = float(np.max(np.abs(T.u[:, 0])))
    report["triangularize"] = {
        "eps": T.eps, "radius": T.radius, "gauge_residual": G.residual,
        "u_at_zero": u0, "max_abs_u": np.max(np.abs(T.u), axis=1),
        "nu": T.nu, "riccati_residual": T.info["riccati"].residual,
    }
    return G.residual <= TRIANGULAR_TOL and u0 <= 1e-9, []


def _stage_levelt(cfg, spec, report):
    from .levelt import FRAME_TOL, X0_ANGLE_TOL, growth_rays, levelt_filtration
    frame = levelt_filtration(spec, _eps_samples(cfg, spec), check=False, **_resum_kw(cfg))
    ch = frame.checks
    T = frame.triangular
    report["levelt"] = {
        "eps": T.eps, "radius": T.radius,
        "checks": ch,
        "resonant_eps": frame.resonant_eps,
        "couplings": [{"eps": c.eps, "route": c.route, "resonant": c.resonant,
                       "log_order": c.log_order, "log_coeff": c.log_coeff,
                       "max_abs": float(np.max(np.abs(c(growth_rays(T.radius, (1e-4, 0.9))))))}
                      for c in frame.c12],
    }
    ordered = all(s1 > s2 for s1, s2 in ch["exponents"])
    ok = (ch["frame_residual"] <= FRAME_TOL and ch["x0"] <= X0_ANGLE_TOL and
          ch["triangular_residual"] <= 1e-5 and ordered)
    rows = []
    x = growth_rays(T.radius)
    for q, e in enumerate(T.eps):
        n1, n2 = frame.psi_log_norms(x, e)
        s1, s2 = ch["exponents"][q]
        c = np.abs(frame.c12[q](x))
        for k in range(len(x)):
            rows.append([abs(x[k]), _fmt_eps(e), math.exp(n1[k]), math.exp(n2[k]),
                         f"{s1:.12g};{s2:.12g}", c[k]])
    return ok, rows


def _stage_verify(cfg, spec, report):
    from .verify import appendix_estimates_suite, linearity_check, rearrangement_suite
    app = appendix_estimates_suite()
    rand = rearrangement_suite(8)
    model = rearrangement_suite(1, "model")
    zero = rearrangement_suite(4, "zero")
    suites = {
        "estimates": {"passed": app["passed"], "checks": app["checks"],
                      "failures": app["failures"]},
        "convolution_identity": {"passed": app["beta_exact"] and app["germ_rule_exact"]},
        "rearrangement": {"passed": rand["monotone_after_3"] and model["residuals"][0] <= 1e-8
                          and zero["zero"],
                          "random": rand["residuals"], "model": model["residuals"]},
    }
    if spec is not None:
        eps = [e for e in _eps_samples(cfg, spec) if abs(e) >= 1e-3]
        r = spec.disc_radius
        gaps = [linearity_check(spec, e, 0.5 * r, 1e-3 * r) for e in eps]
        suites["linearity"] = {"passed": max(gaps, default=0.0) <= 1e-8, "gaps": gaps}
    report["verify"] = suites
    return all(s["passed"] for s in suites.values()), []


def _fmt_eps(e):
    e = complex(e)
    return f"{e.real:.12g}" if e.imag == 0 else f"{e.real:.12g}{e.imag:+.12g}j"


STAGES = {"normal-form": _stage_normal_form, "triangularize": _stage_triangularize,
          "levelt": _stage_levelt, "verify": _stage_verify}
CSV_HEADER = ["x", "eps", "|psi1|", "|psi2|", "fitted_exponents", "|c12|"]


def run_pipeline(cfg: RunConfig, timestamp=None):
    """Run one command and write ``report.json`` (and the CSV) under ``cfg.out``.

    Returns ``(exit_code, report)``. The report is deterministic apart from the
    ``timestamp`` field.
    """
    report = {"command": cfg.command, "config": asdict(cfg), "conventions": CONVENTIONS,
              "timestamp": timestamp or datetime.datetime.now(datetime.timezone.utc).isoformat()}
    code, rows = 0, []
    stage = "load"
    try:
        spec = load_system(cfg.input) if cfg.input is not None else None
        if spec is not None:
            report["system"] = {"K": spec.K, "N": spec.N, "arc": [spec.arc.theta_minus,
                                spec.arc.theta_plus], "disc_radius": spec.disc_radius,
                                "sector_radius": spec.sector_radius}
        stage = cfg.command
        ok, rows = STAGES[cfg.command](cfg, spec, report)
        report["status"] = "ok" if ok else "validation_failed"
        code = 0 if ok else 1
    except Sps2Error as e:
        tag = e.stage or e.info.get("stage") or stage
        print(f"sps2 [{tag}] {type(e).__name__}: {e}", file=sys.stderr)
        report["status"] = "error"
        report["error"] = {"stage": tag, "type": type(e).__name__, "message": str(e),
                           "info": {k: repr(v) for k, v in sorted(e.info.items())}}
        code = e.exit_code
    report["exit_code"] = code
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True)
                                     + "\n")
    if cfg.csv and rows:
        with open(cfg.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            w.writerows(rows)
    return code, report


def _limit_threads():
    n = os.environ.get("SPS2_THREADS")
    if not n:
        return None
    try:
        n = max(1, int(n))
    except ValueError:
        raise StructuralError("SPS2_THREADS must be an integer") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _eps_list(text):
    try:
        return [complex(t.strip().replace(" ", "")) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from None


def build_parser():
    ap = argparse.ArgumentParser(prog="sps2", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("spec", nargs="?", help="system-spec JSON (optional for verify)")
    ap.add_argument("--eps-order", type=int, default=None)
    ap.add_argument("--x-order", type=int, default=DEFAULT_X_ORDER)
    ap.add_argument("--step", type=float, default=DEFAULT_STEP)
    ap.add_argument("--xi-max", type=float, default=DEFAULT_XI_MAX)
    ap.add_argument("--eps", type=_eps_list, default=[], help="comma-separated, e.g. 0.1,0.05")
    ap.add_argument("--out", default=".")
    ap.add_argument("--csv", default=None)
    ap.add_argument("--log-level", default="WARNING")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    try:
        cfg = RunConfig(args.command, args.spec, args.eps_order, args.x_order, args.step,
                        args.xi_max, None, args.eps, args.out, args.csv, args.log_level)
        limiter = _limit_threads()
    except Sps2Error as e:
        print(f"sps2 [config] {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    try:
        code, _ = run_pipeline(cfg)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return code


if __name__ == "__main__":
    sys.exit(main())
