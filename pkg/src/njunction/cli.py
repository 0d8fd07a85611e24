"""Command-line front end: run configs, sweeps over R, persistence and SVG rendering."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, connect1d, disk2d, fiber
from .errors import ConfigError, FormatError, NJError
from .potential import Potential, estimate_constants

SOLVER_DEFAULTS = {"tol": 1e-6, "max_iter": 20000, "init": "test"}
HETERO_DEFAULTS = {"L": None, "n": 4000, "tol": 1e-9}
ANALYSIS_KEYS = {"delta", "alpha", "alpha_prime", "r_delta", "c1", "c_tilde", "C_ring", "r_ring",
                 "beta", "sample_count", "l"}


# ---------------------------------------------------------------- config


def parse_json_bytes(data: bytes, what: str = "document"):
    """json.loads with failures reported as FormatError at a byte offset."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{what} is not valid UTF-8", offset=e.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{what}: {e.msg}", offset=len(text[:e.pos].encode("utf-8"))) from None


@dataclass
class RunConfig:
    potential: dict
    grid: dict
    solver: dict
    analysis: dict
    hetero: dict
    fiber: dict
    sweep: dict
    output: Path
    base: Path = field(default=Path("."))

    @property
    def R_list(self) -> list:
        return list(self.sweep.get("R_list", [self.grid.get("R", 40)]))

    def make_potential(self) -> Potential:
        try:
            return Potential.from_dict(self.potential)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"potential block: {e}") from None

    def init_path(self) -> Path | None:
        init = self.solver["init"]
        return self.base / init[5:] if init.startswith("file:") else None


def _block(raw, name, defaults=None):
    blk = raw.get(name, {})
    if not isinstance(blk, dict):
        raise ConfigError(f"'{name}' must be an object")
    return {**(defaults or {}), **blk}


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    raw = parse_json_bytes(data, f"config {path.name}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    base = path.parent
    cfg = RunConfig(
        potential=_block(raw, "potential"),
        grid=_block(raw, "grid", {"R": 40, "n_r": 256, "n_theta": 192}),
        solver=_block(raw, "solver", SOLVER_DEFAULTS),
        analysis=_block(raw, "analysis"),
        hetero=_block(raw, "hetero", HETERO_DEFAULTS),
        fiber=_block(raw, "fiber"),
        sweep=_block(raw, "sweep"),
        output=base / raw.get("output", "out"),
        base=base,
    )
    unknown = set(cfg.analysis) - ANALYSIS_KEYS
    if unknown:
        raise ConfigError(f"unknown analysis keys: {sorted(unknown)}")
    a = cfg.analysis
    alpha, alpha_p = a.get("alpha", 0.25), a.get("alpha_prime", 0.25)
    if not 2 * alpha + alpha_p < 1:
        raise ConfigError(f"need 2*alpha + alpha_prime < 1 (got {2 * alpha + alpha_p:g})")
    for k in ("R", "n_r", "n_theta"):
        if not (isinstance(cfg.grid[k], (int, float)) and cfg.grid[k] > 0):
            raise ConfigError(f"grid.{k} must be positive")
    if any(not (isinstance(R, (int, float)) and R > 0) for R in cfg.R_list):
        raise ConfigError("sweep.R_list entries must be positive numbers")
    init = cfg.solver["init"]
    if init not in ("test", "zero") and not str(init).startswith("file:"):
        raise ConfigError(f"solver.init must be test, zero or file:PATH (got {init!r})")
    ip = cfg.init_path()
    if ip is not None and not ip.is_file():
        raise ConfigError(f"init file not found: {ip}")
    cfg.make_potential()
    return cfg


# ---------------------------------------------------------------- stages


def solve_profile(cfg: RunConfig, p: Potential):
    k = estimate_constants(p)
    h = cfg.hetero
    L = h["L"] if h["L"] is not None else max(20.0, 27.0 / k.c_W)
    return connect1d.solve_heteroclinic(p, L=L, n=int(h["n"]), tol=h["tol"], constants=k)


def make_params(cfg: RunConfig, profile):
    a = cfg.analysis
    delta = a.get("delta")
    if delta == "delta_W":
        delta = profile.constants.delta_W
    return fiber.make_params(profile, delta=delta, alpha=a.get("alpha", 0.25),
                             alpha_prime=a.get("alpha_prime", 0.25), r_delta=a.get("r_delta"))


def write_profile(profile, out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "u1", "u2"])
        for s, u in zip(profile.s, profile.u):
            w.writerow([repr(float(s)), repr(float(u[0])), repr(float(u[1])) if len(u) > 1 else ""])
    side = {"sigma": profile.sigma, "residual": profile.el_residual,
            "equipartition": profile.equipartition, "tail_rate": profile.tail_rate}
    out.with_suffix(".json").write_text(json.dumps(side, indent=2) + "\n")


def parse_radii(text: str) -> list:
    """'a:b:s' (inclusive) or a comma list."""
    if ":" in text:
        try:
            lo, hi, st = (float(x) for x in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad radii range {text!r}") from None
        if st <= 0 or hi < lo:
            raise ConfigError(f"bad radii range {text!r}")
        return [float(x) for x in np.arange(lo, hi + 0.5 * st, st)]
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad radii list {text!r}") from None


def default_radii(profile) -> list:
    rb = connect1d.r_bar(profile, profile.potential.h * profile.potential.N)
    base = math.ceil(rb)
    return [float(base + k) for k in (1, 2, 4, 8)]


def fiber_rows(p, profile, params, radii):
    rows = []
    ref = p.h * p.N * profile.sigma
    for r in radii:
        v = fiber.minimize_fiber(p, r, profile=profile)
        c = fiber.classify_fiber(v, params)
        rows.append([r, v.energy, ref - v.energy, c.tag,
                     "" if c.theta_r is None else c.theta_r,
                     "" if c.s_transition is None else c.s_transition])
    return rows


def write_fibers(rows, out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "J_r", "gap", "class", "theta_r", "s_transition"])
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def initial_field(cfg: RunConfig, p, profile, grid, init: str | None = None):
    init = init or cfg.solver["init"]
    if init == "test":
        return disk2d.build_test_function(p, profile, grid)
    if init == "zero":
        return disk2d.zero_field(p, grid)
    if init.startswith("file:"):
        path = Path(init[5:])
        f = disk2d.read_field(path if path.is_absolute() else cfg.base / path, p)
        if f.grid != grid:
            raise ConfigError("init field grid does not match the requested grid")
        return f
    raise ConfigError(f"unknown init {init!r}")


def solve_disk(cfg, p, profile, R, init=None):
    g = cfg.grid
    grid = disk2d.PolarGrid(float(R), int(g["n_r"]), int(g["n_theta"]), p.N, p.h)
    f0 = initial_field(cfg, p, profile, grid, init)
    return disk2d.minimize_disk(p, grid, f0, tol=cfg.solver["tol"], max_iter=int(cfg.solver["max_iter"]),
                                C_W=profile.constants.C_W)


def run_analysis(cfg, f, profile, params, total):
    a = cfg.analysis
    return analysis.analyze(
        f, params, connect1d.tail_rate(profile), total=total, constants=profile.constants,
        c1=a.get("c1"), c_tilde=a.get("c_tilde"), C_ring=a.get("C_ring"), r_ring=a.get("r_ring"),
        beta=a.get("beta", 0.5), sample_count=int(a.get("sample_count", 200)), l=a.get("l"))


def write_analysis(res, out_dir: Path, report_name="report.json"):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / report_name).write_text(json.dumps(res.report, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "theta_map.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "theta", "width"])
        tm = res.theta
        for r, t, s in zip(tm.r, tm.theta, tm.width):
            w.writerow([repr(float(r)), repr(float(t)), repr(float(s))])
    (out_dir / "interface.json").write_text(json.dumps(res.interface_dict(), indent=2) + "\n")


def _fail_code(errors) -> int:
    return max((e["exit_code"] for e in errors), default=0)


# ---------------------------------------------------------------- rendering

PALETTE = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"]


def _fmt(x: float) -> str:
    s = f"{x:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _wedge_path(r0, r1, t0, t1) -> str:
    pts = [(r0, t0), (r1, t0), (r1, t1), (r0, t1)]
    large = 1 if t1 - t0 > math.pi else 0
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = [(r * math.cos(t), -r * math.sin(t)) for r, t in pts]
    if r0 <= 0:
        return (f"M0 0L{_fmt(x1)} {_fmt(y1)}A{_fmt(r1)} {_fmt(r1)} 0 {large} 0 {_fmt(x2)} {_fmt(y2)}Z")
    return (f"M{_fmt(x0)} {_fmt(y0)}L{_fmt(x1)} {_fmt(y1)}A{_fmt(r1)} {_fmt(r1)} 0 {large} 0 {_fmt(x2)} {_fmt(y2)}"
            f"L{_fmt(x3)} {_fmt(y3)}A{_fmt(r0)} {_fmt(r0)} 0 {large} 1 {_fmt(x0)} {_fmt(y0)}Z")


def _svg(size: float, body: list) -> str:
    m = 1.05 * size
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(-m)} {_fmt(-m)} {_fmt(2 * m)} {_fmt(2 * m)}" '
            f'width="600" height="600">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def render_field_svg(f: disk2d.EquivariantField, level: float) -> str:
    """Full disk colored by nearest well, with the |u - a_j| = level contour."""
    from skimage.measure import find_contours

    p, g = f.potential, f.grid
    r, th, u = f.full_disk()
    dist = np.linalg.norm(u[..., None, :] - p.wells[None, None], axis=-1)
    idx = np.argmin(dist, axis=-1)
    edges = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [g.R]])
    dth = g.dtheta
    body = []
    if np.all(idx == idx.flat[0]):
        c = PALETTE[int(idx.flat[0]) % len(PALETTE)]
        body.append(f'<circle cx="0" cy="0" r="{_fmt(g.R)}" fill="{c}" stroke="none"/>')
    else:
        for i in range(len(r)):
            row = idx[i]
            # runs of equal color, with the seam run merged around 2 pi
            cuts = np.nonzero(row != np.roll(row, 1))[0]
            for s, e in zip(cuts, np.roll(cuts, -1)):
                e = e if e > s else e + len(row)
                t0, t1 = (s - 0.5) * dth, (e - 0.5) * dth
                c = PALETTE[int(row[s]) % len(PALETTE)]
                body.append(f'<path d="{_wedge_path(edges[i], edges[i + 1], t0, t1)}" fill="{c}" stroke="none"/>')
    # contour of the distance to the nearest well, periodic in theta
    dmin = dist.min(axis=-1)
    vals = np.concatenate([dmin, dmin[:, :1]], axis=1)
    if vals.min() < level < vals.max():
        for cont in find_contours(vals, level):
            ri = np.interp(cont[:, 0], np.arange(len(r)), r)
            ti = cont[:, 1] * dth
            pts = " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in zip(ri * np.cos(ti), ri * np.sin(ti)))
            body.append(f'<polyline points="{pts}" fill="none" stroke="#000" stroke-width="{_fmt(g.R / 300)}"/>')
    return _svg(g.R, body)


def render_interface_svg(ig: dict) -> str:
    """Cells, marker points and the spine polyline of an interface description."""
    if not ig or "r" not in ig:
        raise FormatError("interface description has no schedule", offset=0)
    r = np.asarray(ig["r"], float)
    pm, pp = np.asarray(ig["p_minus"], float), np.asarray(ig["p_plus"], float)
    qm, qp = np.asarray(ig["q_minus"], float), np.asarray(ig["q_plus"], float)
    size = float(r.max())
    lw = _fmt(size / 400)

    def ang(pt):
        return math.atan2(pt[1], pt[0])

    body = []
    for j in range(len(r) - 1):
        a0, a1 = ang(pm[j]), ang(pp[j])
        a1 = a0 + (a1 - a0) % (2 * math.pi)
        b0, b1 = ang(qp[j]), ang(qm[j])
        b1 = b0 - (b0 - b1) % (2 * math.pi)
        inner = [(r[j] * math.cos(t), r[j] * math.sin(t)) for t in np.linspace(a0, a1, 16)]
        outer = [(r[j + 1] * math.cos(t), r[j + 1] * math.sin(t)) for t in np.linspace(b0, b1, 16)]
        pts = " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in inner + outer)
        body.append(f'<polygon points="{pts}" fill="#cfe0f3" stroke="#4c72b0" stroke-width="{lw}"/>')
    for name, arr, col in (("p", pm, "#c44e52"), ("p", pp, "#c44e52"), ("q", qm, "#55a868"), ("q", qp, "#55a868")):
        for x, y in arr:
            body.append(f'<circle class="{name}" cx="{_fmt(x)}" cy="{_fmt(-y)}" r="{_fmt(size / 150)}" fill="{col}"/>')
    gam = ig.get("gamma")
    if gam:
        pts = " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in gam["vertices"])
        body.append(f'<polyline points="{pts}" fill="none" stroke="#000" stroke-width="{_fmt(size / 200)}"/>')
    return _svg(size, body)


def contour_level(p: Potential, analysis_block: dict | None = None) -> float:
    """c delta^alpha from the certified constants (no heteroclinic solve needed)."""
    a = analysis_block or {}
    k = estimate_constants(p)
    delta = a.get("delta")
    if delta is None:
        delta = min(0.05 * p.well_radius, k.delta_W / 4)
    elif delta == "delta_W":
        delta = k.delta_W
    c = 1 + 1 / (k.c_W * p.N) + k.C_W / k.c_W
    return c * float(delta) ** a.get("alpha", 0.25)


def potential_from_header(hd: dict) -> Potential:
    if hd["m"] == 1:
        return Potential("scalar-bistable", N=2, m=1, h=hd["h"])
    return Potential("polynomial-complex-well", N=hd["N"], m=2, h=hd["h"])


# ---------------------------------------------------------------- commands


def _threads() -> int:
    env = os.environ.get("NJ_THREADS")
    if env is None:
        return os.cpu_count() or 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"NJ_THREADS must be an integer (got {env!r})") from None
    if n < 1:
        raise ConfigError("NJ_THREADS must be >= 1")
    return n


def cmd_hetero(args):
    cfg = load_config(args.config)
    p = cfg.make_potential()
    write_profile(solve_profile(cfg, p), Path(args.out))
    return 0


def cmd_fiber(args):
    cfg = load_config(args.config)
    p = cfg.make_potential()
    prof = solve_profile(cfg, p)
    params = make_params(cfg, prof)
    radii = parse_radii(args.radii) if args.radii else cfg.fiber.get("radii") or default_radii(prof)
    write_fibers(fiber_rows(p, prof, params, radii), Path(args.out))
    return 0


def cmd_disk(args):
    cfg = load_config(args.config)
    p = cfg.make_potential()
    prof = solve_profile(cfg, p)
    f, rep = solve_disk(cfg, p, prof, args.R if args.R is not None else cfg.grid["R"], init=args.init)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    disk2d.write_field(f, out)
    out.with_suffix(".json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    return 0


def cmd_analyze(args):
    cfg = load_config(args.config)
    p = cfg.make_potential()
    f = disk2d.read_field(args.field, p)
    prof = solve_profile(cfg, p)
    params = make_params(cfg, prof)
    res = run_analysis(cfg, f, prof, params, disk2d.total_energy(f))
    out = Path(args.out)
    write_analysis(res, out.parent, out.name)
    for e in res.errors:
        print(f"analyze: stage {e['stage']} failed: {e['message']}", file=sys.stderr)
    return _fail_code(res.errors)


def cmd_render(args):
    src = Path(args.input)
    data = src.read_bytes()
    if data.startswith(disk2d.MAGIC):
        hd, _ = disk2d.read_header(data)
        block = {}
        if args.config:
            cfg = load_config(args.config)
            p, block = cfg.make_potential(), cfg.analysis
        else:
            p = potential_from_header(hd)
        f = disk2d.read_field(src, p)
        level = args.level if args.level is not None else contour_level(p, block)
        svg = render_field_svg(f, level)
    else:
        svg = render_interface_svg(parse_json_bytes(data, src.name))
    Path(args.out).write_text(svg)
    return 0


def _run_one(cfg, p, prof, params, R):
    d = cfg.output / f"R{R:g}"
    d.mkdir(parents=True, exist_ok=True)
    stage = "disk"
    try:
        f, rep = solve_disk(cfg, p, prof, R)
        disk2d.write_field(f, d / "field.bin")
        (d / "solve.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
        stage = "analyze"
        res = run_analysis(cfg, f, prof, params, rep.energy)
        res.report["energy"] = rep.energy
        write_analysis(res, d)
        return {"R": R, "J": rep.energy, "report": res.report, "errors": res.errors}
    except NJError as e:
        return {"R": R, "errors": [{"stage": stage, "error": type(e).__name__, "message": str(e),
                                    "exit_code": e.exit_code}]}


def cmd_run(args):
    cfg = load_config(args.config)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.make_potential()
    stage = "hetero"
    try:
        prof = solve_profile(cfg, p)
        write_profile(prof, out / "profile.csv")
        stage = "fiber"
        params = make_params(cfg, prof)
        radii = cfg.fiber.get("radii") or default_radii(prof)
        write_fibers(fiber_rows(p, prof, params, radii), out / "fibers.csv")
    except NJError as e:
        print(f"run: stage {stage} failed: {e}", file=sys.stderr)
        return e.exit_code
    Rs = cfg.R_list
    with ThreadPoolExecutor(max_workers=min(_threads(), len(Rs))) as ex:
        results = list(ex.map(lambda R: _run_one(cfg, p, prof, params, R), Rs))
    ref = p.h * p.N * prof.sigma
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "J", "NsigmaR", "sigma_measure", "length_excess", "k"])
        for res in results:
            rep = res.get("report", {})
            dec = rep.get("decay") or {}
            row = [res["R"], res.get("J"), ref * res["R"], rep.get("sigma_measure"),
                   rep.get("length_excess"), dec.get("k")]
            w.writerow(["" if x is None else repr(float(x)) for x in row])
    code = 0
    for res in results:
        for e in res["errors"]:
            print(f"run: R={res['R']:g} stage {e['stage']} failed: {e['message']}", file=sys.stderr)
            code = code or e["exit_code"]
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="njunction", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("hetero", help="solve the 1D heteroclinic connection")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_hetero)

    s = sub.add_parser("fiber", help="periodic fiber minimizers over a radius list")
    s.add_argument("--config", required=True)
    s.add_argument("--radii", help="start:stop:step or comma list")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fiber)

    s = sub.add_parser("disk", help="equivariant disk minimizer")
    s.add_argument("--config", required=True)
    s.add_argument("--R", type=float)
    s.add_argument("--init", help="test | zero | file:PATH")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_disk)

    s = sub.add_parser("analyze", help="structure checks on a stored field")
    s.add_argument("--field", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("render", help="SVG of a field.bin or interface.json")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--level", type=float, help="contour level (default c delta^alpha)")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("run", help="full pipeline over the configured R list")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NJError as e:
        print(f"{args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
