"""Command-line driver: one subcommand per verification, plus ``reproduce-all``.

Every command writes plain CSV/JSON under ``--out/<command>/``.  Data files
carry no timestamps, so rerunning a command with the same configuration
reproduces them byte for byte; the time of the run goes into
``manifest.json`` only.  Floats are written with 17 significant digits.

Configuration is read in three layers: built-in defaults, then a flat
``key = value`` file given by ``--config``, then command-line flags.  Known
keys::

    p delta A s0 d window quad_order nmax ds out K0 Tmt T budget refine order

``d`` is five comma-separated reals.  Lines starting with ``#`` are comments.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for a bad
configuration or a call outside a routine's domain.  ``BLOWUP_LAB_THREADS``
caps the BLAS/OpenMP thread pools.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("expand", "profile-check", "kernel-check", "evolve", "shoot", "regions", "final-profile",
            "reproduce-all")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class ConfigError(ValueError):
    """Unreadable or inconsistent configuration."""


def _cap_threads() -> None:
    # must run before numpy is first imported
    n = os.environ.get("BLOWUP_LAB_THREADS")
    if not n:
        return
    if not n.isdigit() or int(n) < 1:
        raise ConfigError(f"BLOWUP_LAB_THREADS must be a positive integer, got {n!r}")
    for var in _THREAD_VARS:
        os.environ[var] = n


def fmt(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass(frozen=True)
class RunConfig:
    p: float = 2.0
    delta: float = 100.0
    A: float = 20.0
    s0: float = 12.0
    d: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    window: float = 3.0
    quad_order: int = 48
    nmax: int = 16
    ds: float = 0.01
    out: str = "blowup_lab_out"
    K0: float = 1.0
    Tmt: float = 0.1
    T: float = 1.0
    budget: int = 2000
    refine: int = 0
    order: int = 2

    def params(self):
        from .profile import Params

        return Params(p=self.p, delta=self.delta, A=self.A, s0=self.s0, d=self.d)

    def grid(self):
        from .basis import make_grid

        return make_grid(self.quad_order, self.nmax)

    def as_text(self) -> str:
        """The flat ``key = value`` form, readable by ``--config``."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "d":
                v = ",".join(fmt(x) for x in v)
            elif isinstance(v, float):
                v = fmt(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = _FIELDS[key].type
    try:
        if key == "d":
            vals = tuple(float(x) for x in raw.split(","))
            if len(vals) != 5:
                raise ConfigError(f"d needs five comma-separated values, got {raw!r}")
            return vals
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ConfigError(f"{key} must be finite")
            return v
        return raw
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = (x.strip() for x in line.split("=", 1))
        out[key] = _coerce(key, raw)
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        values.update(parse_config_text(text))
    for key in _FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _coerce(key, v) if isinstance(v, str) else v
    cfg = RunConfig(**values)
    if cfg.ds <= 0 or cfg.window < 0 or cfg.quad_order < 2 or cfg.nmax < 0 or cfg.budget < 1:
        raise ConfigError("need ds > 0, window >= 0, quad_order >= 2, nmax >= 0, budget >= 1")
    return cfg


# ---------------------------------------------------------------------------
# output


class Output:
    """Per-command output directory; tracks written files for the manifest."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg.out) / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        (self.dir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, float) else x for x in row])
        self.write(name, buf.getvalue())

    def json(self, name: str, obj) -> None:
        self.write(name, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")

    def manifest(self, ok: bool, summary: dict | None = None) -> None:
        from . import __version__, kernels

        man = {"command": self.command, "ok": ok, "version": __version__, "kernel_backend": kernels.BACKEND,
               "config": dataclasses.asdict(self.cfg), "config_text": self.cfg.as_text(),
               "threads": os.environ.get("BLOWUP_LAB_THREADS"),
               "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
               "files": dict(sorted(self.files.items())), "summary": summary or {}}
        (self.dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if hasattr(x, "item"):
        return x.item()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    return str(x)


def _verdict(ok: bool, text: str) -> int:
    print(f"{'PASS' if ok else 'FAIL'}: {text}")
    return EXIT_PASS if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# commands


def cmd_expand(cfg: RunConfig, args) -> int:
    from . import series

    gamma = None
    if args.gamma_shift:
        gamma = (series.Scalar.p() * 6 - 2) * series.Scalar.kappa(-1) + series.Scalar.const(args.gamma_shift)
    cert = series.certify(cfg.order, gamma)
    out = Output(cfg, "expand")
    out.write("certificate.txt", cert.to_text() + "\n")
    out.write("certificate.json", cert.to_json() + "\n")
    counts = cert.headline_counts()
    out.manifest(cert.ok, {"headline_verified": counts, "failures": len(cert.failures)})
    for c in cert.failures:
        mode = f"h{c.mode[0]}h{c.mode[1]}" if c.mode else "-"
        print(f"  mismatch: {c.series} eps^{c.order} {mode}: expected {c.expected}, got {c.actual}")
    text = " + ".join(f"{counts.get(k, 0)} {k}" for k in ("remainder", "profile")) + " headline coefficients verified"
    return _verdict(cert.ok, text)


def cmd_profile(cfg: RunConfig, args) -> int:
    from .acceptance import profile_certification

    res = profile_certification(cfg.params())
    out = Output(cfg, "profile-check")
    rows = [(s, e, x, g) for s, e, x, g in zip((10.0, 12.0, 14.0), res.detail["min_E"],
                                                res.detail["scaled_excess"], res.detail["scaled_grad"])]
    out.csv("profile.csv", ["s", "min_E", "scaled_excess", "scaled_grad"], rows)
    out.csv("axis.csv", ["s", "peak_r", "rise_before_peak", "monotone_after_peak", "end_value"],
            [(a["s"], a["peak_r"], a["rise_before_peak"], int(a["monotone_after_peak"]), a["end_value"])
             for a in res.detail["axis"]])
    out.manifest(res.ok, res.detail)
    return _verdict(res.ok, f"profile certified at s = 10, 12, 14 (min E = {min(res.detail['min_E']):.6f})")


def cmd_kernel(cfg: RunConfig, args) -> int:
    import numpy as np

    from .basis import HermiteIndex
    from .operators import SpectralField, mehler_apply, semigroup_spectral

    grid = cfg.grid()
    rows, worst = [], 0.0
    for i in range(9):
        for j in range(i + 1):
            f = SpectralField.from_modes({HermiteIndex(i, j): 1.0}, grid)
            a, b = HermiteIndex(i, j).degrees
            for s in (0.5, 1.0, 2.0):
                out_c = mehler_apply(f, s).with_coeffs().coeffs
                ref = semigroup_spectral(f, s).coeffs
                err = float(np.max(np.abs(out_c - ref))) / abs(ref[a, b])
                worst = max(worst, err)
                rows.append((i, j, s, float(out_c[a, b]), float(ref[a, b]), err))
    fam = SpectralField.from_modes({HermiteIndex(4, 2): 1.0, HermiteIndex(2, 0): 0.5, HermiteIndex(0, 0): 1.0}, grid)
    comp_rows, comp = [], 0.0
    for s1, s2 in ((0.5, 0.5), (0.5, 1.0), (1.0, 1.0)):
        twice = mehler_apply(mehler_apply(fam, s1), s2).samples
        once = mehler_apply(fam, s1 + s2).samples
        e = float(grid.norm(twice - once) / grid.norm(once))
        comp = max(comp, e)
        comp_rows.append((s1, s2, e))
    out = Output(cfg, "kernel-check")
    out.csv("eigen_decay.csv", ["i", "j", "s", "mehler", "exact", "rel_error"], rows)
    out.csv("composition.csv", ["s1", "s2", "rel_error"], comp_rows)
    ok = worst <= 1e-6 and comp <= 1e-6
    out.manifest(ok, {"eigen_decay_rel_error": worst, "composition_rel_error": comp})
    return _verdict(ok, f"Mehler eigen-decay error {worst:.3g}, composition error {comp:.3g}")


def cmd_evolve(cfg: RunConfig, args) -> int:
    from . import dynamics

    params = cfg.params()
    traj = dynamics.run(params, cfg.window, cfg.grid(), cfg.ds)
    out = Output(cfg, "evolve")
    out.write("trajectory.csv", dynamics.trajectory_csv(traj))
    fe = traj.first_exit
    summary = {"trapped_window": traj.trapped_window, "first_exit": fe, "component_exits": traj.component_exits}
    out.manifest(fe is None, summary)
    if fe is None:
        return _verdict(True, f"inside V_A for the whole window of {cfg.window:g}")
    return _verdict(False, f"left V_A through {fe[1]} at s = {fmt(fe[0])} (window {fmt(traj.trapped_window)})")


def cmd_shoot(cfg: RunConfig, args) -> int:
    from . import dynamics

    res = dynamics.shoot(cfg.params(), cfg.window, cfg.budget, cfg.grid(), cfg.ds, refine=cfg.refine)
    out = Output(cfg, "shoot")
    rows = []
    for k, (d, win, fe) in enumerate(res.history):
        rows.append((k, *[float(x) for x in d], float(win), float(fe[0]) if fe else "", fe[1] if fe else ""))
    out.csv("runs.csv", ["run", "d00", "d20", "d40", "d42", "d60", "window", "exit_s", "exit_constraint"], rows)
    out.write("best_trajectory.csv", dynamics.trajectory_csv(res.trajectory))
    summary = {"best_d": [fmt(x) for x in res.best_d], "window": res.window, "runs": res.runs,
               "exit": res.exit_component}
    out.json("best.json", summary)
    out.manifest(res.success, summary)
    print("best d = " + ",".join(fmt(x) for x in res.best_d))
    print(f"trapped window = {fmt(res.window)} after {res.runs} runs")
    return _verdict(res.success, f"target window {cfg.window:g}, achieved {res.window:.6g}")


def cmd_regions(cfg: RunConfig, args) -> int:
    import numpy as np

    from . import constants, scenarios
    from .errors import PreconditionError
    from .profile import eval_dpsi

    params = cfg.params()
    radii = np.geomspace(0.1, 200.0, args.radii)
    angles = np.linspace(0.0, math.pi / 4, args.angles)
    reps = scenarios.region_map(params, radii, angles)
    out = Output(cfg, "regions")
    rows = []
    for k, rep in enumerate(reps):
        r, th = radii[k // len(angles)], angles[k % len(angles)]
        rows.append((float(r), float(th), rep.a[0], rep.a[1], rep.region.G0_value, "+".join(sorted(rep.region.labels)),
                     rep.value, rep.lower, rep.upper, int(rep.ok)))
    out.csv("region_map.csv", ["r", "theta", "a1", "a2", "G0", "regions", "w0", "lower", "upper", "ok"], rows)
    grid = cfg.grid()
    certs = {}
    zero = scenarios.probe_zero_stability(0.01, None, 4.0, params, grid)
    certs["R1_zero_stability"] = {"sup_ratio": zero.sup_ratio, "bound": zero.bound, "ok": zero.ok}
    for sigma in (-3.0, 0.0, 2.0):
        size = 0.5 * abs(float(eval_dpsi(sigma, params))) / constants.M1
        rep = scenarios.probe_psi_stability(sigma, size, None, 5.0, params, grid)
        certs[f"R2_psi_stability_{sigma:g}"] = {"sup_ratio": rep.sup_ratio, "bound": rep.bound, "ok": rep.ok}
    try:
        dc = scenarios.descent_check(params.A / 2, params.A / 2, params=params, grid=grid)
        certs["R3_descent"] = {"envelope_ratio": dc.envelope_ratio, "handoff_distance": dc.handoff_distance,
                               "handoff_limit": dc.handoff_limit, "ok": dc.ok and dc.bounded_after(params.kappa)}
    except PreconditionError as exc:
        certs["R3_descent"] = {"skipped": str(exc), "ok": None}
    out.json("certificates.json", certs)
    map_ok = all(r.ok for r in reps)
    ok = map_ok and all(c["ok"] is not False for c in certs.values())
    out.manifest(ok, {"points": len(reps), "map_ok": map_ok,
                      "certificates": {k: c["ok"] for k, c in certs.items()}})
    return _verdict(ok, f"{sum(r.ok for r in reps)}/{len(reps)} region points within bounds; "
                        f"{sum(c['ok'] is True for c in certs.values())}/{len(certs)} certificates pass, "
                        f"{sum(c['ok'] is None for c in certs.values())} not applicable")


def cmd_final(cfg: RunConfig, args) -> int:
    from . import scenarios

    params = cfg.params()
    t_star = cfg.T - cfg.Tmt
    u = scenarios.final_profile_ode(cfg.K0, cfg.T, t_star, params)
    exact = scenarios.final_profile_closed_form(cfg.K0, cfg.Tmt, params)
    err = abs(u / exact - 1)
    out = Output(cfg, "final-profile")
    out.csv("final.csv", ["p", "K0", "T_minus_t_star", "u_T", "closed_form", "rel_error"],
            [(params.p, cfg.K0, cfg.Tmt, u, exact, err)])
    out.manifest(err <= 1e-8, {"u_T": u, "closed_form": exact, "rel_error": err})
    print(fmt(u))
    return _verdict(err <= 1e-8, f"u(T) = {u:.12g} against closed form {exact:.12g}")


def cmd_reproduce(cfg: RunConfig, args) -> int:
    from . import acceptance

    out = Output(cfg, "reproduce-all")
    results = []
    for check in acceptance.CHECKS:
        res = check()
        print(f"{res.line()} ({res.seconds:.1f} s)", flush=True)
        results.append(res)
    out.csv("acceptance.csv", ["criterion", "title", "ok"], [(r.number, r.title, int(r.ok)) for r in results])
    out.json("acceptance.json", {str(r.number): {"title": r.title, "ok": r.ok, "detail": r.detail} for r in results})
    ok = all(r.ok for r in results)
    out.manifest(ok, {"passed": sum(r.ok for r in results), "total": len(results),
                      "seconds": {str(r.number): r.seconds for r in results}})
    return _verdict(ok, f"{sum(r.ok for r in results)}/{len(results)} acceptance criteria")


HANDLERS = {"expand": cmd_expand, "profile-check": cmd_profile, "kernel-check": cmd_kernel, "evolve": cmd_evolve,
            "shoot": cmd_shoot, "regions": cmd_regions, "final-profile": cmd_final, "reproduce-all": cmd_reproduce}


# ---------------------------------------------------------------------------
# argument parsing


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", help="flat key = value configuration file")
    sub.add_argument("--out", metavar="DIR", help="output root (default blowup_lab_out)")
    sub.add_argument("--p", type=float)
    sub.add_argument("--delta", type=float)
    sub.add_argument("--A", type=float)
    sub.add_argument("--s0", type=float)
    sub.add_argument("--d", metavar="D00,D20,D40,D42,D60", help="five comma-separated reals")
    sub.add_argument("--window", type=float)
    sub.add_argument("--quad-order", dest="quad_order", type=int)
    sub.add_argument("--nmax", type=int)
    sub.add_argument("--ds", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blowup-lab", description=__doc__.split("\n\n")[0])
    subs = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subs.add_parser(name)
        _common(sub)
        if name == "expand":
            sub.add_argument("--order", type=int, help="expansion order, 0..2 (default 2)")
            sub.add_argument("--gamma-shift", dest="gamma_shift", type=int, default=0,
                             help="add an integer to gamma before certifying (a tamper test)")
        elif name == "shoot":
            sub.add_argument("--budget", type=int, help="maximum number of runs (default 2000)")
            sub.add_argument("--refine", type=int, help="extra runs after the first trapped one")
        elif name == "regions":
            sub.add_argument("--radii", type=int, default=40)
            sub.add_argument("--angles", type=int, default=7)
        elif name == "final-profile":
            sub.add_argument("--K0", type=float)
            sub.add_argument("--Tmt", type=float, help="T - t*")
            sub.add_argument("--T", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    try:
        _cap_threads()
        cfg = build_config(args)
        from .errors import BlowupLabError, IntegrationOverflow

        try:
            return HANDLERS[args.command](cfg, args)
        except IntegrationOverflow as exc:
            print(f"FAIL: {exc}")
            return EXIT_FAIL
        except BlowupLabError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
