"""Command-line entry point: ``energy-hjm <verb> [--config PATH] [flags]``.

Configs are INI files with sections ``[model]``, ``[plan]``, ``[weight]``,
``[output]`` and ``[risk-premium]``.  Lists are comma separated, matrices and
delivery lists use ``;`` between rows::

    [model]
    preset = cointegrated-2
    lam = 0.3, 0.1; 0.24, 0.35

    [plan]
    paths = 20000
    maturities = 0.5, 1, 1.5, 2
    deliveries = 1, 1.25; 1.25, 2

Exit codes: 0 when every requested gate passes, 1 when a gate fails and 2
for configuration or usage errors.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import difflib
import re
import sys
from pathlib import Path

import numpy as np

from .curve import WeightFunction, write_csv
from .drivers import property_p_ratio, property_p_verdict, subordinator_ratio
from .engine import SimulationPlan, run
from .errors import ConfigurationError, HJMError, ModelError
from .measure import q_dynamics_check, verify_martingale
from .models import (PRESETS, CointegratedSpec, LuciaSchwartzSpec, build_cointegrated,
                     build_preset, cointegration_residual, risk_premium_forward,
                     risk_premium_mc, risk_premium_swap)

EXIT_OK, EXIT_GATE, EXIT_CONFIG = 0, 1, 2

PRESET_SPECS = {
    "lucia-schwartz": LuciaSchwartzSpec,
    "lucia-schwartz-original": LuciaSchwartzSpec,
    "cointegrated-2": CointegratedSpec,
}
PLAN_KEYS = {
    "paths": int, "dt": float, "horizon": float, "scheme": str, "seed": int,
    "maturities": "list", "deliveries": "pairs", "outputs": "names",
    "record_times": "list", "gates": "names", "dump_paths": int,
}
SECTION_KEYS = {
    "weight": ("kind", "rate"),
    "output": ("dir",),
    "risk-premium": ("t", "mc"),
}


class ConfigError(ConfigurationError):
    pass


# ---------------------------------------------------------------------------
# config parsing


def parse_number(text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def parse_list(text):
    return tuple(parse_number(x) for x in text.split(",") if x.strip())


def parse_matrix(text):
    rows = [parse_list(r) for r in text.split(";") if r.strip()]
    if len({len(r) for r in rows}) > 1:
        raise ConfigError(f"ragged matrix {text!r}")
    return np.array(rows)


def _model_keys(preset):
    """Config-settable spec fields with their default values."""
    out = {}
    for f in dataclasses.fields(PRESET_SPECS[preset]):
        if not f.init:
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        if default is None or isinstance(default, (bool, int, float, np.ndarray)):
            out[f.name] = default
        elif isinstance(default, tuple) and all(isinstance(x, (int, float)) for x in default):
            out[f.name] = default
    return out


def _model_value(key, default, text):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ConfigError(f"[model] {key}: expected a boolean, got {text!r}")
        return low in ("1", "true", "yes", "on")
    if isinstance(default, (int, float)):
        return parse_number(text)
    if isinstance(default, tuple):
        return parse_list(text)
    value = parse_matrix(text)
    return float(value[0, 0]) if value.size == 1 else value


@dataclasses.dataclass
class RunConfig:
    preset: str = "lucia-schwartz"
    model: dict = dataclasses.field(default_factory=dict)
    plan: dict = dataclasses.field(default_factory=dict)
    weight: WeightFunction = dataclasses.field(default_factory=WeightFunction.flat)
    out: Path = Path("out")
    rp_time: float = 0.0
    rp_mc: bool = True
    source: str = "<defaults>"

    def bundle(self):
        bundle = build_preset(self.preset, **self.model)
        return dataclasses.replace(bundle, weight=self.weight)

    def simulation_plan(self, **overrides):
        params = dict(self.plan)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return SimulationPlan(**params)


def _unquote(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1].strip()
    return text


def _line_of(text, section, key):
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _unknown(path, text, section, key, valid):
    near = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.5)
    line = _line_of(text, section, key)
    where = f"{path}:{line}" if line else str(path)
    hint = f"; did you mean {near[0]!r}?" if near else f"; valid keys: {', '.join(sorted(valid))}"
    return ConfigError(f"{where}: [{section}] unknown key {key!r}{hint}")


def _keyed(path, text, section, key):
    line = _line_of(text, section, key)
    return f"{path}:{line}: [{section}] {key}" if line else f"{path}: [{section}] {key}"


def load_config(path=None) -> RunConfig:
    """Parse an INI config; every key is checked, unknown ones are errors."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    for section in parser.sections():
        for key, raw in parser.items(section):
            parser.set(section, key, _unquote(raw))
    cfg.source = str(path)
    known = ("model", "plan", *SECTION_KEYS)
    for section in parser.sections():
        if section not in known:
            near = difflib.get_close_matches(section, known, n=1)
            hint = f"; did you mean [{near[0]}]?" if near else ""
            raise ConfigError(f"{path}: unknown section [{section}]{hint}")

    if parser.has_section("model"):
        items = dict(parser.items("model"))
        if "preset" in items and "model" in items:
            raise ConfigError(f"{path}: [model] sets both 'preset' and 'model'")
        cfg.preset = _unquote(items.pop("preset", items.pop("model", cfg.preset)))
        if cfg.preset not in PRESETS:
            near = difflib.get_close_matches(cfg.preset, list(PRESETS), n=1)
            hint = f"; did you mean {near[0]!r}?" if near else ""
            raise ConfigError(f"{_keyed(path, text, 'model', 'preset')}: unknown preset "
                              f"{cfg.preset!r}{hint}")
        valid = _model_keys(cfg.preset)
        for key, raw in items.items():
            if key not in valid:
                raise _unknown(path, text, "model", key, [*valid, "preset", "model"])
            try:
                cfg.model[key] = _model_value(key, valid[key], raw)
            except ConfigError as exc:
                raise ConfigError(f"{_keyed(path, text, 'model', key)}: {exc}") from None

    if parser.has_section("plan"):
        for key, raw in parser.items("plan"):
            kind = PLAN_KEYS.get(key)
            if kind is None:
                raise _unknown(path, text, "plan", key, PLAN_KEYS)
            try:
                if kind == "list":
                    value = parse_list(raw)
                elif kind == "pairs":
                    value = tuple(map(tuple, parse_matrix(raw).tolist()))
                elif kind == "names":
                    value = tuple(x.strip() for x in raw.split(",") if x.strip())
                elif kind is int:
                    number = parse_number(raw)
                    if number != int(number):
                        raise ConfigError(f"expected an integer, got {raw!r}")
                    value = int(number)
                elif kind is float:
                    value = parse_number(raw)
                else:
                    value = raw.strip()
            except ConfigError as exc:
                raise ConfigError(f"{_keyed(path, text, 'plan', key)}: {exc}") from None
            cfg.plan[key] = value

    for section, valid in SECTION_KEYS.items():
        if not parser.has_section(section):
            continue
        items = dict(parser.items(section))
        for key in items:
            if key not in valid:
                raise _unknown(path, text, section, key, valid)
        if section == "weight":
            kind = items.get("kind", "flat").strip()
            if kind == "flat":
                cfg.weight = WeightFunction.flat()
            elif kind == "discounted":
                cfg.weight = WeightFunction.discounted(parse_number(items.get("rate", "0")))
            else:
                raise ConfigError(f"{_keyed(path, text, 'weight', 'kind')}: unknown weight "
                                  f"{kind!r}; use flat or discounted")
        elif section == "output":
            cfg.out = Path(items.get("dir", str(cfg.out)).strip())
        else:
            cfg.rp_time = parse_number(items.get("t", "0"))
            cfg.rp_mc = parser.getboolean(section, "mc", fallback=True)
    return cfg


# ---------------------------------------------------------------------------
# verbs


def _plan(cfg, args, **extra):
    return cfg.simulation_plan(paths=args.paths, seed=args.seed, **extra)


def _out(cfg, args):
    return Path(args.out) if args.out else cfg.out


def cmd_simulate(cfg, args):
    plan = _plan(cfg, args)
    result = run(plan, cfg.bundle())
    out = result.write(_out(cfg, args))
    print(f"wrote {out / 'stats.csv'}, {out / 'curves.csv'}, {out / 'swaps.csv'}"
          + (f", {out / 'paths.csv'}" if result.paths else ""))
    for name, ok in result.gates.items():
        print(f"gate {name}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if result.passed else EXIT_GATE


def cmd_validate_measure(cfg, args):
    bundle = cfg.bundle()
    plan = _plan(cfg, args)
    t_star = args.t_star if args.t_star is not None else min(1.0, plan.horizon)
    report = verify_martingale(bundle.kernel, bundle.affine, n_paths=plan.paths, t_star=t_star,
                               dt=plan.dt, seed=plan.seed,
                               scheme="exact" if plan.scheme == "exact-ou" else "euler")
    print(report.line())
    ok = report.passed
    rows = [("Z", f"t={t_star:g}", "P", report.mean, report.se, 1.0, report.passed)]
    if args.q_check:
        q = q_dynamics_check(bundle.kernel, bundle.affine, bundle.weight, plan.maturities,
                             plan.deliveries, n_paths=plan.paths, t=t_star, dt=plan.dt,
                             seed=plan.seed)
        for r in q.rows:
            rows.append((r.quantity, r.contract, r.route, r.mean, r.se, r.target, r.passed))
            print(f"{r.route:>10} {r.quantity} {r.contract}: {r.mean:.6f} +/- {r.se:.6f} "
                  f"target {r.target:.6f} {'PASS' if r.passed else 'FAIL'}")
        print(f"Q-dynamics check: {'PASS' if q.passed else 'FAIL'}")
        ok = ok and q.passed
    if args.out or cfg.source != "<defaults>":
        out = _out(cfg, args)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "measure.csv",
                  ("quantity", "contract", "route", "mean", "se", "target", "passed"),
                  [(*r[:6], int(r[6])) for r in rows])
    return EXIT_OK if ok else EXIT_GATE


def cmd_check_cointegration(cfg, args):
    model = dict(cfg.model)
    if args.lam is not None:
        model["lam"] = parse_matrix(args.lam)
    if args.a is not None:
        a = parse_list(args.a)
        if len(a) != 2:
            raise ConfigError(f"--a needs two loadings, got {args.a!r}")
        model["a1"], model["a2"] = a
    spec_defaults = CointegratedSpec.__dataclass_fields__
    a1 = model.get("a1", spec_defaults["a1"].default)
    a2 = model.get("a2", spec_defaults["a2"].default)
    lam = model.get("lam")
    if lam is not None and np.shape(lam) != (2, 2):
        raise ConfigError(f"lam must be 2x2, got shape {np.shape(lam)}")
    try:
        spec = CointegratedSpec(**model)
        build_cointegrated(spec)
    except ModelError as exc:
        residual = float(np.abs(cointegration_residual(a1, a2, lam)).max()) if lam is not None \
            else float("nan")
        print(f"reject residual={residual:.6e}: {exc}")
        return EXIT_GATE
    lam0 = spec.lam_field()(0.0)
    m11 = lam0[0, 0] + (spec.a2 / spec.a1) * lam0[0, 1]
    print(f"accept residual={spec.residual:.6e} M11={m11:.12g}")
    return EXIT_OK


def cmd_risk_premium(cfg, args):
    bundle = cfg.bundle()
    model = bundle.forward
    plan = _plan(cfg, args)
    t = cfg.rp_time
    header = ("contract", "t", "T1", "T2", "commodity", "closed_form", "mc_mean", "mc_se")
    rows, ok = [], True
    for T in plan.maturities:
        if T < t:
            continue
        snap = model.initial(np.array([T]))[0]
        closed = risk_premium_forward(model, snap, t, T)
        mean = se = np.full(model.n, np.nan)
        if cfg.rp_mc and T > t:
            mean, se = risk_premium_mc(model, snap, t, T, n_paths=plan.paths, dt=plan.dt,
                                       seed=plan.seed)
        for c in range(model.n):
            passed = np.isnan(mean[c]) or abs(closed[c] - mean[c]) <= 3.0 * se[c]
            ok = ok and bool(passed)
            rows.append(("forward", t, T, T, c, float(closed[c]), float(mean[c]), float(se[c])))
    for T1, T2 in plan.deliveries:
        if T1 < t:
            continue
        closed = risk_premium_swap(model, bundle.weight, t, T1, T2, model.initial)
        for c in range(model.n):
            rows.append(("swap", t, T1, T2, c, float(closed[c]), float("nan"), float("nan")))
    out = _out(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "rp.csv", header, rows)
    print(f"wrote {out / 'rp.csv'} ({len(rows)} rows) {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_GATE


def cmd_moments(cfg, args):
    params = {}
    if args.law == "poisson":
        params["intensity"] = args.intensity
    elif args.law == "gamma-subordinated":
        params.update(shape=args.shape, rate=args.rate)
    ratios = property_p_ratio(args.law, args.nmax, **params)
    verdict = property_p_verdict(ratios)
    sub = subordinator_ratio(args.law, args.nmax, **params) if args.law != "gaussian" else None
    print(f"{'n':>4} {'r_n':>14}" + (f" {'subordinator':>14}" if sub else ""))
    rows = []
    for n, r in enumerate(ratios, 1):
        extra = f" {sub[n - 1]:14.6f}" if sub else ""
        print(f"{n:>4} {r:14.6f}{extra}")
        rows.append((n, r) + ((sub[n - 1],) if sub else ()))
    print(f"verdict: {verdict.verdict} (increasing={verdict.increasing}, bound={verdict.bound:g})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "moments.csv", ("n", "ratio") + (("subordinator",) if sub else ()), rows)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    try:
        value = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid path count {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("path count must be positive")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=_u64, metavar="U64")
    common.add_argument("--paths", type=_positive, metavar="N")
    common.add_argument("--out", metavar="DIR")

    parser = argparse.ArgumentParser(prog="energy-hjm",
                                     description="Forward-curve simulation for energy markets.")
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("simulate", parents=[common], help="run a simulation plan")
    vm = sub.add_parser("validate-measure", parents=[common], help="martingale gate for Z")
    vm.add_argument("--t-star", type=float)
    vm.add_argument("--q-check", action="store_true", help="also test risk-neutral dynamics")
    cc = sub.add_parser("check-cointegration", parents=[common],
                        help="test whether a common-trend market admits a mean reversion")
    cc.add_argument("--lam", help="2x2 matrix, rows separated by ';'")
    cc.add_argument("--a", help="loadings a1,a2")
    sub.add_parser("risk-premium", parents=[common], help="write rp.csv")
    md = sub.add_parser("moments-diagnostic", parents=[common], help="moment ratio table")
    md.add_argument("--law", choices=("gaussian", "poisson", "gamma-subordinated"),
                    default="poisson")
    md.add_argument("--nmax", type=int, default=10)
    md.add_argument("--intensity", type=float, default=1.0)
    md.add_argument("--shape", type=float, default=1.0)
    md.add_argument("--rate", type=float, default=1.0)
    return parser


VERBS = {
    "simulate": cmd_simulate,
    "validate-measure": cmd_validate_measure,
    "check-cointegration": cmd_check_cointegration,
    "risk-premium": cmd_risk_premium,
    "moments-diagnostic": cmd_moments,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return VERBS[args.verb](cfg, args)
    except HJMError as exc:
        print(f"energy-hjm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
