"""Command line runner: ``evoldp <subcommand> [flags]``.

Every artifact starts with ``#`` header lines carrying the config hash and seed,
followed by CSV. Outputs contain no timestamps, so a rerun with the same config
and seed is byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .games import GameSpec, game_from_dict
from .protocols import ConfigurationError, Logit, parse_protocol, protocol_from_dict

SCHEMA_VERSION = 1
DEFAULT_GAME = "congestion"
DEFAULT_PROTOCOL = "logit:0.25"


class CliError(Exception):
    pass


# -- configuration -----------------------------------------------------------------------------

def bundled_games() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("evoldp.data").iterdir() if p.name.endswith(".json"))


def load_game_doc(ref: str) -> dict:
    """A game from a JSON file, or a bundled game by name (``congestion``, ``congestion.json``)."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        name = path.name[:-5] if path.name.endswith(".json") else path.name
        res = resources.files("evoldp.data") / f"{name}.json"
        if not res.is_file():
            raise CliError(f"game file {ref!r} not found (bundled games: {', '.join(bundled_games())})")
        text = res.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"game file {ref!r} is not valid JSON: {exc}") from None
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise CliError(f"unsupported schema version {schema} in {ref!r}")
    return doc


@dataclass
class ExperimentConfig:
    command: str
    game: dict
    protocol: dict
    seed: int
    params: dict = field(default_factory=dict)

    def canonical(self) -> str:
        doc = {"schema": SCHEMA_VERSION, "command": self.command, "game": self.game,
               "protocol": self.protocol, "seed": self.seed, "params": self.params}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), default=_jsonable)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def build_game(self) -> GameSpec:
        return game_from_dict({k: v for k, v in self.game.items() if k != "schema"})

    def build_protocol(self):
        return protocol_from_dict(self.protocol)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def parse_vector(text: str | None, name: str):
    if text is None:
        return None
    try:
        v = np.array([float(t) for t in text.split(",")], dtype=float)
    except ValueError:
        raise CliError(f"--{name} expects comma separated numbers, got {text!r}") from None
    return v


def parse_int_list(text: str, name: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise CliError(f"--{name} expects comma separated integers, got {text!r}") from None


def resolve_workers(flag: int | None) -> int:
    env = os.environ.get("EVO_LDP_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError:
            raise CliError(f"EVO_LDP_WORKERS must be an integer, got {env!r}") from None
    elif flag is not None:
        w = flag
    else:
        w = os.cpu_count() or 1
    if w < 1:
        raise CliError("worker count must be positive")
    return w


# -- output --------------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Artifact:
    """Header lines plus CSV rows, written to --out or stdout."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.notes: list[str] = []
        self.buf = io.StringIO()

    def note(self, text: str):
        self.notes.append(text)

    def table(self, header, rows):
        self.buf.write(",".join(header) + "\n")
        for r in rows:
            self.buf.write(",".join(_fmt(v) for v in r) + "\n")

    def raw(self, text: str):
        self.buf.write(text if text.endswith("\n") else text + "\n")

    def render(self) -> str:
        head = [f"# evoldp {self.cfg.command} config={self.cfg.hash} seed={self.cfg.seed}",
                f"# config {self.cfg.canonical()}"]
        head += [f"# {n}" for n in self.notes]
        return "\n".join(head) + "\n" + self.buf.getvalue()

    def write(self, out: str | None):
        text = self.render()
        if out:
            Path(out).write_text(text)
        else:
            sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------------------------

def _logit_eta(protocol, args) -> float:
    if args.eta is not None:
        return args.eta
    if isinstance(protocol, Logit):
        return protocol.eta
    raise CliError("this subcommand needs a logit protocol or --eta")


def _default_start(game, protocol, n):
    if isinstance(protocol, Logit):
        from .dynamics import find_rest_point
        return find_rest_point(game, protocol)
    return np.full(n, 1.0 / n)


def _state(v, n, name):
    from .simplex import as_simplex_point
    if v.size != n:
        raise CliError(f"--{name} must have {n} entries")
    try:
        return as_simplex_point(v, tol=1e-9)
    except ValueError as exc:
        raise CliError(f"--{name}: {exc}") from None


def cmd_simulate(cfg, args, art):
    from .process import simulate_path
    from .simplex import GridState
    game, protocol = cfg.build_game(), cfg.build_protocol()
    x0 = _state(parse_vector(args.x0, "x0"), game.n, "x0") if args.x0 else np.full(game.n, 1.0 / game.n)
    path = simulate_path(game, protocol, GridState.from_shares(x0, args.pop_size), args.horizon, cfg.seed,
                         mode=args.payoffs)
    art.raw(path.to_csv())


def cmd_mean_dynamic(cfg, args, art):
    from .dynamics import integrate, mean_dynamic
    game, protocol = cfg.build_game(), cfg.build_protocol()
    x0 = _state(parse_vector(args.x0, "x0"), game.n, "x0") if args.x0 else np.full(game.n, 1.0 / game.n)
    rest = _default_start(game, protocol, game.n) if args.reverse and isinstance(protocol, Logit) else None
    path = integrate(mean_dynamic(game, protocol), x0, args.horizon, args.dt,
                     direction="reverse" if args.reverse else "forward", rest_point=rest)
    art.raw(path.to_csv())


def cmd_rest_point(cfg, args, art):
    from .dynamics import find_rest_point
    game, protocol = cfg.build_game(), cfg.build_protocol()
    if not isinstance(protocol, Logit):
        raise CliError("rest-point needs a logit protocol")
    x = find_rest_point(game, protocol)
    art.table([f"x_{i + 1}" for i in range(game.n)], [x])
    print("(" + ",".join(f"{v:.4f}" for v in x) + ")", file=sys.stderr)


def cmd_cramer(cfg, args, art):
    from .largedev.entropy import cramer_transform
    from .protocols import switch_matrix
    game, protocol = cfg.build_game(), cfg.build_protocol()
    x = _state(parse_vector(args.x, "x"), game.n, "x")
    z = parse_vector(args.z, "z")
    if z.size != game.n or abs(z.sum()) > 1e-10:
        raise CliError("--z must have one entry per action and sum to zero")
    res = cramer_transform(x, z, switch_matrix(game, protocol, x), method=args.method)
    art.table(["value", "method", "status", "iterations", "residual"],
              [[res.value, res.method, res.status, res.iterations, res.residual]])


def _read_path_csv(path):
    from .process import SampledPath
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    data = np.array([[float(t) for t in ln.split(",")] for ln in rows[1:]])
    return SampledPath(data[:, 0], data[:, 1:], float(np.diff(data[:, 0]).min()))


def cmd_path_cost(cfg, args, art):
    from .dynamics import integrate, mean_dynamic
    from .largedev.paths import path_cost
    game, protocol = cfg.build_game(), cfg.build_protocol()
    if args.path:
        path = _read_path_csv(args.path)
    elif args.reverse_from:
        y = _state(parse_vector(args.reverse_from, "reverse-from"), game.n, "reverse-from")
        rest = _default_start(game, protocol, game.n) if isinstance(protocol, Logit) else None
        path = integrate(mean_dynamic(game, protocol), y, args.horizon, args.dt, direction="reverse", rest_point=rest)
    else:
        raise CliError("path-cost needs --path FILE or --reverse-from STATE")
    res = path_cost(path, game, protocol)
    idx = "" if res.infeasible_index is None else res.infeasible_index
    art.table(["cost", "samples", "infeasible_index"], [[res.value, len(path), idx]])


def _exit_problem(spec: str, start, cap: float, n: int):
    from .process import ExitProblem
    kind, _, rest = spec.partition(":")
    parts = rest.split(":") if rest else []
    try:
        if kind == "interval" and len(parts) == 3:
            return ExitProblem.interval(int(parts[0]), float(parts[1]), float(parts[2]), start, cap)
        if kind == "ball" and len(parts) == 1:
            return ExitProblem.ball(start, float(parts[0]), start, cap)
        if kind == "halfspace" and len(parts) == 2:
            w = parse_vector(parts[0], "exit")
            if w.size != n:
                raise CliError("halfspace normal needs one entry per action")
            return ExitProblem.halfspace(w, float(parts[1]), start, cap)
    except ValueError:
        pass
    raise CliError(f"cannot parse exit set {spec!r}; use interval:i:lo:hi, ball:r or halfspace:w1,..,wn:level")


def _exit_boundary(spec: str, start, n: int, mesh: int):
    """States on the boundary of the exit set, for the exit cost minimum."""
    from .logit_potential import sphere_points
    from .simplex import simplex_mesh
    kind, _, rest = spec.partition(":")
    parts = rest.split(":")
    if kind == "ball":
        return sphere_points(start, float(parts[0]), mesh)
    pts = simplex_mesh(n, mesh)
    if kind == "interval":
        i, lo, hi = int(parts[0]), float(parts[1]), float(parts[2])
        tol = 1.0 / mesh
        return pts[(np.abs(pts[:, i] - lo) <= tol / 2) | (np.abs(pts[:, i] - hi) <= tol / 2)] if n > 2 else \
            np.array([[lo, 1 - lo], [hi, 1 - hi]]) if i == 0 else np.array([[1 - lo, lo], [1 - hi, hi]])
    w, level = parse_vector(parts[0], "exit"), float(parts[1])
    return pts[np.abs(pts @ w - level) <= np.abs(w).max() / mesh]


def cmd_exit_time(cfg, args, art):
    from .process import exit_time_mc
    game, protocol = cfg.build_game(), cfg.build_protocol()
    start = _state(parse_vector(args.x0, "x0"), game.n, "x0") if args.x0 else _default_start(game, protocol, game.n)
    problem = _exit_problem(args.exit, start, args.cap, game.n)
    s = exit_time_mc(game, protocol, args.pop_size, problem, args.replicas, cfg.seed, mode=args.payoffs,
                     workers=resolve_workers(args.workers))
    art.note(problem.description)
    art.table(["N", "replicas", "censored", "mean", "median", "log_rate"],
              [[s.N, s.replicas, s.censored, s.mean, s.median, s.log_rate]])


def cmd_stationary(cfg, args, art):
    from .process import stationary_distribution
    game, protocol = cfg.build_game(), cfg.build_protocol()
    res = stationary_distribution(game, protocol, args.pop_size, method=args.method, mode=args.payoffs, seed=cfg.seed)
    art.note(f"method={res.method} residual={res.residual!r}")
    art.raw(res.to_csv())


def cmd_rate_compare(cfg, args, art):
    from .logit_potential import potential_game, rate_compare
    game, protocol = cfg.build_game(), cfg.build_protocol()
    eta = _logit_eta(protocol, args)
    pg = potential_game(game)
    N_list = parse_int_list(args.pop_sizes, "pop-sizes")
    if args.mode == "stationary":
        y = _state(parse_vector(args.y, "y"), game.n, "y") if args.y else None
        if y is None:
            raise CliError("stationary mode needs --y")
        rows = rate_compare(pg, eta, "stationary", N_list, y=y, delta=args.delta)
    else:
        start = _state(parse_vector(args.x0, "x0"), game.n, "x0") if args.x0 else \
            _default_start(game, Logit(eta), game.n)
        problem = _exit_problem(args.exit, start, args.cap, game.n)
        boundary = _exit_boundary(args.exit, start, game.n, args.mesh)
        rows = rate_compare(pg, eta, "exit_time", N_list, problem=problem, boundary=boundary,
                            replicas=args.replicas, seed=cfg.seed, workers=resolve_workers(args.workers))
    art.table(["N", "rate", "target", "gap"], [[r.N, r.rate, r.target, r.gap] for r in rows])


def cmd_laplace_dp(cfg, args, art):
    from .control import TerminalObjective, laplace_dp_value, laplace_variational
    from .simplex import GridState
    game, protocol = cfg.build_game(), cfg.build_protocol()
    target = _state(parse_vector(args.target, "target"), game.n, "target")
    h = TerminalObjective.squared_distance(target, args.weight)
    x0 = _state(parse_vector(args.x0, "x0"), game.n, "x0") if args.x0 else np.full(game.n, 1.0 / game.n)
    var = None
    if args.knots:
        var = laplace_variational(game, protocol, h, x0, knots=args.knots, seed=cfg.seed, candidates=[target]).value
    rows = []
    for N in parse_int_list(args.pop_sizes, "pop-sizes"):
        start = GridState.from_shares(x0, N)
        if not np.allclose(start.x, x0, atol=1e-12):
            raise CliError(f"x0 is not a grid state for N={N}")
        v = laplace_dp_value(game, protocol, N, h, start, mode=args.payoffs).value
        rows.append([N, v, "" if var is None else var, "" if var is None else abs(v - var)])
    art.note(h.description)
    art.table(["N", "V_N", "variational", "gap"], rows)


def cmd_levelsets(cfg, args, art):
    from .logit_potential import levelset_grid, potential_game
    game, protocol = cfg.build_game(), cfg.build_protocol()
    eta = _logit_eta(protocol, args)
    pts, vals = levelset_grid(potential_game(game), eta, args.mesh)
    hi, lo = float(vals.max()), float(vals.min())
    art.note(f"eta={eta!r} mesh={args.mesh} max={hi!r} min={lo!r} span={hi - lo!r}")
    art.table([f"x_{i + 1}" for i in range(game.n)] + ["f_eta"], np.column_stack([pts, vals]))


def cmd_verify(cfg, args, art):
    from .verify import run_all
    checks = run_all()
    art.table(["check", "ok", "seconds", "detail"],
              [[c.name, c.ok, round(c.seconds, 3), '"' + c.detail.replace('"', "'") + '"'] for c in checks])
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}: {c.detail}", file=sys.stderr)
    return 0 if all(c.ok for c in checks) else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "mean-dynamic": cmd_mean_dynamic,
    "rest-point": cmd_rest_point,
    "cramer": cmd_cramer,
    "path-cost": cmd_path_cost,
    "exit-time": cmd_exit_time,
    "stationary": cmd_stationary,
    "rate-compare": cmd_rate_compare,
    "laplace-dp": cmd_laplace_dp,
    "levelsets": cmd_levelsets,
    "verify": cmd_verify,
}

# parameters that belong in the config hash, per subcommand
PARAMS = {
    "simulate": ["pop_size", "horizon", "x0", "payoffs"],
    "mean-dynamic": ["horizon", "dt", "x0", "reverse"],
    "rest-point": [],
    "cramer": ["x", "z", "method"],
    "path-cost": ["path", "reverse_from", "horizon", "dt"],
    "exit-time": ["pop_size", "exit", "x0", "cap", "replicas", "payoffs"],
    "stationary": ["pop_size", "method", "payoffs"],
    "rate-compare": ["mode", "pop_sizes", "y", "delta", "exit", "x0", "cap", "replicas", "mesh", "eta"],
    "laplace-dp": ["pop_sizes", "target", "weight", "x0", "knots", "payoffs"],
    "levelsets": ["eta", "mesh"],
    "verify": [],
}


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; explicit flags override its entries")
    common.add_argument("--game", default=None, help=f"game JSON file or bundled name (default {DEFAULT_GAME})")
    common.add_argument("--protocol", default=None, help=f"protocol shorthand, e.g. logit:0.25 (default {DEFAULT_PROTOCOL})")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--workers", type=int, default=None, help="worker processes (EVO_LDP_WORKERS overrides)")
    common.add_argument("--payoffs", choices=["simple", "clever"], default="simple")

    p = argparse.ArgumentParser(prog="evoldp", description="Large deviations experiments for evolutionary game dynamics.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--pop-size", type=int, default=100)
    s.add_argument("--horizon", type=float, default=5.0)
    s.add_argument("--x0")

    s = sub.add_parser("mean-dynamic", parents=[common])
    s.add_argument("--horizon", type=float, default=10.0)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--x0")
    s.add_argument("--reverse", action="store_true")

    sub.add_parser("rest-point", parents=[common])

    s = sub.add_parser("cramer", parents=[common])
    s.add_argument("--x", required=True)
    s.add_argument("--z", required=True)
    s.add_argument("--method", choices=["dual", "primal_oracle"], default="dual")

    s = sub.add_parser("path-cost", parents=[common])
    s.add_argument("--path", help="CSV with columns t,x_1..x_n")
    s.add_argument("--reverse-from", help="cost of the reverse-time path from this state")
    s.add_argument("--horizon", type=float, default=200.0)
    s.add_argument("--dt", type=float, default=0.01)

    s = sub.add_parser("exit-time", parents=[common])
    s.add_argument("--pop-size", type=int, default=50)
    s.add_argument("--exit", default="ball:0.1", help="interval:i:lo:hi, ball:r or halfspace:w:level")
    s.add_argument("--x0", help="start state (default logit rest point)")
    s.add_argument("--cap", type=float, default=1e5)
    s.add_argument("--replicas", type=int, default=500)

    s = sub.add_parser("stationary", parents=[common])
    s.add_argument("--pop-size", type=int, default=50)
    s.add_argument("--method", choices=["exact", "birth_death", "empirical"], default="exact")

    s = sub.add_parser("rate-compare", parents=[common])
    s.add_argument("--mode", choices=["stationary", "exit_time"], default="stationary")
    s.add_argument("--pop-sizes", default="50,100,200,400")
    s.add_argument("--y")
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--exit", default="ball:0.1")
    s.add_argument("--x0")
    s.add_argument("--cap", type=float, default=1e6)
    s.add_argument("--replicas", type=int, default=500)
    s.add_argument("--mesh", type=int, default=140)
    s.add_argument("--eta", type=float)

    s = sub.add_parser("laplace-dp", parents=[common])
    s.add_argument("--pop-sizes", default="25,50,100,200")
    s.add_argument("--target", required=True)
    s.add_argument("--weight", type=float, default=1.0)
    s.add_argument("--x0")
    s.add_argument("--knots", type=int, default=0, help="also solve the path problem with this many knots")

    s = sub.add_parser("levelsets", parents=[common])
    s.add_argument("--eta", type=float)
    s.add_argument("--mesh", type=int, default=200)

    sub.add_parser("verify", parents=[common])
    if defaults:
        for sp in sub.choices.values():
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    return p


def read_config_file(path: str) -> dict:
    """Flat defaults from a JSON config: top-level game/protocol/seed plus a ``params`` block."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path!r}: {exc}") from None
    if doc.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise CliError(f"unsupported config schema {doc.get('schema')}")
    out = {k.replace("-", "_"): v for k, v in doc.get("params", {}).items()}
    for key in ("game", "protocol", "seed"):
        if key in doc:
            out[key] = doc[key]
    return out


def make_config(args) -> ExperimentConfig:
    game_ref = args.game or DEFAULT_GAME
    game = load_game_doc(game_ref) if isinstance(game_ref, str) else dict(game_ref)
    proto_ref = args.protocol or DEFAULT_PROTOCOL
    protocol = parse_protocol(proto_ref) if isinstance(proto_ref, str) else protocol_from_dict(proto_ref)
    seed = int(args.seed) if args.seed is not None else 0
    params = {k: getattr(args, k) for k in PARAMS[args.command]}
    cfg = ExperimentConfig(args.command, game, protocol.to_dict(), seed, params)
    cfg.build_game()
    return cfg


def validate(args):
    for name in ("pop_size", "replicas", "mesh", "knots"):
        v = getattr(args, name, None)
        if v is not None and v < (0 if name == "knots" else 1):
            raise CliError(f"--{name.replace('_', '-')} must be positive")
    if getattr(args, "knots", 0) == 1:
        raise CliError("--knots must be 0 or at least 2")
    for name in ("horizon", "dt", "cap"):
        v = getattr(args, name, None)
        if v is not None and not (v > 0 and math.isfinite(v)):
            raise CliError(f"--{name} must be positive and finite")
    if getattr(args, "eta", None) is not None and not args.eta > 0:
        raise CliError("--eta must be positive")


def main(argv=None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        defaults = read_config_file(known.config) if known.config else None
    except CliError as exc:
        print(f"evoldp: error: {exc}", file=sys.stderr)
        return 2
    args = build_parser(defaults).parse_args(argv)
    try:
        validate(args)
        cfg = make_config(args)
        art = Artifact(cfg)
        code = COMMANDS[args.command](cfg, args, art) or 0
        art.write(args.out)
        return code
    except (CliError, ConfigurationError, ValueError, KeyError, TypeError) as exc:
        print(f"evoldp {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
