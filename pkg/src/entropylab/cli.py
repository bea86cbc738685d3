"""Command-line front end.

    entropylab constants --p 2 --sigma constant --w constant
    entropylab verify --target max --seed 7 --depth 6 --p 2
    entropylab search --target lemma --p 3 --budget 2000 --seed 1
    entropylab gen --sigma "lognormal:seed=3,variance=2" --depth 5
    entropylab selftest

Exit status: 0 success, 1 selftest failure, 2 invalid configuration,
3 degenerate input, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from . import __version__
from .constants import joint_bump, product_bump, sparse_Ainfty, sparse_Ap
from .dyadic import MAX_DEPTH, EpsilonFn
from .errors import DegenerateInputError, EntropyLabError
from .normlab import carleson_constant, maximal_norm, sawyer_testing, sparse_norm
from .parallel import resolve_threads
from .verify import (
    REPORT_VERSION,
    SUITE_SIZES,
    TARGETS,
    _clean,
    reports_to_csv,
    resolve_collection,
    resolve_weight,
    run_checker,
    run_suite,
    sharpness_search,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_IO = 0, 1, 2, 3, 4

COMMANDS = ("constants", "norm", "verify", "search", "gen")
RANDOMIZED = ("norm", "verify", "search")
TARGET_ALIASES = {"max": "max-thm", "one": "thm-one", "two": "thm-two", "ap-ainfty": "lemma"}


class ConfigError(EntropyLabError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    p: Optional[float] = None
    delta: float = 1.0
    dimension: int = 1
    depth: int = 6
    sigma: Optional[dict] = None
    w: Optional[dict] = None
    sparse: Optional[dict] = None
    target: str = "max-thm"
    trials: int = 8
    tol: float = 1e-8
    budget: int = 1000
    seed: Optional[int] = None
    instances: int = 1
    suite: bool = False
    out: Optional[str] = None
    format: str = "json"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        if "command" not in data:
            raise ConfigError("missing required field 'command'")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        self.target = TARGET_ALIASES.get(self.target, self.target)
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}; expected one of {TARGETS}")
        if self.command != "gen":
            if self.p is None:
                raise ConfigError("missing required field 'p'")
            if not 1 < float(self.p) < float("inf"):
                raise ConfigError(f"field 'p' must lie in (1, inf), got {self.p}")
        if not float(self.delta) > 0:
            raise ConfigError(f"field 'delta' must be positive, got {self.delta}")
        if self.dimension not in MAX_DEPTH:
            raise ConfigError(f"field 'dimension' must be 1 or 2, got {self.dimension}")
        if not 1 <= self.depth <= MAX_DEPTH[self.dimension]:
            raise ConfigError(f"field 'depth' must lie in [1, {MAX_DEPTH[self.dimension]}]")
        if self.command in RANDOMIZED and self.seed is None:
            raise ConfigError(f"missing required field 'seed' (command {self.command!r} is randomized)")
        if self.trials < 0 or self.budget < 0 or self.instances < 1:
            raise ConfigError("fields 'trials', 'budget' must be >= 0 and 'instances' >= 1")
        if not self.tol > 0:
            raise ConfigError("field 'tol' must be positive")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"field 'format' must be json or csv, got {self.format!r}")
        if self.command == "gen" and self.sigma is None:
            raise ConfigError("missing required field 'sigma' (the weight to generate)")


# ---------------------------------------------------------------------------
# parsing


def parse_weight_arg(text: str) -> dict:
    """``'{"kind": ...}'`` JSON or the short form ``kind[:key=value,...]``."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad weight JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    kind, _, rest = text.partition(":")
    out = {"kind": kind}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"bad weight parameter {item!r}; expected key=value")
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    return out


def load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entropylab", description="Entropy-bump two-weight toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file; flags override its fields")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="worker threads (fallback: $ENTROPYLAB_THREADS)")
        sp.add_argument("--p", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--depth", type=int)
        sp.add_argument("--dimension", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--budget", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--target")
        sp.add_argument("--sigma", type=parse_weight_arg, help="weight spec for sigma")
        sp.add_argument("--w", type=parse_weight_arg, help="weight spec for w")
        sp.add_argument("--sparse", type=parse_weight_arg,
                        help="sparse spec: stopping-tree | root | explicit JSON")
        sp.add_argument("--instances", type=int)
        sp.add_argument("--suite", action="store_true", default=None,
                        help="run the canonical seeded suite for --target")

    st = sub.add_parser("selftest")
    st.add_argument("--fixtures", help="fixture file (default: the embedded suite)")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = load_config_file(args.config) if args.config else {}
    data.setdefault("command", args.command)
    if data["command"] != args.command:
        raise ConfigError(f"config command {data['command']!r} does not match {args.command!r}")
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None and f.name != "command":
            data[f.name] = value
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# dispatch


def _weight_spec(cfg: ExperimentConfig, which: str) -> dict:
    spec = getattr(cfg, which)
    if spec is None:
        if cfg.command in RANDOMIZED:
            spec = {"kind": "lognormal", "seed": cfg.seed * 2 + (which == "w"), "variance": 1.0}
        else:
            spec = {"kind": "constant"}
    spec = dict(spec)
    if which == "w" and cfg.sigma is not None:
        spec.setdefault("dimension", cfg.sigma.get("dimension", cfg.dimension))
        spec.setdefault("depth", cfg.sigma.get("depth", cfg.depth))
    spec.setdefault("dimension", cfg.dimension)
    spec.setdefault("depth", cfg.depth)
    return spec


def _inputs(cfg: ExperimentConfig) -> dict:
    return {k: v for k, v in cfg.to_dict().items() if k not in ("out", "format")}


def _envelope(cfg: ExperimentConfig, body: dict) -> dict:
    return _clean({"report_version": REPORT_VERSION, "command": cfg.command, "inputs": _inputs(cfg), **body})


def _flat_csv(record: dict) -> str:
    rows = [(k, v) for k, v in record.items() if isinstance(v, (int, float, str)) and not isinstance(v, bool)]
    return "key,value\n" + "".join(f"{k},{repr(v) if isinstance(v, float) else v}\n" for k, v in rows)


def run_constants(cfg: ExperimentConfig):
    sigma, sdict = resolve_weight(_weight_spec(cfg, "sigma"))
    w, wdict = resolve_weight(_weight_spec(cfg, "w"), sigma.dimension, sigma.depth)
    eps = EpsilonFn.joint(cfg.delta)
    body = {
        "sigma": sdict,
        "w": wdict,
        "joint_bump": joint_bump(sigma, w, cfg.p, eps).to_dict(),
        "product_bump": product_bump(sigma, w, cfg.p, eps).to_dict(),
    }
    if cfg.sparse is not None:
        S = resolve_collection(cfg.sparse, sigma)
        body["sparse"] = S.to_dict()
        body["sparse_Ap"] = sparse_Ap(sigma, w, cfg.p, S).to_dict()
        body["sparse_Ainfty"] = sparse_Ainfty(sigma, S).to_dict()
    report = _envelope(cfg, body)
    flat = {"joint_bump": report["joint_bump"]["value"], "product_bump": report["product_bump"]["value"]}
    return report, _flat_csv(flat)


def run_norm(cfg: ExperimentConfig, threads: int):
    sigma, sdict = resolve_weight(_weight_spec(cfg, "sigma"))
    w, wdict = resolve_weight(_weight_spec(cfg, "w"), sigma.dimension, sigma.depth)
    S = resolve_collection(cfg.sparse, sigma)
    mnorm = maximal_norm(sigma, w, cfg.p, trials=cfg.trials, seed=cfg.seed)
    snorm = sparse_norm(S, sigma, w, cfg.p, trials=cfg.trials, tol=cfg.tol, seed=cfg.seed, threads=threads)
    testing = sawyer_testing(S, sigma, w, cfg.p)
    carleson = carleson_constant(sigma, S, cfg.p, trials=cfg.trials, seed=cfg.seed)
    report = _envelope(cfg, {
        "sigma": sdict,
        "w": wdict,
        "sparse": S.to_dict(),
        "maximal_norm": mnorm.to_dict(),
        "sparse_norm": snorm.to_dict(),
        "testing": testing.to_dict(),
        "carleson": carleson.to_dict(),
    })
    flat = {"maximal_norm": mnorm.value, "maximal_testing": mnorm.details["testing"],
            "sparse_norm": snorm.value, "sparse_norm_kind": snorm.kind,
            "testing_forward": testing.forward, "testing_dual": testing.dual,
            "carleson_testing": carleson.testing, "carleson_lower_bound": carleson.lower_bound}
    return report, _flat_csv(flat)


def run_verify(cfg: ExperimentConfig, threads: int):
    if cfg.suite:
        n = cfg.instances if cfg.instances > 1 else SUITE_SIZES[cfg.target]
        reports = run_suite(cfg.target, n, base_seed=cfg.seed, threads=threads, trials=cfg.trials)
    elif cfg.instances > 1:
        reports = []
        for k in range(cfg.instances):
            sub = ExperimentConfig(**{**cfg.to_dict(), "seed": cfg.seed + k, "instances": 1})
            reports.append(run_checker(cfg.target, _weight_spec(sub, "sigma"), _weight_spec(sub, "w"),
                                       cfg.p, cfg.delta, seed=sub.seed, trials=cfg.trials,
                                       sparse_spec=cfg.sparse, tol=cfg.tol))
    else:
        reports = [run_checker(cfg.target, _weight_spec(cfg, "sigma"), _weight_spec(cfg, "w"), cfg.p,
                               cfg.delta, seed=cfg.seed, trials=cfg.trials, sparse_spec=cfg.sparse,
                               tol=cfg.tol)]
    if len(reports) == 1:
        body = reports[0].to_dict()
    else:
        ratios = [r.ratio for r in reports]
        worst = max(range(len(ratios)), key=lambda i: ratios[i])
        body = _envelope(cfg, {"max_ratio": ratios[worst], "argmax": worst,
                               "reports": [r.to_dict() for r in reports]})
    return body, reports_to_csv(reports)


def run_search(cfg: ExperimentConfig):
    report = sharpness_search(cfg.target, cfg.p, cfg.delta, cfg.depth, cfg.budget, cfg.seed,
                              dimension=cfg.dimension, trials=min(cfg.trials, 2))
    return report.to_dict(), reports_to_csv([report])


def run_gen(cfg: ExperimentConfig):
    weight, spec = resolve_weight(_weight_spec(cfg, "sigma"))
    body = weight.to_dict()
    csv_text = "leaf,density\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(weight.values.ravel().tolist()))
    return _clean({"spec": spec, **body}), csv_text


def write_atomic(path: str, text: str) -> None:
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(target.parent or Path(".")), prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg: ExperimentConfig, threads: Optional[int] = None) -> str:
    """Execute ``cfg`` and return the rendered report text."""
    threads = resolve_threads(threads)
    if cfg.command == "constants":
        body, csv_text = run_constants(cfg)
    elif cfg.command == "norm":
        body, csv_text = run_norm(cfg, threads)
    elif cfg.command == "verify":
        body, csv_text = run_verify(cfg, threads)
    elif cfg.command == "search":
        body, csv_text = run_search(cfg)
    else:
        body, csv_text = run_gen(cfg)
    if cfg.format == "csv":
        return csv_text
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# selftest


def default_fixture_path():
    return resources.files("entropylab").joinpath("fixtures.json")


def selftest(path=None, stream=None) -> int:
    from .fixtures import FixtureError, run_fixtures

    stream = stream or sys.stdout
    path = path or default_fixture_path()
    try:
        results = run_fixtures(path)
    except FixtureError as exc:
        print(f"FAIL fixture file {path}: {exc}", file=stream)
        return EXIT_FAIL
    failed = 0
    for res in results:
        if res.passed:
            print(f"PASS {res.name}", file=stream)
        else:
            failed += 1
            print(f"FAIL {res.name}: {res.message}", file=stream)
    print(f"{len(results) - failed}/{len(results)} fixtures passed", file=stream)
    return EXIT_OK if failed == 0 else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if args.command == "selftest":
        return selftest(args.fixtures)
    try:
        cfg = config_from_args(args)
        text = run(cfg, args.threads)
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (EntropyLabError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if cfg.out:
            write_atomic(cfg.out, text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
