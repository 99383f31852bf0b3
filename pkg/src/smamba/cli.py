"""Command-line entry point: ``smamba <subcommand> ...``.

Exit codes: 0 success, 1 usage or parse error, 2 training divergence,
3 uncontrollable/unobservable system, 4 check-suite failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import numerics
from .checkpoint import CheckpointError, load_checkpoint
from .checks import SUITES, run_suites
from .config import CORE_TAGS, CORE_ALIASES, Config, load_config
from .discretize import zoh
from .errors import (
    ConfigError,
    InputError,
    NotControllableError,
    NotObservableError,
    ParseError,
    TrainingDivergence,
    UnsupportedError,
)
from .model import a_part_per_group, param_census
from .scan import kernel
from .ssm import (
    char_poly,
    eigenvalues,
    format_state_space,
    is_hurwitz,
    observability_matrix,
    parse_state_space,
    reachability_matrix,
    realize_ccf,
    realize_ocf,
    to_ccf,
    to_ocf,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_RANK, EXIT_CHECK = 0, 1, 2, 3, 4

log = logging.getLogger("smamba")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(rows, pretty: bool, out=None) -> None:
    """Print ``rows`` (tuples) tab-separated, or column-aligned with ``pretty``."""
    out = out or sys.stdout
    rows = [tuple(str(c) for c in r) for r in rows]
    if not pretty:
        for r in rows:
            out.write("\t".join(r) + "\n")
        return
    if all(len(r) == 2 for r in rows):
        for k, v in rows:
            out.write(f"{k}: {v}\n")
        return
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(max(len(r) for r in rows))]
    for r in rows:
        out.write("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip() + "\n")


def _seed(args, cfg: Config | None = None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("SMAMBA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SMAMBA_SEED must be an integer, got {env!r}") from None
    return cfg.seed if cfg is not None else 0


def _config(args) -> Config:
    cfg = load_config(args.config, args.set or ())
    return cfg.replace(seed=_seed(args, cfg))


def _read_system(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return parse_state_space(text)


def _fmt_complex(z: complex) -> str:
    if z.imag == 0.0:
        return repr(z.real)
    return f"{z.real!r}{'+' if z.imag >= 0 else '-'}{abs(z.imag)!r}j"


# --- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    from .train import Corpus, train_run

    cfg = _config(args)
    if not os.path.isfile(args.corpus):
        raise UsageError(f"corpus not found: {args.corpus}")
    corpus = Corpus.from_file(args.corpus, 1.0 - cfg.val_fraction)
    try:
        result = train_run(cfg, corpus, args.out, steps=args.steps)
    except TrainingDivergence as exc:
        print(f"smamba: training diverged: {exc}; last good checkpoint in {args.out}", file=sys.stderr)
        return EXIT_DIVERGED
    nll = result.final_val_nll
    _emit(
        [
            ("core", cfg.core),
            ("seed", cfg.seed),
            ("steps", result.state.step),
            ("val_nll", repr(nll)),
            ("val_ppl", repr(float(np.exp(nll)))),
            ("baseline_ppl", repr(float(np.exp(corpus.order0_entropy())))),
            ("metrics", os.path.join(args.out, "metrics.tsv")),
            ("checkpoint", os.path.join(args.out, "checkpoint.smb")),
        ],
        args.pretty,
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import Corpus, evaluate

    try:
        state = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise UsageError(str(exc)) from None
    cfg = state.config
    if not os.path.isfile(args.corpus):
        raise UsageError(f"corpus not found: {args.corpus}")
    corpus = Corpus.from_file(args.corpus, 1.0 - cfg.val_fraction)
    nll = evaluate(state.model(), corpus, args.seq_len or cfg.seq_len, args.windows or cfg.eval_windows)
    _emit(
        [
            ("core", cfg.core),
            ("step", state.step),
            ("val_nll", repr(nll)),
            ("val_ppl", repr(float(np.exp(nll)))),
            ("baseline_ppl", repr(float(np.exp(corpus.order0_entropy())))),
        ],
        args.pretty,
    )
    return EXIT_OK


def cmd_analyze(args) -> int:
    s = _read_system(args.system)
    rr = numerics.rank(reachability_matrix(s))
    ro = numerics.rank(observability_matrix(s))
    eig = eigenvalues(s.A)
    _emit(
        [
            ("n", s.n),
            ("m", s.m),
            ("p", s.p),
            ("reachability rank", f"{rr}/{s.n}"),
            ("observability rank", f"{ro}/{s.n}"),
            ("characteristic polynomial", str(char_poly(s.A))),
            ("eigenvalues", ", ".join(_fmt_complex(z) for z in eig)),
            ("hurwitz", "true" if is_hurwitz(s.A) else "false"),
        ],
        args.pretty,
    )
    return EXIT_OK


def kernel_gap(a, b, delta: float = 0.1, L: int = 32) -> float:
    """Largest difference between the discrete impulse responses of two systems."""
    return float(np.max(np.abs(kernel(zoh(a, delta), L) - kernel(zoh(b, delta), L))))


def cmd_convert(args) -> int:
    s = _read_system(args.system)
    try:
        if args.to == "ccf":
            target = realize_ccf(to_ccf(s))
        else:
            target = realize_ocf(to_ocf(s))
    except (NotControllableError, NotObservableError) as exc:
        what = "reachability" if isinstance(exc, NotControllableError) else "observability"
        print(f"smamba: cannot convert to {args.to}: {what} rank {exc.rank}/{exc.n}", file=sys.stderr)
        return EXIT_RANK
    text = format_state_space(target)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    _emit([("kernel agreement", f"{kernel_gap(s, target):.3e}")], args.pretty, sys.stderr if not args.out else None)
    return EXIT_OK


def cmd_count(args) -> int:
    cfg = _config(args)
    if args.compare:
        tags = [CORE_ALIASES.get(t.strip(), t.strip()) for t in args.compare.split(",") if t.strip()]
        bad = [t for t in tags if t not in CORE_TAGS]
        if bad:
            raise UsageError(f"unknown core tag(s): {', '.join(bad)}")
        rows = [("core", "total", "delta", "a_part_per_group")]
        first = None
        for tag in tags:
            c = cfg.replace(core=tag)
            total = param_census(c).total
            first = total if first is None else first
            rows.append((tag, total, total - first, a_part_per_group(c)))
        _emit(rows, args.pretty)
        return EXIT_OK
    census = param_census(cfg)
    rows = [("name", "shape", "count", "role")]
    rows += [(name, "x".join(map(str, shape)), count, role) for name, shape, count, role, _ in census.rows]
    rows += [("role", role, count, "") for role, count in census.by_role().items()]
    rows.append(("a_part_per_group", a_part_per_group(cfg), "", ""))
    rows.append(("total", census.total, "", ""))
    _emit([tuple(c for c in r if c != "") for r in rows], args.pretty)
    return EXIT_OK


def cmd_check(args) -> int:
    suites = SUITES if args.suite in (None, "all") else tuple(s.strip() for s in args.suite.split(","))
    bad = [s for s in suites if s not in SUITES]
    if bad:
        raise UsageError(f"unknown suite(s): {', '.join(bad)}; choose from {', '.join(SUITES)}")
    rows = run_suites(suites, _seed(args))
    _emit([("suite", "name", "error", "tol", "status")] + [tuple(r.line().split("\t")) for r in rows], args.pretty)
    failed = [f"{r.suite}:{r.name}" for r in rows if not r.passed]
    for suite in suites:
        worst = max((r.error for r in rows if r.suite == suite), default=0.0)
        print(f"max\t{suite}\t{worst:.3e}")
    if failed:
        print(f"smamba: check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smamba", description="Canonical-form selective state-space models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(sp, config=True, seed=True):
        sp.add_argument("--pretty", action="store_true", help="aligned human-readable output")
        if config:
            sp.add_argument("--config", help="key = value config file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        if seed:
            sp.add_argument("--seed", type=int, help="random seed (default: $SMAMBA_SEED, then config)")

    sp = sub.add_parser("train", help="train a byte-level language model")
    common(sp)
    sp.add_argument("--corpus", required=True, help="plain text training corpus")
    sp.add_argument("--out", required=True, help="output directory for metrics.tsv and checkpoint.smb")
    sp.add_argument("--steps", type=int, help="stop after this many steps instead of epochs * steps_per_epoch")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="validation perplexity of a checkpoint")
    common(sp, config=False, seed=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--windows", type=int, help="number of validation windows")
    sp.add_argument("--seq-len", type=int, help="window length")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("analyze", help="rank, spectrum and stability report for a system file")
    common(sp, config=False, seed=False)
    sp.add_argument("system")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("convert", help="similarity-transform a system to canonical form")
    common(sp, config=False, seed=False)
    sp.add_argument("system")
    sp.add_argument("--to", choices=("ccf", "ocf"), required=True)
    sp.add_argument("--out", help="output file (default: stdout)")
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("count", help="parameter census")
    common(sp, seed=False)
    sp.add_argument("--compare", metavar="TAGS", help="comma-separated core tags, e.g. vanilla,ccf,ocf")
    sp.set_defaults(func=cmd_count)

    sp = sub.add_parser("check", help="gradient, view-equivalence and canonical-form self tests")
    common(sp, config=False)
    sp.add_argument("--suite", help=f"comma-separated subset of {', '.join(SUITES)} (default: all)")
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"smamba: {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigError, InputError, UnsupportedError, OSError) as exc:
        print(f"smamba: {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
