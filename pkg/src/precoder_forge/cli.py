"""Command-line front end: ``sweep``, ``optimize``, ``pgp``, ``selftest`` and ``timing``.

SNR convention: ``--snrb`` is the per-bit SNR in dB; the symbol SNR is
SNR = SNR_b * log2(M) (linear) and the noise variance is sigma^2 = 1/SNR.
Both are written to the CSV.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(including a failed selftest), 3 file I/O or parse error.
"""
import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from math import gamma

import numpy as np

from . import __version__
from ._backend import BACKEND
from .channels import (BUILTIN_NAMES, NoiseModel, builtin, ensemble, load_channel, svd_factor,
                       virtual_sigma)
from .constellation import SUPPORTED_ORDERS, make_qam
from .errors import (BudgetExceeded, DimensionMismatch, IndexOutOfRange, InvalidCorrelation,
                     InvalidGroupSize, NumericalFailure, ParseError, PrecoderForgeError,
                     QuadratureOverflow, UnknownChannel, UnsupportedOrder)
from .gradients import grad_w, mi_and_grad_m
from .mi import (EffectiveChannel, OpCounter, hermitian_part, mi_gh, mi_mc, op_count_formula,
                 psd_sqrt)
from .optimizer import OptimizerParams, no_precoding_baseline, optimize, precoded_mi
from .pgp import GroupPlan, no_precoding_per_group, optimize_pgp, plan_groups
from .quadrature import hermite_rule

CSV_FIELDS = ("snr_b_db", "snr_db", "sigma2", "mi_bits", "method", "precoder", "iters", "wall_ms",
              "op_count")
EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class SweepConfig:
    channel: str = "h1"
    channel_file: str | None = None
    mod: int = 16
    snrb: str = "-10:20:2"
    precoder: str = "none"
    method: str = "gh"
    gh_order: int = 3
    mc_samples: int = 100_000
    seed: int = 0
    groups: int = 2
    pairing: str = "consecutive"
    draws: int = 1
    workers: int = 1
    out: str | None = None
    gnuplot: str | None = None
    record_wall: bool = False


_CONFIG_KEYS = {f.name for f in fields(SweepConfig)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def parse_grid(text):
    """``a,b,c`` or ``start:stop:step`` (inclusive stop) into an ascending list of floats."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError
            start, stop, step = parts
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            vals = [round(start + i * step, 10) for i in range(max(n, 0))]
        else:
            vals = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse SNR grid {text!r}; use a,b,c or start:stop:step") from None
    if not vals:
        raise UsageError("SNR grid is empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise UsageError("SNR grid must be strictly ascending")
    return vals


def parse_channel_spec(spec, seed, draws):
    """Builtin name, ``gauss:NRxNT`` or ``kron:NRxNT:rho`` into a list of channel draws."""
    spec = spec.strip()
    if spec in BUILTIN_NAMES:
        return [builtin(spec)] * max(1, draws)
    kind, _, rest = spec.partition(":")
    try:
        if kind == "gauss":
            n_r, n_t = (int(v) for v in rest.lower().split("x"))
            return ensemble("gaussian", n_r, n_t, draws, seed=seed)
        if kind == "kron":
            dims, rho = rest.split(":")
            n_r, n_t = (int(v) for v in dims.lower().split("x"))
            rho = float(rho)
            return ensemble("kronecker", n_r, n_t, draws, seed=seed, rho_r=rho, rho_t=rho)
    except ValueError:
        raise UsageError(f"malformed channel spec {spec!r}") from None
    raise UnknownChannel(f"unknown channel {spec!r}; expected {', '.join(BUILTIN_NAMES)}, "
                         "gauss:NRxNT or kron:NRxNT:rho")


def _add_common(p, snrb_help="per-bit SNR grid in dB: a,b,c or start:stop:step"):
    p.add_argument("--config", help="JSON file with SweepConfig keys (flags override it)")
    p.add_argument("--channel", help=f"{'|'.join(BUILTIN_NAMES)}|gauss:NRxNT|kron:NRxNT:rho")
    p.add_argument("--channel-file", help="JSON channel file (overrides --channel)")
    p.add_argument("--mod", type=int, help=f"QAM order, one of {SUPPORTED_ORDERS}")
    p.add_argument("--snrb", help=snrb_help)
    p.add_argument("--gh-order", type=int, help="Gauss-Hermite order L")
    p.add_argument("--seed", type=int, help="seed for channel draws and Monte Carlo")
    p.add_argument("--draws", type=int, help="channel draws for random ensembles (ergodic mean)")
    p.add_argument("--groups", type=int, help="PGP group size")
    p.add_argument("--pairing", choices=("consecutive", "max_min"))
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("--out", help="output path (stdout if omitted)")


def build_parser():
    parser = _Parser(prog="precoder-forge", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", help="mutual information over an SNR_b grid, CSV output")
    _add_common(p)
    p.add_argument("--precoder", choices=("none", "optimal", "pgp"))
    p.add_argument("--method", choices=("gh", "mc"), help="Gauss-Hermite or Monte Carlo (precoder none only)")
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--gnuplot", help="also write a gnuplot script plotting the CSV")
    p.add_argument("--record-wall", action="store_true", default=None,
                   help="fill wall_ms (output is then no longer byte-reproducible)")

    p = sub.add_parser("optimize", help="optimize the precoder at one SNR_b, JSON output")
    _add_common(p, "per-bit SNR in dB (single value)")
    p.add_argument("--trajectory-csv", help="write the per-iteration trajectory to this CSV")

    p = sub.add_parser("pgp", help="per-group optimization at one SNR_b, JSON output")
    _add_common(p, "per-bit SNR in dB (single value)")
    p.add_argument("--plan", help="GroupPlan JSON file (overrides --groups/--pairing)")

    p = sub.add_parser("selftest", help="quadrature, GH vs MC, gradient and op-count checks")
    p.add_argument("--gh-order", type=int, default=3)
    p.add_argument("--mc-samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("timing", help="wall time of one mi_gh and one grad_w evaluation")
    p.add_argument("--mod", type=int, default=16)
    p.add_argument("--nt", type=int, default=2)
    p.add_argument("--nr", type=int, default=2)
    p.add_argument("--gh-order", type=int, default=3)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--compare-mod", type=int, default=32,
                   help="second QAM order for the ratio report (0 disables)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args):
    """Merge defaults < config file < flags."""
    cfg = asdict(SweepConfig())
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(data)
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg = SweepConfig(**cfg)
    if cfg.gh_order < 1:
        raise UsageError("--gh-order must be at least 1")
    if cfg.draws < 1 or cfg.workers < 1 or cfg.mc_samples < 2:
        raise UsageError("--draws and --workers must be >= 1, --mc-samples >= 2")
    return cfg


def _channels(cfg):
    if cfg.channel_file:
        return [load_channel(cfg.channel_file)]
    return parse_channel_spec(cfg.channel, cfg.seed, cfg.draws)


def _sweep_point(cfg, chans, c, rule, snrb):
    noise = NoiseModel.from_snrb_db(snrb, c.order)
    t0 = time.perf_counter()
    vals, iters, ops = [], 0, 0
    for i, h in enumerate(chans):
        counter = OpCounter()
        if cfg.precoder == "none":
            if cfg.method == "mc":
                est = mi_mc(EffectiveChannel.product(h), c, noise, cfg.mc_samples, seed=cfg.seed + i)
                vals.append(est.bits)
                ops = None
                continue
            vals.append(no_precoding_baseline(h, c, noise, rule, counter=counter).bits)
        elif cfg.precoder == "optimal":
            res = optimize(h, c, noise, rule)
            vals.append(precoded_mi(h, res.g, c, noise, rule, counter=counter).bits)
            iters = max(iters, res.iterations)
        else:
            res = optimize_pgp(h, c, noise, rule, group_size=cfg.groups, pairing=cfg.pairing)
            vals.append(res.mi_total_bits)
            for g in res.plan.groups:
                counter.charge(c.order ** len(g), c.order, len(g), len(g), rule.order)
            iters = max(iters, max(p.iterations for p in res.per_group))
        ops += counter.ops
    wall = (time.perf_counter() - t0) * 1e3
    return {
        "snr_b_db": repr(float(snrb)),
        "snr_db": repr(float(10 * np.log10(noise.snr))),
        "sigma2": repr(float(noise.sigma2)),
        "mi_bits": repr(float(np.mean(vals))),
        "method": "monte_carlo" if cfg.method == "mc" and cfg.precoder == "none" else "gauss_hermite",
        "precoder": cfg.precoder,
        "iters": iters,
        "wall_ms": f"{wall:.1f}" if cfg.record_wall else "",
        "op_count": "" if ops is None else ops,
    }


def _gnuplot_script(csv_path, cfg):
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set xlabel 'SNR_b (dB)'\n"
        "set ylabel 'I(x;y) (b/s/Hz)'\n"
        "set grid\n"
        f"plot '{csv_path}' using 1:4 with linespoints title '{cfg.channel} M={cfg.mod} {cfg.precoder}'\n"
    )


def _emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_sweep(cfg):
    if cfg.method == "mc" and cfg.precoder != "none":
        raise UsageError("--method mc is only available with --precoder none")
    grid = parse_grid(cfg.snrb)
    c = make_qam(cfg.mod)
    rule = hermite_rule(cfg.gh_order)
    chans = _channels(cfg)

    def point(s):
        return _sweep_point(cfg, chans, c, rule, s)

    if cfg.workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(point, grid))
    else:
        rows = [point(s) for s in grid]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    _emit(buf.getvalue(), cfg.out)
    if cfg.gnuplot:
        with open(cfg.gnuplot, "w") as fh:
            fh.write(_gnuplot_script(cfg.out or "sweep.csv", cfg))
    return 0


def _single_snrb(cfg):
    grid = parse_grid(cfg.snrb)
    if len(grid) != 1:
        raise UsageError("this command takes a single --snrb value")
    return grid[0]


def _matrix_json(a):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a)]


def _dump(obj, out):
    _emit(json.dumps(obj, indent=1, sort_keys=True) + "\n", out)


def cmd_optimize(cfg, trajectory_csv=None):
    snrb = _single_snrb(cfg)
    c = make_qam(cfg.mod)
    rule = hermite_rule(cfg.gh_order)
    noise = NoiseModel.from_snrb_db(snrb, c.order)
    runs = []
    for h in _channels(cfg):
        res = optimize(h, c, noise, rule, workers=cfg.workers)
        base = no_precoding_baseline(h, c, noise, rule)
        runs.append({
            "mi_bits": res.mi_bits,
            "no_precoding_bits": base.bits,
            "iterations": res.iterations,
            "converged": res.converged,
            "stalled": res.stalled,
            "sigma_g2": [float(v) for v in res.state.sigma_g2],
            "g": _matrix_json(res.g),
            "trajectory": res.trajectory,
        })
        if trajectory_csv and len(runs) == 1:
            with open(trajectory_csv, "w", newline="") as fh:
                fh.write(res.trajectory_csv())
    out = {"snr_b_db": snrb, "sigma2": noise.sigma2, "mod": cfg.mod, "gh_order": cfg.gh_order,
           "runs": runs, "mean_mi_bits": float(np.mean([r["mi_bits"] for r in runs]))}
    _dump(out, cfg.out)
    return 0


def cmd_pgp(cfg, plan_path=None):
    snrb = _single_snrb(cfg)
    c = make_qam(cfg.mod)
    rule = hermite_rule(cfg.gh_order)
    noise = NoiseModel.from_snrb_db(snrb, c.order)
    plan = None
    if plan_path:
        with open(plan_path) as fh:
            text = fh.read()
        try:
            plan = GroupPlan.from_json(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{plan_path}: {exc.msg}", line=exc.lineno, column=exc.colno) from exc
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{plan_path}: missing or invalid plan field {exc}") from exc
    runs = []
    for h in _channels(cfg):
        p = plan or plan_groups(virtual_sigma(svd_factor(h).sigma_h, h.shape[1]), cfg.groups,
                                cfg.pairing, n_r=h.shape[0])
        res = optimize_pgp(h, c, noise, rule, plan=p, workers=cfg.workers)
        base = no_precoding_per_group(h, c, noise, rule, p)
        runs.append({
            "mi_total_bits": res.mi_total_bits,
            "group_mi_bits": res.group_mi,
            "no_precoding_per_group_bits": base.bits,
            "plan": p.to_dict(),
        })
    vals = np.array([r["mi_total_bits"] for r in runs])
    out = {"snr_b_db": snrb, "sigma2": noise.sigma2, "mod": cfg.mod, "gh_order": cfg.gh_order,
           "runs": runs, "mean_mi_bits": float(vals.mean())}
    _dump(out, cfg.out)
    return 0


def _check(lines, name, ok, detail):
    lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


def cmd_selftest(gh_order=3, mc_samples=50_000, seed=0, stream=None):
    stream = sys.stdout if stream is None else stream
    lines = []
    ok = True

    worst = 0.0
    for L in range(1, 11):
        r = hermite_rule(L)
        for p in range(2 * L):
            exact = 0.0 if p % 2 else _gauss_moment(p)
            worst = max(worst, abs(float(np.sum(r.weights * r.nodes**p)) - exact))
    ok &= _check(lines, "quadrature exactness L=1..10", worst <= 1e-10, f"max error {worst:.2e}")

    try:
        rule = hermite_rule(gh_order)
    except UnsupportedOrder as exc:
        _check(lines, "gauss-hermite rule", False, str(exc))
        stream.write("\n".join(lines) + "\n")
        return EXIT_NUMERIC
    c = make_qam(16)
    h = builtin("h1")
    diffs = []
    for snrb in (-10.0, 0.0, 10.0, 20.0):
        noise = NoiseModel.from_snrb_db(snrb, 16)
        gh = mi_gh(EffectiveChannel.product(h), c, noise, rule).bits
        mc = mi_mc(EffectiveChannel.product(h), c, noise, mc_samples, seed=seed)
        tol = max(0.05, 3 * mc.std_err)
        diffs.append((snrb, gh - mc.bits, tol))
    bad = [d for d in diffs if abs(d[1]) > d[2]]
    detail = ", ".join(f"{s:+.0f} dB {d:+.4f}" for s, d, _ in diffs)
    ok &= _check(lines, f"GH(L={gh_order}) vs MC on h1/M=16", not bad, detail)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(3):
        b = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        m = psd_sqrt(b.conj().T @ b)
        worst = max(worst, _fd_error(m, c, NoiseModel.from_snr_db(0.0), rule))
    ok &= _check(lines, "grad_m vs central differences", worst <= 1e-3, f"max rel. error {worst:.2e}")

    r_m = op_count_formula(32, 2, 2, 3) / op_count_formula(16, 2, 2, 3)
    ok &= _check(lines, "op-count ratio M 16->32", r_m == 4.0, f"{r_m:g}")
    counter = OpCounter()
    noise = NoiseModel.from_snr_db(10.0)
    mi_gh(EffectiveChannel.product(np.eye(2)), make_qam(4), noise, hermite_rule(3), counter=counter)
    c2 = counter.ops
    mi_gh(EffectiveChannel.product(np.eye(3, 2)), make_qam(4), noise, hermite_rule(3), counter=counter)
    r_n = (counter.ops - c2) / c2
    want = 25 * (3 * 6) / (2 * 5)
    ok &= _check(lines, "op-count ratio N_r 2->3", abs(r_n - want) < 1e-12, f"{r_n:g} (formula {want:g})")
    stream.write("\n".join(lines) + "\n")
    return 0 if ok else EXIT_NUMERIC


def _gauss_moment(p):
    """int x^p exp(-x^2) dx for even p: Gamma((p+1)/2)."""
    return gamma((p + 1) / 2)


def _fd_error(m, c, noise, rule, step=1e-4):
    eff = EffectiveChannel(m, "sqrt_w")
    _, gm = mi_and_grad_m(eff, c, noise, rule)
    f = lambda x: mi_gh(EffectiveChannel(hermitian_part(x), "sqrt_w"), c, noise, rule).bits
    fd, an = [], []
    n = m.shape[0]
    for i in range(n):
        for j in range(i, n):
            for part in ((1.0,) if i == j else (1.0, 1j)):
                e = np.zeros((n, n), complex)
                e[i, j] = part
                e[j, i] = np.conj(part)
                fd.append((f(m + step * e) - f(m - step * e)) / (2 * step))
                an.append(float(np.real(np.vdot(gm, e))))
    fd, an = np.array(fd), np.array(an)
    return float(np.abs(fd - an).max() / np.abs(an).max())


def _time_once(M, n_t, n_r, L, reps, seed):
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal((n_r, n_t)) + 1j * rng.standard_normal((n_r, n_t))) / np.sqrt(2)
    c = make_qam(M)
    rule = hermite_rule(L)
    noise = NoiseModel.from_snr_db(10.0)
    eff = EffectiveChannel.product(h)
    m = eff.sufficient_statistic()
    t_mi, t_gw = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        mi_gh(eff, c, noise, rule)
        t_mi.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        _, gm = mi_and_grad_m(m, c, noise, rule)
        grad_w(m.matrix, gm)
        t_gw.append(time.perf_counter() - t0)
    return float(np.mean(t_mi)), float(np.mean(t_gw))


def cmd_timing(M, n_t, n_r, L, reps, compare_mod=32, seed=0, stream=None):
    stream = sys.stdout if stream is None else stream
    if reps < 1:
        raise UsageError("--reps must be at least 1")
    t_mi, t_gw = _time_once(M, n_t, n_r, L, reps, seed)
    lines = [f"backend {BACKEND}",
             f"M={M} N_t={n_t} N_r={n_r} L={L} reps={reps}",
             f"mi_gh mean {t_mi:.4f} s (reference order 0.25 s)",
             f"grad_w mean {t_gw:.4f} s (reference order 0.54 s)"]
    if compare_mod:
        t2, _ = _time_once(compare_mod, n_t, n_r, L, reps, seed)
        ratio = t2 / t_mi
        flops = op_count_formula(compare_mod, n_t, n_r, L) / op_count_formula(M, n_t, n_r, L)
        lines.append(f"mi_gh M={compare_mod} mean {t2:.4f} s, ratio {ratio:.2f} "
                     f"(op-count ratio {flops:g}; band [2.5, 6] {'met' if 2.5 <= ratio <= 6 else 'not met'})")
    stream.write("\n".join(lines) + "\n")
    return 0


_USAGE_ERRORS = (UsageError, UnsupportedOrder, UnknownChannel, InvalidGroupSize, InvalidCorrelation,
                 IndexOutOfRange, DimensionMismatch)
_NUMERIC_ERRORS = (BudgetExceeded, NumericalFailure, QuadratureOverflow)


def _glue_negative_values(argv):
    """Let ``--snrb -10:20:2`` through; argparse would read the value as an option."""
    out = []
    it = iter(argv)
    for a in it:
        if a == "--snrb":
            val = next(it, None)
            out.append(a if val is None else f"--snrb={val}")
        else:
            out.append(a)
    return out


def run(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_negative_values(argv))
    if args.command == "selftest":
        if args.gh_order < 1 or args.mc_samples < 2:
            raise UsageError("--gh-order must be >= 1 and --mc-samples >= 2")
        return cmd_selftest(args.gh_order, args.mc_samples, args.seed)
    if args.command == "timing":
        return cmd_timing(args.mod, args.nt, args.nr, args.gh_order, args.reps, args.compare_mod,
                          args.seed)
    cfg = load_config(args)
    if args.command == "sweep":
        return cmd_sweep(cfg)
    if args.command == "optimize":
        return cmd_optimize(cfg, args.trajectory_csv)
    return cmd_pgp(cfg, args.plan)


def main(argv=None):
    try:
        return run(argv)
    except SystemExit as exc:
        # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PrecoderForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
