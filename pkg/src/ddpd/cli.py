"""Command-line entry point: ``ddpd <subcommand> [flags]``.

Any flag may also come from a JSON config (``--config``); flags given on the
command line win. Every run writes a manifest JSON recording versions, seeds,
resolved flags and SHA-256 hashes of inputs and outputs.

Exit codes: 0 ok, 1 usage error, 2 invariant violation, 3 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import DDPDError, NoiseKind, make_rng
from .datasets import ingest_corpus, load_dist, make_markov, make_parity, save_dist
from .elbo import elbo_mask, elbo_uniform_ddpd
from .evaluation import (
    CSV_FIELDS,
    denoise_accuracy,
    error_correction_benchmark,
    mask_prediction_accuracy,
    tv_standard_error,
    tv_to_truth,
    write_rows_csv,
    write_rows_json,
)
from .models import (
    MASK_FLAVOR,
    Denoiser,
    LogisticDenoiser,
    LogisticPlanner,
    MaskComposedDenoiser,
    MaskIndicatorPlanner,
    OracleDenoiser,
    OraclePlanner,
    TabularDenoiser,
    TabularPlanner,
    load_model,
    save_model,
)
from .oracle import EnumerableDist
from .samplers import (
    SamplerConfig,
    confidence_baseline,
    ddpd_sample,
    gillespie_selfloop,
    tau_leaping,
)
from .training import TrainConfig, fit
from .verification import run_verification

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_VERIFY = 0, 1, 2, 3
SHARD_SIZE = 4096


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def csv_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def csv_ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def n_threads() -> int:
    raw = os.environ.get("DDPD_THREADS")
    if raw:
        try:
            v = int(raw)
        except ValueError:
            raise UsageError(f"DDPD_THREADS must be an integer, got {raw!r}") from None
        if v < 1:
            raise UsageError("DDPD_THREADS must be >= 1")
        return v
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# data and model specs
# ---------------------------------------------------------------------------


def load_data(path):
    """An enumerable fixture, or a corpus descriptor written by ``make-data --kind corpus``."""
    obj = json.loads(Path(path).read_text())
    if obj.get("type") == "corpus":
        base = Path(path).parent
        return ingest_corpus(base / obj["corpus"], obj["chunk_d"], base / obj["vocab"],
                             obj.get("size_s"))
    return load_dist(path)


def _need_dist(data, what):
    if not isinstance(data, EnumerableDist):
        raise UsageError(f"{what} needs an enumerable --data fixture")
    return data


def resolve_planner(choice, data):
    """``oracle`` (clock-aware), ``oracle-marginal``, ``mask`` (indicator), or a model file."""
    if choice in ("oracle", "oracle-marginal"):
        dist = _need_dist(data, "an oracle planner")
        return OraclePlanner(dist, time="clock" if choice == "oracle" else "marginal")
    if choice == "mask":
        if data is None:
            raise UsageError("the mask planner needs --data for its vocabulary")
        return MaskIndicatorPlanner(data.vocab)
    model = load_model(choice)
    if not isinstance(model, (TabularPlanner, LogisticPlanner)):
        raise UsageError(f"{choice} does not hold a planner")
    return model


def resolve_denoiser(choice, data) -> Denoiser:
    """``oracle``, ``oracle-marginal``, ``oracle-mask``, or a model file."""
    if choice in ("oracle", "oracle-marginal", "oracle-mask"):
        dist = _need_dist(data, "an oracle denoiser")
        if choice == "oracle-mask":
            return OracleDenoiser(dist, flavor=MASK_FLAVOR)
        return OracleDenoiser(dist, time="clock" if choice == "oracle" else "marginal")
    model = load_model(choice)
    if not isinstance(model, (TabularDenoiser, LogisticDenoiser)):
        raise UsageError(f"{choice} does not hold a denoiser")
    return model


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def write_manifest(args, inputs, outputs, extra=None) -> Path:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "manifest")}
    manifest = {
        "command": args.command,
        "flags": flags,
        "seed": flags.get("seed"),
        "versions": {"ddpd": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "inputs": {str(p): sha256_file(p) for p in inputs if p and Path(p).is_file()},
        "outputs": {str(p): sha256_file(p) for p in outputs if p and Path(p).is_file()},
    }
    if extra:
        manifest.update(extra)
    path = args.manifest
    if path is None:
        primary = next((p for p in outputs if p), None)
        path = f"{primary}.manifest.json" if primary else f"ddpd-{args.command}-manifest.json"
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n")
    return Path(path)


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_make_data(args):
    if args.kind == "markov":
        dist = make_markov(args.order, args.d, args.s, args.seed)
        save_dist(dist, args.out)
        print(f"wrote {dist.name} ({len(dist.probs)} sequences) to {args.out}")
    elif args.kind == "parity":
        dist = make_parity(args.d, args.s)
        save_dist(dist, args.out)
        print(f"wrote {dist.name} to {args.out}")
    else:
        if not args.corpus or not args.vocab:
            raise UsageError("--kind corpus needs --corpus and --vocab")
        sampler = ingest_corpus(args.corpus, args.d, args.vocab, args.s)
        base = Path(args.out).resolve().parent
        desc = {
            "type": "corpus",
            "corpus": os.path.relpath(Path(args.corpus).resolve(), base),
            "vocab": os.path.relpath(Path(args.vocab).resolve(), base),
            "chunk_d": args.d,
            "size_s": sampler.vocab.size_s,
            "n_chunks": len(sampler),
        }
        _dump_json(desc, args.out)
        print(f"wrote corpus descriptor ({len(sampler)} chunks) to {args.out}")
    write_manifest(args, [args.corpus, args.vocab], [args.out])
    return EXIT_OK


def cmd_train(args):
    data = load_data(args.data)
    vocab = data.vocab
    rng = make_rng(args.seed, stream=0)
    if args.model == "tabular":
        model = (TabularPlanner(vocab, args.lam) if args.role == "planner"
                 else TabularDenoiser(vocab, args.flavor, args.lam))
    elif args.role == "planner":
        model = LogisticPlanner(vocab, rng, args.init_scale)
    else:
        model = LogisticDenoiser(vocab, args.flavor, rng, args.init_scale)
    cfg = TrainConfig(batch_size=args.batch, lr=args.lr, iterations=args.iters, lam=args.lam,
                      momentum=args.momentum, weight_by_prefactor=args.weight_by_prefactor,
                      seed=args.seed)
    result = fit(model, data, cfg)
    save_model(model, args.out)
    if args.loss_csv:
        result.write_csv(args.loss_csv, timings=args.timings)
    print(f"trained {args.model} {args.role}: final loss {result.losses[-1]:.6f}")
    write_manifest(args, [args.data], [args.out, args.loss_csv])
    return EXIT_OK


def _run_sampler(args, planner, denoiser, data, n, seed, stream):
    rng = make_rng(seed, stream=stream)
    kind = NoiseKind(args.kind)
    cfg = SamplerConfig(max_steps=args.steps, stop_eps=args.eps, selection=args.selection,
                        time_correction=args.time_correction,
                        continue_to_budget=args.continue_to_budget,
                        logit_temperature=args.temp, kind=kind)
    record = bool(args.events_out)
    if args.sampler == "tau":
        return tau_leaping(planner, denoiser, cfg, rng, n_steps=args.steps, n=n, record_events=record)
    if args.sampler == "confidence":
        return confidence_baseline(denoiser, cfg, rng, n=n, sample_tokens=args.sample_tokens)
    if kind is NoiseKind.UNIFORM and denoiser.flavor == MASK_FLAVOR:
        denoiser = MaskComposedDenoiser(planner, denoiser)
    if args.sampler == "gillespie":
        return gillespie_selfloop(planner, denoiser, cfg, rng, n=n, record_events=record)
    return ddpd_sample(planner, denoiser, cfg, rng, n=n, record_events=record)


def cmd_sample(args):
    data = load_data(args.data) if args.data else None
    kind = NoiseKind(args.kind)
    denoiser = resolve_denoiser(args.denoiser, data)
    if args.planner is None:
        planner = MaskIndicatorPlanner(denoiser.vocab) if kind is NoiseKind.MASK else None
    else:
        planner = resolve_planner(args.planner, data)
    if planner is None and args.sampler != "confidence":
        raise UsageError("uniform-noise samplers need --planner")
    # Fixed-size shards with their own streams: output does not depend on DDPD_THREADS.
    shards = [(i, min(SHARD_SIZE, args.n - lo)) for i, lo in enumerate(range(0, args.n, SHARD_SIZE))]
    with ThreadPoolExecutor(max_workers=n_threads()) as pool:
        runs = list(pool.map(lambda s: _run_sampler(args, planner, denoiser, data, s[1], args.seed, s[0]),
                             shards))
    samples = np.concatenate([r.samples for r in runs])
    nfe = np.concatenate([r.nfe for r in runs])
    summary = {"n": int(len(samples)), "nfe_max": int(nfe.max()), "nfe_mean": float(nfe.mean())}
    flags = {}
    for r in runs:
        for k, v in r.flags.items():
            flags[k] = flags.get(k, 0) + int(v)
    summary["flags"] = flags
    if isinstance(data, EnumerableDist):
        summary["tv"] = tv_to_truth(samples, data)
        summary["tv_se"] = tv_standard_error(samples, data)
    if args.samples_out:
        _dump_json({"samples": samples.tolist(), "summary": summary}, args.samples_out)
    if args.events_out:
        with open(args.events_out, "w") as fh:
            offset = 0
            for r in runs:
                for ev in r.events():
                    ev.chain += offset
                    fh.write(ev.to_json() + "\n")
                offset += len(r.samples)
    print(json.dumps(summary, sort_keys=True))
    inputs = [args.data] + [p for p in (args.planner, args.denoiser) if p and Path(p).is_file()]
    write_manifest(args, inputs, [args.samples_out, args.events_out])
    return EXIT_OK


def cmd_elbo(args):
    data = load_data(args.data)
    rng = make_rng(args.seed, stream=0)
    if args.kind == "mask":
        denoiser = resolve_denoiser(args.denoiser or "oracle-mask", data)
        report = elbo_mask(denoiser, data, args.n_mc, rng)
    else:
        planner = resolve_planner(args.planner or "oracle", data)
        denoiser = resolve_denoiser(args.denoiser or "oracle", data)
        report = elbo_uniform_ddpd(planner, denoiser, data, args.n_mc, rng)
    out = report.to_json()
    if isinstance(data, EnumerableDist):
        out["expected_log_likelihood"] = -data.entropy()
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    inputs = [args.data] + [p for p in (args.planner, args.denoiser) if p and Path(p).is_file()]
    write_manifest(args, inputs, [args.out])
    return EXIT_OK


def cmd_eval(args):
    data = load_data(args.data)
    dist = _need_dist(data, "eval")
    rows = []
    if args.metric == "tv":
        if not args.samples:
            raise UsageError("--metric tv needs --samples")
        samples = np.asarray(json.loads(Path(args.samples).read_text())["samples"], dtype=np.int64)
        rows.append({"metric": "tv", "value": tv_to_truth(samples, dist),
                     "se": tv_standard_error(samples, dist), "n": int(len(samples))})
    elif args.metric == "denoise-acc":
        den = resolve_denoiser(args.denoiser or "oracle", dist)
        rng = make_rng(args.seed, stream=0)
        rows.append({"metric": "denoise_accuracy", "t": args.t,
                     "value": denoise_accuracy(den, dist, args.t, args.n, rng)})
    elif args.metric == "mask-acc":
        planner = resolve_planner(args.planner or "oracle", dist)
        rng = make_rng(args.seed, stream=0)
        acc, near = mask_prediction_accuracy(planner, dist, args.t, args.n, rng)
        rows.append({"metric": "mask_prediction_accuracy", "t": args.t, "value": acc,
                     "near_deterministic": near})
    else:
        rows = error_correction_benchmark(dist, args.eps_list, args.budgets, args.seeds, args.n,
                                          arms=tuple(args.arms),
                                          continue_to_budget=args.continue_to_budget)
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    if args.out_csv:
        write_rows_csv(rows, args.out_csv, CSV_FIELDS if args.metric == "benchmark" else None)
    if args.out_json:
        write_rows_json(rows, args.out_json)
    inputs = [args.data, args.samples] + [p for p in (args.planner, args.denoiser) if p and Path(p).is_file()]
    write_manifest(args, inputs, [args.out_csv, args.out_json])
    return EXIT_OK


def cmd_verify(args):
    fixtures = None
    if args.data:
        fixtures = {}
        for p in args.data:
            d = _need_dist(load_data(p), "verify")
            fixtures[d.name or p] = d
    results = run_verification(fixtures)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    if args.out:
        _dump_json([r.to_json() for r in results], args.out)
    write_manifest(args, args.data or [], [args.out], {"passed": ok})
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddpd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ddpd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file supplying defaults for any flag")
        p.add_argument("--manifest", help="manifest path (default: next to the main output)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("make-data", help="generate or pin a dataset fixture")
    common(p)
    p.add_argument("--kind", choices=["markov", "parity", "corpus"], default="markov")
    p.add_argument("--d", type=positive_int, default=3)
    p.add_argument("--s", type=positive_int, default=None)
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="fit a planner or denoiser")
    common(p)
    p.add_argument("--role", choices=["planner", "denoiser"])
    p.add_argument("--flavor", choices=["uniform", "mask"], default="uniform")
    p.add_argument("--model", choices=["tabular", "logistic"], default="tabular")
    p.add_argument("--data")
    p.add_argument("--iters", type=positive_int, default=1000)
    p.add_argument("--batch", type=positive_int, default=256)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--init-scale", type=float, default=0.0)
    p.add_argument("--weight-by-prefactor", action="store_true")
    p.add_argument("--loss-csv")
    p.add_argument("--timings", action="store_true", help="add a wall-time column to the loss CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="run a sampler")
    common(p)
    p.add_argument("--sampler", choices=["tau", "gillespie", "ddpd", "confidence"], default="ddpd")
    p.add_argument("--kind", choices=["uniform", "mask"], default="uniform")
    p.add_argument("--data", help="fixture for oracle models and TV reporting")
    p.add_argument("--planner", help="oracle | oracle-marginal | mask | model file")
    p.add_argument("--denoiser", default="oracle",
                   help="oracle | oracle-marginal | oracle-mask | model file")
    p.add_argument("--steps", type=positive_int, default=24)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--selection", choices=["proportional", "softmax"], default="proportional")
    p.add_argument("--time-correction", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--continue-to-budget", action="store_true")
    p.add_argument("--temp", type=float, default=1.0)
    p.add_argument("--sample-tokens", action="store_true", help="confidence sampler: draw tokens")
    p.add_argument("--n", type=positive_int, default=1000)
    p.add_argument("--events-out")
    p.add_argument("--samples-out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("elbo", help="estimate the ELBO")
    common(p)
    p.add_argument("--kind", choices=["uniform", "mask"], default="uniform")
    p.add_argument("--data")
    p.add_argument("--planner")
    p.add_argument("--denoiser")
    p.add_argument("--n-mc", type=positive_int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_elbo)

    p = sub.add_parser("eval", help="metrics and the error-correction benchmark")
    common(p)
    p.add_argument("--metric", choices=["tv", "denoise-acc", "mask-acc", "benchmark"], default="tv")
    p.add_argument("--data")
    p.add_argument("--samples")
    p.add_argument("--planner")
    p.add_argument("--denoiser")
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--n", type=positive_int, default=10_000)
    p.add_argument("--eps-list", type=csv_floats, default=[0.0, 0.3])
    p.add_argument("--budgets", type=csv_ints, default=[24])
    p.add_argument("--seeds", type=csv_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--arms", nargs="+", choices=["mask_tau", "ddpd", "confidence"],
                   default=["mask_tau", "ddpd"])
    p.add_argument("--continue-to-budget", action="store_true")
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="check the exact identities on enumerable fixtures")
    common(p)
    p.add_argument("--data", nargs="*", help="fixtures to check (default: the shipped set)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


REQUIRED = {
    "make-data": ["out"],
    "train": ["role", "data", "out"],
    "elbo": ["data"],
    "eval": ["data"],
}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        defaults = {}
        for key, value in cfg.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [d for d in REQUIRED.get(args.command, []) if getattr(args, d) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        if args.command == "make-data" and args.s is None:
            args.s = 2 if args.kind == "parity" else (None if args.kind == "corpus" else 4)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DDPDError, ValueError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
