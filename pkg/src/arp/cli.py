"""Command-line surface: gen-data, train-replace, dapa-fit, export, infer-private, bench.

Global flags: --seed (ARP_SEED env var wins), --fixed-bits, --frac-bits,
--party with --listen/--connect for the TCP roles.  Exit codes: 0 success,
2 protocol desync, 3 tape exhaustion, 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as datamod
from .dapa import GaussianStats, PolyCoeffs, empirical_loss, fit_closed_form, \
    fit_closed_form_linear, fit_monte_carlo, min_approx_loss
from .errors import FormatError, ProtocolDesyncError, TapeExhaustedError
from .fixed import FixedConfig
from .model_io import load_model, save_model
from .nn import build_model
from .replace import ReplacementConfig, train_replace, train_supervised, evaluate
from .runtime import bench, private_inference_memory, private_inference_tcp

EXIT_DESYNC = 2
EXIT_TAPE = 3
EXIT_FORMAT = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (ARP_SEED overrides)")
    p.add_argument("--fixed-bits", type=int, default=64, help="ring bit width L")
    p.add_argument("--frac-bits", type=int, default=16, help="fractional bits f")


def _seed(args) -> int:
    env = os.environ.get("ARP_SEED")
    return int(env) if env is not None else args.seed


def _hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _load_inputs(path: str, limit: int | None):
    if path.endswith(".arim"):
        x, y = datamod.read_arim(path)
    else:
        x, y = datamod.load_csv(path)
    if limit:
        x, y = x[:limit], y[:limit]
    return x, y


def cmd_gen_data(args) -> int:
    seed = _seed(args)
    if args.dataset == "two-spiral":
        x, y = datamod.two_spirals(args.n, args.noise, seed=seed)
        datamod.save_csv(args.out, x, y)
    elif args.dataset == "toy-images":
        imgs, y = datamod.toy_images(args.n, seed=seed)
        datamod.write_arim(args.out, imgs, y)
    else:
        raise FormatError(f"unknown dataset {args.dataset}")
    print(f"wrote {args.n} examples to {args.out}")
    return 0


def cmd_train_replace(args) -> int:
    seed = _seed(args)
    x, y = _load_inputs(args.dataset, None)
    n_train = int(0.8 * len(x))
    xtr, ytr, xte, yte = x[:n_train], y[:n_train], x[n_train:], y[n_train:]
    num_classes = int(y.max()) + 1
    if args.arch == "smallcnn":
        model = build_model("smallcnn", seed, num_classes, image_hw=x.shape[-1], t_h=args.th)
    else:
        model = build_model("mlp", seed, num_classes, t_h=args.th)

    train_supervised(model, xtr, ytr, epochs=args.pretrain_epochs, lr=1e-3,
                     batch_size=args.batch_size, seed=seed)
    base_acc = evaluate(model, xte, yte)
    print(f"baseline test accuracy: {base_acc:.4f}")

    cfg = ReplacementConfig(
        relu_budget=args.budget, mu=args.mu, epochs=args.epochs, t_h=args.th,
        batch_size=args.batch_size, seed=seed,
    )
    model, plan, history = train_replace(model, (xtr, ytr), cfg, eval_data=(xte, yte))
    final = history.epochs[-1]
    print(f"final test accuracy: {final['accuracy']:.4f} "
          f"relu count: {plan.relu_count}/{plan.budget}")

    fixed = FixedConfig(args.fixed_bits, args.frac_bits)
    save_model(args.out, model, fixed, seed)
    print(f"wrote model to {args.out}")
    if args.history:
        with open(args.history, "w") as fh:
            fh.write(history.to_csv())
        print(f"wrote history to {args.history}")
    return 0


def cmd_dapa_fit(args) -> int:
    rows = ["source,mu,var,degree," + ",".join(f"c{i}" for i in range(args.degree + 1)) + ",loss"]
    if args.stats:
        for pair in args.stats:
            mu, var = (float(v) for v in pair.split(","))
            g = GaussianStats(mu, var)
            if args.degree == 2:
                c = fit_closed_form(g)
                loss = min_approx_loss(g)
            elif args.degree == 1:
                c = fit_closed_form_linear(g)
                rng = np.random.default_rng(_seed(args))
                loss = empirical_loss(rng.normal(mu, np.sqrt(var), 200_000), PolyCoeffs(np.asarray(c)))
            else:
                raise FormatError("closed-form fitting covers degrees 1 and 2")
            coeffs = ",".join(f"{ci:.10g}" for ci in c)
            rows.append(f"closed-form,{mu},{var},{args.degree},{coeffs},{loss:.10g}")
    if args.samples:
        z = np.loadtxt(args.samples).reshape(-1)
        fit = fit_monte_carlo(z, args.degree)
        loss = empirical_loss(z, fit)
        coeffs = ",".join(f"{ci:.10g}" for ci in fit.coeffs)
        rows.append(f"samples,{z.mean():.6g},{z.var():.6g},{args.degree},{coeffs},{loss:.10g}")
    if len(rows) == 1:
        raise FormatError("nothing to fit: pass --stats and/or --samples")
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_export(args) -> int:
    model, _, seed = load_model(args.model)
    fixed = FixedConfig(args.fixed_bits, args.frac_bits)
    save_model(args.out, model, fixed, seed)
    print(f"re-exported {args.model} -> {args.out} at L={fixed.total_bits}, f={fixed.frac_bits}")
    return 0


def cmd_infer_private(args) -> int:
    model, cfg, _ = load_model(args.model)
    x, _ = _load_inputs(args.inputs, args.limit)
    if args.mode == "memory":
        rep, rep1 = private_inference_memory(model, cfg, x, args.dealer_seed, args.input_seed)
        extra = f" (party1 transcript {rep1.transcript_hash[:16]})"
    else:
        if args.party is None or not (args.listen or args.connect):
            raise FormatError("tcp mode needs --party and --listen or --connect")
        host, port = _hostport(args.listen or args.connect)
        rep = private_inference_tcp(model, cfg, x, args.party, host, port,
                                    args.dealer_seed, args.input_seed, timeout=args.timeout)
        extra = ""
    print(f"agreement={rep.agreement:.6f} max_dev_ulp={rep.max_dev_ulp:.3f} "
          f"budget_ulp={rep.budget_ulp} rounds={rep.totals['rounds']} "
          f"bytes={rep.totals['bytes_sent']} transcript={rep.transcript_hash[:16]}{extra}")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(rep.to_csv())
    if args.phases:
        with open(args.phases, "w") as fh:
            fh.write(rep.phases_to_csv())
    return 0


def cmd_bench(args) -> int:
    model, cfg, _ = load_model(args.model)
    x, _ = _load_inputs(args.inputs, None)
    sizes = [int(s) for s in args.batch_sizes.split(",")]
    text = bench(model, cfg, x, sizes, args.dealer_seed, args.input_seed)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="arp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="emit a deterministic dataset")
    _add_common(p)
    p.add_argument("--dataset", choices=["two-spiral", "toy-images"], default="two-spiral")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-replace", help="baseline-train then learn a replacement plan")
    _add_common(p)
    p.add_argument("--budget", type=int, required=True, help="target surviving ReLU count")
    p.add_argument("--mu", type=float, default=1.0, help="normalized count penalty")
    p.add_argument("--th", type=float, default=0.003, help="hysteresis threshold")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--pretrain-epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--dataset", required=True, help="csv or .arim input file")
    p.add_argument("--arch", choices=["mlp", "smallcnn"], default="mlp")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--history", help="per-epoch csv to write")
    p.set_defaults(fn=cmd_train_replace)

    p = sub.add_parser("dapa-fit", help="fit polynomial coefficients to ReLU")
    _add_common(p)
    p.add_argument("--stats", action="append", metavar="MU,VAR",
                   help="Gaussian stats pair; repeatable")
    p.add_argument("--samples", help="text file of raw samples, one per line")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_dapa_fit)

    p = sub.add_parser("export", help="re-encode a model file at a new fixed-point config")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("infer-private", help="two-party evaluation of a model file")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--mode", choices=["memory", "tcp"], default="memory")
    p.add_argument("--party", type=int, choices=[0, 1])
    p.add_argument("--listen", metavar="HOST:PORT")
    p.add_argument("--connect", metavar="HOST:PORT")
    p.add_argument("--limit", type=int, help="use only the first N inputs")
    p.add_argument("--dealer-seed", type=int, default=7)
    p.add_argument("--input-seed", type=int, default=11)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--report", help="per-example csv to write")
    p.add_argument("--phases", help="phase accounting csv to write")
    p.set_defaults(fn=cmd_infer_private)

    p = sub.add_parser("bench", help="bytes/rounds per phase across batch sizes")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--batch-sizes", default="1,8,32")
    p.add_argument("--dealer-seed", type=int, default=7)
    p.add_argument("--input-seed", type=int, default=11)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ProtocolDesyncError as exc:
        print(f"protocol desync: {exc}", file=sys.stderr)
        return EXIT_DESYNC
    except TapeExhaustedError as exc:
        print(f"tape exhausted: {exc}", file=sys.stderr)
        return EXIT_TAPE
    except (FormatError, OSError) as exc:
        print(f"i/o or format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
