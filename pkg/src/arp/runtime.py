"""Two-party inference orchestration: planning, evaluation, reports, bench.

The client is simulated in-process: it encodes the input batch, splits
shares from a seed, and both parties derive the same dealer tapes from
another seed, so in-memory and TCP runs of the same seeds produce
byte-identical transcripts.

Phase accounting: "dealer" covers tape generation (setup), "linear" covers
public-weight layers, pooling and the final logit opening, "comparison"
covers secure ReLU (including its multiply), "polynomial" covers the secure
polynomial path.

The declared logit error budget is a worst-case ULP propagation: encode
contributes half an ULP, each truncating op up to two ULPs, linear layers
amplify by their max absolute input-weight sum, and the polynomial path by
|c1| + 2|c2|*R with R = 8 decoded units of assumed activation range.
Observed deviations sit far below it (the bound multiplies worst cases that
cannot align); private logits are asserted against it in the acceptance
suite alongside the much tighter classification-agreement check.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from threading import Thread

import numpy as np

from .dealer import Dealer, tape_from_bytes, tape_to_bytes
from .errors import ArpError
from .fixed import FixedConfig, RingTensor, decode, encode
from .nn import AvgPool2d, Conv2d, Dense, Flatten, Sequential
from .protocol import (
    Session,
    ShareTensor,
    add_public,
    dapa_eval_secure,
    hybrid_requests,
    mul_public,
    relu_secure,
)
from .replace import HybridActivation
from .transport import memory_channel_pair, tcp_connect, tcp_listen

__all__ = [
    "PhaseMeter",
    "InferenceReport",
    "SecureEvaluator",
    "error_budget_ulp",
    "run_both",
    "private_inference_memory",
    "private_inference_tcp",
    "bench",
]

PHASES = ("dealer", "linear", "comparison", "polynomial")
POLY_RANGE = 8.0  # assumed |activation| bound feeding the budget heuristic


class PhaseMeter:
    def __init__(self, sess: Session):
        self.sess = sess
        self.rows = {p: dict(bytes_sent=0, bytes_received=0, rounds=0, opened_words=0, seconds=0.0)
                     for p in PHASES}

    @contextmanager
    def measure(self, phase: str):
        ch, sess = self.sess.channel, self.sess
        before = (ch.bytes_sent, ch.bytes_received, ch.rounds, sess.opened_words, time.perf_counter())
        yield
        row = self.rows[phase]
        row["bytes_sent"] += ch.bytes_sent - before[0]
        row["bytes_received"] += ch.bytes_received - before[1]
        row["rounds"] += ch.rounds - before[2]
        row["opened_words"] += sess.opened_words - before[3]
        row["seconds"] += time.perf_counter() - before[4]

    def add_setup_seconds(self, seconds: float) -> None:
        self.rows["dealer"]["seconds"] += seconds

    def totals(self) -> dict:
        out = dict(bytes_sent=0, bytes_received=0, rounds=0, opened_words=0, seconds=0.0)
        for row in self.rows.values():
            for k in out:
                out[k] += row[k]
        return out


def _per_element_coeff(layer: HybridActivation, i: int) -> np.ndarray:
    shape = [1] * len(layer.feat_shape)
    shape[layer.channel_axis] = -1
    return np.broadcast_to(layer.coeffs.term(i).reshape(shape), layer.feat_shape)


class SecureEvaluator:
    """Layer-by-layer secure forward pass plus its dealer-tape plan.

    plan() and run() walk the model in the same order; a run consumes its
    plan's tape exactly (tests assert zero leftover records).
    """

    def __init__(self, model: Sequential, cfg: FixedConfig):
        self.model = model
        self.cfg = cfg
        for layer in model.layers:
            if not isinstance(layer, (Dense, Conv2d, AvgPool2d, Flatten, HybridActivation)):
                raise ArpError(f"layer {type(layer).__name__} has no secure evaluation")

    # -- planning -----------------------------------------------------------

    def plan(self, batch: int) -> list:
        reqs: list = []
        for layer in self.model.layers:
            if isinstance(layer, HybridActivation):
                reqs += hybrid_requests(batch, layer.indicator.m, self.cfg, layer.degree)
        return reqs

    # -- evaluation ----------------------------------------------------------

    def run(self, sess: Session, x: ShareTensor, meter: PhaseMeter | None = None) -> ShareTensor:
        meter = meter or PhaseMeter(sess)
        cfg = self.cfg
        for layer in self.model.layers:
            if isinstance(layer, Dense):
                with meter.measure("linear"):
                    x = mul_public(x, encode(layer.w.value, cfg), "matmul")
                    x = add_public(x, encode(layer.b.value, cfg))
            elif isinstance(layer, Conv2d):
                with meter.measure("linear"):
                    x = mul_public(x, encode(layer.w.value, cfg), "conv2d",
                                   stride=layer.stride, padding=layer.padding)
                    x = add_public(x, encode(layer.b.value.reshape(-1, 1, 1), cfg))
            elif isinstance(layer, AvgPool2d):
                with meter.measure("linear"):
                    k = layer.k
                    b, c, h, w = x.shape
                    summed = x.payload.words.reshape(b, c, h // k, k, w // k, k).sum(
                        axis=(3, 5), dtype=np.uint64
                    )
                    x = ShareTensor(sess.party, RingTensor(summed, cfg), x.scale)
                    x = mul_public(x, encode(1.0 / (k * k), cfg))
            elif isinstance(layer, Flatten):
                x = x.reshape(x.shape[0], -1)
            elif isinstance(layer, HybridActivation):
                x = self._hybrid(sess, x, layer, meter)
        return x

    def _hybrid(self, sess: Session, x: ShareTensor, layer: HybridActivation,
                meter: PhaseMeter) -> ShareTensor:
        batch = x.shape[0]
        if x.shape[1:] != layer.feat_shape:
            raise ArpError(f"activation shape {x.shape[1:]} != mask shape {layer.feat_shape}")
        flat_m = layer.indicator.m.reshape(-1).astype(bool)
        relu_idx = np.flatnonzero(flat_m)
        poly_idx = np.flatnonzero(~flat_m)
        words = x.payload.words.reshape(batch, -1)
        out = np.empty_like(words)
        if relu_idx.size:
            with meter.measure("comparison"):
                xr = sess.share_of(words[:, relu_idx], x.scale)
                out[:, relu_idx] = relu_secure(sess, xr).payload.words
        if poly_idx.size:
            with meter.measure("polynomial"):
                sel = lambda i: _per_element_coeff(layer, i).reshape(-1)[poly_idx]
                xp = sess.share_of(words[:, poly_idx], x.scale)
                c2 = sel(2) if layer.degree >= 2 else None
                out[:, poly_idx] = dapa_eval_secure(sess, xp, sel(0), sel(1), c2).payload.words
        return sess.share_of(out.reshape(x.shape), x.scale)


def error_budget_ulp(model: Sequential) -> int:
    """Documented worst-case ULP budget for the logits (see module docstring)."""
    e = 0.5
    for layer in model.layers:
        if isinstance(layer, Dense):
            amp = float(np.max(np.sum(np.abs(layer.w.value), axis=0)))
            e = max(amp, 1.0) * e + 1.0
        elif isinstance(layer, Conv2d):
            amp = float(np.max(np.sum(np.abs(layer.w.value), axis=(1, 2, 3))))
            e = max(amp, 1.0) * e + 1.0
        elif isinstance(layer, AvgPool2d):
            e = e + 1.0
        elif isinstance(layer, HybridActivation):
            c1 = float(np.max(np.abs(layer.coeffs.term(1))))
            c2 = float(np.max(np.abs(layer.coeffs.term(2)))) if layer.degree >= 2 else 0.0
            poly_amp = c1 + 2.0 * c2 * POLY_RANGE
            e = max(poly_amp, 1.0) * e + 2.0
    return int(np.ceil(e))


@dataclass
class InferenceReport:
    party: int
    cfg: FixedConfig
    plain_logits: np.ndarray
    private_logits: np.ndarray
    phases: dict
    budget_ulp: int
    transcript_hash: str
    dealer_seed: int
    input_seed: int
    totals: dict = field(init=False)

    def __post_init__(self):
        self.totals = dict(bytes_sent=0, bytes_received=0, rounds=0, opened_words=0, seconds=0.0)
        for row in self.phases.values():
            for k in self.totals:
                self.totals[k] += row[k]

    @property
    def agreement(self) -> float:
        return float(np.mean(
            np.argmax(self.plain_logits, axis=1) == np.argmax(self.private_logits, axis=1)
        ))

    @property
    def max_dev_ulp(self) -> float:
        return float(np.max(np.abs(self.plain_logits - self.private_logits)) / self.cfg.resolution)

    def to_csv(self) -> str:
        lines = [
            f"# arp inference report v1 party={self.party} L={self.cfg.total_bits} "
            f"f={self.cfg.frac_bits} budget_ulp={self.budget_ulp} "
            f"agreement={self.agreement:.6f} max_dev_ulp={self.max_dev_ulp:.3f} "
            f"transcript={self.transcript_hash} dealer_seed={self.dealer_seed} "
            f"input_seed={self.input_seed}",
            "example,plain_class,private_class,agree,max_dev_ulp",
        ]
        plain_cls = np.argmax(self.plain_logits, axis=1)
        priv_cls = np.argmax(self.private_logits, axis=1)
        dev = np.max(np.abs(self.plain_logits - self.private_logits), axis=1) / self.cfg.resolution
        for i in range(len(plain_cls)):
            lines.append(
                f"{i},{plain_cls[i]},{priv_cls[i]},{int(plain_cls[i] == priv_cls[i])},{dev[i]:.3f}"
            )
        return "\n".join(lines) + "\n"

    def phases_to_csv(self) -> str:
        lines = ["phase,bytes_sent,bytes_received,rounds,opened_words,seconds"]
        for name in PHASES:
            r = self.phases[name]
            lines.append(
                f"{name},{r['bytes_sent']},{r['bytes_received']},{r['rounds']},"
                f"{r['opened_words']},{r['seconds']:.6f}"
            )
        t = self.totals
        lines.append(
            f"total,{t['bytes_sent']},{t['bytes_received']},{t['rounds']},"
            f"{t['opened_words']},{t['seconds']:.6f}"
        )
        return "\n".join(lines) + "\n"


def _run_party(party: int, channel, model: Sequential, cfg: FixedConfig, inputs: np.ndarray,
               dealer_seed: int, input_seed: int) -> InferenceReport:
    evaluator = SecureEvaluator(model, cfg)
    t0 = time.perf_counter()
    requests = evaluator.plan(len(inputs))
    tapes = Dealer(dealer_seed, cfg).build_tapes(requests)
    # exercise the on-disk format even for in-process runs
    tape = tape_from_bytes(tape_to_bytes(tapes[party]))
    my_input_share = Dealer(input_seed, cfg).gen_shares(encode(inputs, cfg))[party]
    setup_seconds = time.perf_counter() - t0

    sess = Session(party, cfg, channel, tape.reader())
    meter = PhaseMeter(sess)
    meter.add_setup_seconds(setup_seconds)
    x = ShareTensor(party, my_input_share, cfg.frac_bits)
    logits_share = evaluator.run(sess, x, meter)
    with meter.measure("linear"):
        logits = decode(sess.reveal(logits_share), cfg)
    if sess.tape.remaining():
        raise ArpError(f"{sess.tape.remaining()} unused tape records after evaluation")
    totals = meter.totals()
    if (totals["bytes_sent"], totals["rounds"]) != (channel.bytes_sent, channel.rounds):
        raise ArpError("phase accounting does not cover all channel traffic")

    plain = model.forward(inputs, training=False)
    return InferenceReport(
        party=party,
        cfg=cfg,
        plain_logits=plain,
        private_logits=logits,
        phases=meter.rows,
        budget_ulp=error_budget_ulp(model),
        transcript_hash=channel.transcript_hash,
        dealer_seed=dealer_seed,
        input_seed=input_seed,
    )


def run_both(fn0, fn1):
    """Run the two party closures concurrently; re-raise the first failure."""
    results: list = [None, None]
    errors: list = [None, None]

    def wrap(i, fn):
        def target():
            try:
                results[i] = fn()
            except BaseException as exc:  # surfaced in the caller
                errors[i] = exc
        return target

    threads = [Thread(target=wrap(0, fn0)), Thread(target=wrap(1, fn1))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for err in errors:
        if err is not None:
            raise err
    return results[0], results[1]


def private_inference_memory(model: Sequential, cfg: FixedConfig, inputs: np.ndarray,
                             dealer_seed: int = 7, input_seed: int = 11,
                             timeout: float = 30.0) -> tuple[InferenceReport, InferenceReport]:
    ch0, ch1 = memory_channel_pair(timeout)
    return run_both(
        lambda: _run_party(0, ch0, model, cfg, inputs, dealer_seed, input_seed),
        lambda: _run_party(1, ch1, model, cfg, inputs, dealer_seed, input_seed),
    )


def private_inference_tcp(model: Sequential, cfg: FixedConfig, inputs: np.ndarray, party: int,
                          host: str, port: int, dealer_seed: int = 7, input_seed: int = 11,
                          timeout: float = 30.0) -> InferenceReport:
    channel = tcp_listen(host, port, timeout) if party == 0 else tcp_connect(host, port, timeout)
    try:
        return _run_party(party, channel, model, cfg, inputs, dealer_seed, input_seed)
    finally:
        channel.close()


def bench(model: Sequential, cfg: FixedConfig, inputs: np.ndarray, batch_sizes,
          dealer_seed: int = 7, input_seed: int = 11) -> str:
    """Deterministic bytes/rounds per phase across batch sizes, as CSV."""
    lines = ["batch,phase,bytes_sent,rounds,opened_words,seconds"]
    for bs in batch_sizes:
        if bs > len(inputs):
            raise ValueError(f"batch size {bs} exceeds {len(inputs)} available inputs")
        rep, _ = private_inference_memory(model, cfg, inputs[:bs], dealer_seed, input_seed)
        for name in PHASES:
            r = rep.phases[name]
            lines.append(
                f"{bs},{name},{r['bytes_sent']},{r['rounds']},{r['opened_words']},{r['seconds']:.6f}"
            )
    return "\n".join(lines) + "\n"
