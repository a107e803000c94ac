"""Online two-party operations on additive and XOR shares.

Round and opening accounting (asserted by tests):
  lin_combine / mul_public / msb   0 rounds, nothing opened
  mul_beaver                       1 round, opens 2 masked tensors
  square                           1 round, opens 1 masked tensor
  b2a                              1 round (one Beaver multiply)
  a2b                              1 + ceil(log2 L) rounds (initial AND plus
                                   one batched AND per prefix-adder level)

Model weights and polynomial coefficients are public to both compute
servers; only activations are secret shared.  Truncation after a product is
a local arithmetic shift of each party's share, which costs nothing in
communication but can leave the reconstruction one ULP below the value-level
shift (plus a wrap error whose probability decays as 2^-(L-f-1) per unit of
magnitude).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dealer as dl
from .errors import TripleReuseError
from .fixed import FixedConfig, RingTensor, encode, truncate
from .transport import Channel

__all__ = [
    "ShareTensor",
    "BinaryShareTensor",
    "Session",
    "lin_combine",
    "mul_public",
    "add_public",
    "mul_beaver",
    "square",
    "and_shares",
    "a2b",
    "msb",
    "b2a",
    "ltz",
    "relu_secure",
    "dapa_eval_secure",
    "hybrid_activation_secure",
    "a2b_requests",
    "ltz_requests",
    "relu_requests",
    "dapa_requests",
    "hybrid_requests",
]


@dataclass
class ShareTensor:
    """One party's additive share; reconstructs as payload_0 + payload_1 mod 2^L."""

    party: int
    payload: RingTensor
    scale: int

    @property
    def shape(self):
        return self.payload.shape

    @property
    def size(self) -> int:
        return self.payload.size

    def _check(self, other: "ShareTensor"):
        if self.shape != other.shape:
            raise ValueError(f"share shape mismatch: {self.shape} vs {other.shape}")
        if self.scale != other.scale:
            raise ValueError(f"share scale mismatch: {self.scale} vs {other.scale}")

    def __add__(self, other: "ShareTensor") -> "ShareTensor":
        self._check(other)
        return ShareTensor(self.party, self.payload + other.payload, self.scale)

    def __sub__(self, other: "ShareTensor") -> "ShareTensor":
        self._check(other)
        return ShareTensor(self.party, self.payload - other.payload, self.scale)

    def __neg__(self) -> "ShareTensor":
        return ShareTensor(self.party, -self.payload, self.scale)

    def reshape(self, *shape) -> "ShareTensor":
        return ShareTensor(self.party, self.payload.reshape(*shape), self.scale)


@dataclass
class BinaryShareTensor:
    """One party's XOR share; reconstructs as payload_0 XOR payload_1."""

    party: int
    payload: RingTensor

    @property
    def shape(self):
        return self.payload.shape


class Session:
    """One party's view of a protocol run: channel, tape, and counters."""

    def __init__(self, party: int, cfg: FixedConfig, channel: Channel, tape: dl.TapeReader | None = None):
        if party not in (0, 1):
            raise ValueError("party must be 0 or 1")
        self.party = party
        self.cfg = cfg
        self.channel = channel
        self.tape = tape
        self.opened_words = 0

    # -- share plumbing ---------------------------------------------------

    def share_of(self, words, scale: int | None = None) -> ShareTensor:
        scale = self.cfg.frac_bits if scale is None else scale
        return ShareTensor(self.party, RingTensor(words, self.cfg), scale)

    def zeros_like(self, shape, scale: int = 0) -> ShareTensor:
        return ShareTensor(self.party, RingTensor.zeros(shape, self.cfg), scale)

    def reveal_many(self, tensors: list[RingTensor], mode: str = "add") -> list[RingTensor]:
        """Open several masked tensors in one message (one round)."""
        flats = [t.words.reshape(-1) for t in tensors]
        mine = RingTensor(np.concatenate(flats) if len(flats) > 1 else flats[0], self.cfg)
        theirs = self.channel.exchange(mine)
        combined = mine + theirs if mode == "add" else mine ^ theirs
        self.opened_words += mine.size
        out, at = [], 0
        for t in tensors:
            n = t.size
            out.append(RingTensor(combined.words[at : at + n].reshape(t.shape), self.cfg))
            at += n
        return out

    def reveal(self, x: ShareTensor) -> RingTensor:
        """Joint recovery: both parties learn payload_0 + payload_1."""
        return self.reveal_many([x.payload], mode="add")[0]

    def reveal_bits(self, x: BinaryShareTensor) -> RingTensor:
        return self.reveal_many([x.payload], mode="xor")[0]


def _consume(record):
    if record.used:
        raise TripleReuseError(f"{type(record).__name__} consumed twice")
    record.used = True
    return record


def _rescale(x: ShareTensor, raw_scale: int) -> ShareTensor:
    """Shift a product share back down to at most f fractional bits."""
    f = x.payload.cfg.frac_bits
    out_scale = min(f, raw_scale)
    shift = raw_scale - out_scale
    payload = truncate(x.payload, bits=shift) if shift else x.payload
    return ShareTensor(x.party, payload, out_scale)


# ---- local (round-free) operations -----------------------------------------


def lin_combine(a: float, x: ShareTensor, y: ShareTensor) -> ShareTensor:
    """Public-scalar combination a*X + Y; zero rounds, zero bytes."""
    x._check(y)
    cfg = x.payload.cfg
    a_enc = encode(a, cfg)
    scaled = _rescale(ShareTensor(x.party, x.payload * a_enc, x.scale), x.scale + cfg.frac_bits)
    return scaled + y


def mul_public(x: ShareTensor, w: RingTensor, op: str = "elementwise", *, w_scale: int | None = None,
               stride: int = 1, padding: int = 0) -> ShareTensor:
    """Multiply a share by a public ring tensor; local, zero rounds."""
    cfg = x.payload.cfg
    w_scale = cfg.frac_bits if w_scale is None else w_scale
    raw = dl.apply_product(op, x.payload, w, stride, padding)
    return _rescale(ShareTensor(x.party, raw, x.scale), x.scale + w_scale)


def add_public(x: ShareTensor, c: RingTensor) -> ShareTensor:
    """Add a public constant: only party 0 contributes it."""
    if x.party == 0:
        return ShareTensor(0, x.payload + c, x.scale)
    return ShareTensor(1, x.payload + RingTensor.zeros(c.shape, c.cfg), x.scale)


def public_complement(x: ShareTensor) -> ShareTensor:
    """1 - x for a scale-0 bit share."""
    one = RingTensor(np.ones(x.shape, dtype=np.uint64), x.payload.cfg)
    if x.party == 0:
        return ShareTensor(0, one - x.payload, 0)
    return ShareTensor(1, -x.payload, 0)


# ---- interactive operations --------------------------------------------------


def mul_beaver(sess: Session, x: ShareTensor, y: ShareTensor, triple: dl.BeaverTriple | None = None,
               op: str = "elementwise", stride: int = 1, padding: int = 0) -> ShareTensor:
    """Secure product via one Beaver triple; one round, opens |X|+|Y| words."""
    if triple is None:
        triple = sess.tape.next_beaver(op, x.shape, y.shape, stride, padding)
    _consume(triple)
    if triple.op != op or triple.a.shape != x.shape or triple.b.shape != y.shape:
        raise ValueError(
            f"triple {triple.op} {triple.a.shape}x{triple.b.shape} does not fit "
            f"{op} {x.shape}x{y.shape}"
        )
    e, f_ = sess.reveal_many([x.payload - triple.a, y.payload - triple.b])
    prod = lambda a, b: dl.apply_product(op, a, b, stride, padding)
    r = prod(x.payload, f_) + prod(e, y.payload) + triple.z
    if sess.party == 1:
        r = r - prod(e, f_)
    return _rescale(ShareTensor(sess.party, r, 0), x.scale + y.scale)


def square(sess: Session, x: ShareTensor, pair: dl.SquarePair | None = None) -> ShareTensor:
    """Elementwise secure square; one round, opens |X| words (half a multiply)."""
    if pair is None:
        pair = sess.tape.next_square(x.shape)
    _consume(pair)
    if pair.a.shape != x.shape:
        raise ValueError(f"square pair shape {pair.a.shape} does not fit {x.shape}")
    (e,) = sess.reveal_many([x.payload - pair.a])
    r = pair.z + e * pair.a * np.uint64(2)
    if sess.party == 0:
        r = r + e * e
    return _rescale(ShareTensor(sess.party, r, 0), 2 * x.scale)


def and_shares(sess: Session, x: RingTensor, y: RingTensor, triple: dl.AndTriple | None = None) -> RingTensor:
    """Bitwise AND of XOR-shared words via one AND triple; one round."""
    if triple is None:
        triple = sess.tape.next_and(x.shape)
    _consume(triple)
    e, f_ = sess.reveal_many([x ^ triple.a, y ^ triple.b], mode="xor")
    z = triple.c ^ (e & triple.b) ^ (triple.a & f_)
    if sess.party == 0:
        z = z ^ (e & f_)
    return z


def a2b(sess: Session, x: ShareTensor) -> BinaryShareTensor:
    """Arithmetic to binary sharing via a Kogge-Stone adder over XOR shares.

    Each party XOR-shares its own arithmetic share locally, then the two
    L-bit summands are added with a carry-lookahead circuit: 1 + ceil(log2 L)
    rounds, one batched AND per level.
    """
    cfg = x.payload.cfg
    zero = RingTensor.zeros(x.shape, cfg)
    a = x.payload if sess.party == 0 else zero
    b = x.payload if sess.party == 1 else zero

    g = and_shares(sess, a, b)
    p = a ^ b
    p0 = p
    for level in range(math.ceil(math.log2(cfg.total_bits))):
        k = 1 << level
        lhs = RingTensor(np.stack([p.words, p.words]), cfg)
        rhs = RingTensor(np.stack([g.lshift(k).words, p.lshift(k).words]), cfg)
        both = and_shares(sess, lhs, rhs)
        g = g ^ RingTensor(both.words[0], cfg)
        p = RingTensor(both.words[1], cfg)
    carries = g.lshift(1)
    return BinaryShareTensor(sess.party, p0 ^ carries)


def msb(x: BinaryShareTensor) -> BinaryShareTensor:
    """Extract the sign bit plane; local, zero rounds."""
    bits = x.payload.cfg.total_bits
    return BinaryShareTensor(x.party, x.payload.rshift(bits - 1))


def b2a(sess: Session, bit: BinaryShareTensor, triple: dl.BeaverTriple | None = None) -> ShareTensor:
    """Convert a 1-bit XOR sharing to an arithmetic sharing at scale 0.

    b0 XOR b1 = b0 + b1 - 2*b0*b1; the cross term costs one Beaver multiply.
    """
    cfg = bit.payload.cfg
    zero = RingTensor.zeros(bit.shape, cfg)
    own = bit.payload
    x0 = ShareTensor(sess.party, own if sess.party == 0 else zero, 0)
    x1 = ShareTensor(sess.party, own if sess.party == 1 else zero, 0)
    cross = mul_beaver(sess, x0, x1, triple)
    return ShareTensor(sess.party, own - cross.payload * np.uint64(2), 0)


def ltz(sess: Session, x: ShareTensor) -> ShareTensor:
    """Exact comparison with zero: reconstructs to 1 iff decode(x) < 0.

    Zero counts as non-negative.  Composition: a2b, local sign-bit extract,
    then b2a.
    """
    return b2a(sess, msb(a2b(sess, x)))


def relu_secure(sess: Session, x: ShareTensor) -> ShareTensor:
    """max(x, 0) on shares: one comparison plus one Beaver multiply."""
    b = ltz(sess, x)
    return mul_beaver(sess, public_complement(b), x)


def dapa_eval_secure(sess: Session, x: ShareTensor, c0, c1, c2=None,
                     pair: dl.SquarePair | None = None) -> ShareTensor:
    """Evaluate the public polynomial c2*x^2 + c1*x + c0 on a share.

    Coefficients are numpy arrays broadcastable to x's shape (per channel or
    per element).  Degree 2 costs one square (one round); degree 1 (c2 None
    or all-zero) is communication free.

    All terms are combined at double scale and shifted down once, so the
    result sits within 2 ULP of the fixed-point reference: one possible ULP
    from the square's rescale propagated through c2 (|c2| < 1), one from the
    final shift.  Keeping intermediates at scale 2f also keeps the rare
    truncation-wrap probability at the same level as a plain multiply.
    """
    cfg = x.payload.cfg
    f = cfg.frac_bits
    if x.scale != f:
        raise ValueError(f"polynomial evaluation expects scale {f}, got {x.scale}")
    c0b = np.broadcast_to(np.asarray(c0, dtype=np.float64), x.shape)
    c1b = np.broadcast_to(np.asarray(c1, dtype=np.float64), x.shape)
    use_square = c2 is not None and np.any(np.asarray(c2) != 0)

    acc = x.payload * encode(c1b, cfg)  # scale 2f
    if use_square:
        c2b = np.broadcast_to(np.asarray(c2, dtype=np.float64), x.shape)
        sq = square(sess, x, pair)  # scale f, one rescale inside
        acc = acc + sq.payload * encode(c2b, cfg)
    if sess.party == 0:
        acc = acc + encode(c0b, cfg).lshift(f)
    return _rescale(ShareTensor(sess.party, acc, 0), 2 * f)


def hybrid_activation_secure(sess: Session, x: ShareTensor, mask: np.ndarray,
                             c0, c1, c2=None) -> ShareTensor:
    """Route masked elements through secure ReLU, the rest through the polynomial.

    `mask` has the per-element activation shape (x's shape without the
    leading batch axis); coefficient arrays are broadcastable to that same
    shape.  Kept elements are gathered into a single batched comparison.
    """
    batch = x.shape[0]
    feat_shape = x.shape[1:]
    m = np.asarray(mask)
    if m.shape != feat_shape:
        raise ValueError(f"mask shape {m.shape} does not match activation shape {feat_shape}")
    flat_m = m.reshape(-1).astype(bool)
    relu_idx = np.flatnonzero(flat_m)
    poly_idx = np.flatnonzero(~flat_m)
    words = x.payload.words.reshape(batch, -1)
    out = np.empty_like(words)

    if relu_idx.size:
        xr = sess.share_of(words[:, relu_idx], x.scale)
        out[:, relu_idx] = relu_secure(sess, xr).payload.words
    if poly_idx.size:
        sel = lambda c: np.broadcast_to(np.asarray(c, dtype=np.float64), feat_shape).reshape(-1)[poly_idx]
        xp = sess.share_of(words[:, poly_idx], x.scale)
        c2p = sel(c2) if c2 is not None else None
        out[:, poly_idx] = dapa_eval_secure(sess, xp, sel(c0), sel(c1), c2p).payload.words
    return sess.share_of(out.reshape(x.shape), x.scale)


# ---- tape request planning ---------------------------------------------------
# These mirror the consumption order of the operations above; the runtime
# builds its dealer tapes from them and tests assert that running an op
# leaves exactly zero unused records.


def a2b_requests(shape, cfg: FixedConfig) -> list:
    levels = math.ceil(math.log2(cfg.total_bits))
    return [dl.AndRequest(tuple(shape))] + [dl.AndRequest((2, *shape)) for _ in range(levels)]


def ltz_requests(shape, cfg: FixedConfig) -> list:
    return a2b_requests(shape, cfg) + [dl.BeaverRequest("elementwise", tuple(shape), tuple(shape))]


def relu_requests(shape, cfg: FixedConfig) -> list:
    return ltz_requests(shape, cfg) + [dl.BeaverRequest("elementwise", tuple(shape), tuple(shape))]


def dapa_requests(shape, degree: int = 2) -> list:
    return [dl.SquareRequest(tuple(shape))] if degree >= 2 else []


def hybrid_requests(batch: int, mask: np.ndarray, cfg: FixedConfig, degree: int = 2) -> list:
    flat_m = np.asarray(mask).reshape(-1).astype(bool)
    n_relu = int(flat_m.sum())
    n_poly = flat_m.size - n_relu
    reqs: list = []
    if n_relu:
        reqs += relu_requests((batch, n_relu), cfg)
    if n_poly:
        reqs += dapa_requests((batch, n_poly), degree)
    return reqs
