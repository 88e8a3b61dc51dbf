"""Bit-packed {-1, +1} tensors and exact XNOR/popcount convolution.

Packing convention: bit 1 stands for +1 and bit 0 for -1. Each spatial row
of each channel is packed least-significant-bit first into 64-bit words, so
column j lives in bit (j % 64) of word (j // 64). Bits past the row width
are don't-care padding and are masked out before every popcount.

The dot product of two {-1,+1} vectors of length n packed this way is

    2 * popcount(XNOR(a, b) & valid_mask) - n

because agreeing positions contribute +1 and disagreeing ones -1. The
convolution kernel below packs every receptive field (c_in * k * k taps in
(channel, tap row, tap col) order) into words and reduces each output pixel
with exactly that identity, so its integer output matches the dense
reference convolution with pad_value=-1 bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError, DomainError

WORD_BITS = 64
_WORD_BYTES = WORD_BITS // 8
_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


def words_per_row(n_bits):
    return (n_bits + WORD_BITS - 1) // WORD_BITS


def _pack_last_axis(bits):
    """Pack a boolean array along its last axis into uint64 words (LSB first)."""
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    n_bytes = packed.shape[-1]
    padded_bytes = words_per_row(bits.shape[-1]) * _WORD_BYTES
    if n_bytes != padded_bytes:
        pad = np.zeros(packed.shape[:-1] + (padded_bytes - n_bytes,), dtype=np.uint8)
        packed = np.concatenate([packed, pad], axis=-1)
    return packed.view("<u8")


def _unpack_last_axis(words, n_bits):
    """Inverse of :func:`_pack_last_axis`; returns a boolean array."""
    raw = np.ascontiguousarray(words).view(np.uint8)
    bits = np.unpackbits(raw, axis=-1, bitorder="little", count=n_bits)
    return bits.astype(bool)


def _tail_mask(n_bits):
    """Per-word validity mask for an n_bits-long packed vector."""
    nw = words_per_row(n_bits)
    mask = np.full(nw, _ALL_ONES, dtype=np.uint64)
    rem = n_bits % WORD_BITS
    if rem:
        mask[-1] = np.uint64((1 << rem) - 1)
    return mask


@dataclass(frozen=True)
class BitTensor:
    """A {-1,+1} tensor stored 1 bit per element.

    words has shape (n, c, h, words_per_row(w)); shape records the logical
    (n, c, h, w) extent.
    """

    shape: tuple
    words: np.ndarray

    @property
    def packed_bytes(self):
        return self.words.nbytes


def pack(x):
    """Pack a dense tensor whose elements are all exactly +1 or -1."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"pack() expects (n, c, h, w), got shape {x.shape}")
    if not np.all((x == 1) | (x == -1)):
        raise DomainError("pack() requires every element to be exactly +1 or -1")
    return BitTensor(shape=x.shape, words=_pack_last_axis(x > 0))


def unpack(bt, dtype=np.float32):
    """Expand a BitTensor back to a dense {-1,+1} tensor."""
    bits = _unpack_last_axis(bt.words, bt.shape[-1])
    out = np.where(bits, 1, -1).astype(dtype)
    return out.reshape(bt.shape)


def xnor_popcount_dot(a_words, b_words, n_bits):
    """{-1,+1} dot product of two packed bit vectors of valid length n_bits."""
    a_words = np.asarray(a_words, dtype=np.uint64).ravel()
    b_words = np.asarray(b_words, dtype=np.uint64).ravel()
    nw = words_per_row(n_bits)
    if a_words.size < nw or b_words.size < nw:
        raise ArgumentError(
            f"need {nw} words for {n_bits} bits, got {a_words.size} and {b_words.size}"
        )
    mask = _tail_mask(n_bits)
    agree = int(np.bitwise_count(~(a_words[:nw] ^ b_words[:nw]) & mask).sum())
    return 2 * agree - n_bits


def bit_conv2d(x, w, scale=1.0, stride=1, pad=1, out_dtype=np.float32):
    """Binary convolution via XNOR/popcount; padding is -1 (bit 0).

    x: BitTensor (n, c_in, h, w); w: BitTensor (c_out, c_in, k, k).
    Returns scale * integer_conv as ``out_dtype``, equal elementwise to
    scale * conv2d_ref(unpack(x), unpack(w), stride=stride, pad=pad,
    pad_value=-1).
    """
    if not isinstance(x, BitTensor) or not isinstance(w, BitTensor):
        raise ArgumentError("bit_conv2d operates on BitTensor operands")
    n, c_in, h, wd = x.shape
    c_out, wc_in, k, k2 = w.shape
    if k != k2:
        raise DimensionError(f"weight kernel must be square, got {k}x{k2}")
    if wc_in != c_in:
        raise DimensionError(f"input has {c_in} channels, weight expects {wc_in}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"empty output for input {h}x{wd}, kernel {k}, pad {pad}")

    # Receptive-field bits, padded with 0 (= -1), in (c_in, tap row, tap col)
    # order to mirror the dense reference layout.
    bits = _unpack_last_axis(x.words, wd).reshape(x.shape)
    bp = np.zeros((n, c_in, h + 2 * pad, wd + 2 * pad), dtype=bool)
    bp[:, :, pad : pad + h, pad : pad + wd] = bits
    win = np.lib.stride_tricks.sliding_window_view(bp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    rf = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c_in * k * k)
    rf_words = _pack_last_axis(rf)

    wbits = _unpack_last_axis(w.words, k).reshape(w.shape)
    w_words = _pack_last_axis(wbits.reshape(c_out, c_in * k * k))

    n_taps = c_in * k * k
    mask = _tail_mask(n_taps)
    counts = np.empty((n, ho, wo, c_out), dtype=np.int64)
    # Chunk output channels to bound the (n, ho, wo, chunk, words) temporary.
    chunk = max(1, min(c_out, (1 << 22) // max(1, n * ho * wo * rf_words.shape[-1])))
    for lo in range(0, c_out, chunk):
        hi = min(c_out, lo + chunk)
        xnor = ~(rf_words[:, :, :, None, :] ^ w_words[None, None, None, lo:hi, :])
        counts[..., lo:hi] = np.bitwise_count(xnor & mask).astype(np.int64).sum(axis=-1)
    ints = 2 * counts - n_taps
    out = ints.transpose(0, 3, 1, 2).astype(out_dtype)
    return np.asarray(scale, dtype=out_dtype) * out
