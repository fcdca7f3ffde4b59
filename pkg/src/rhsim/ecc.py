"""
Single-error-correcting Hamming code used to model LPDDR4 on-die ECC.

Codeword positions are numbered 1..n in the classic Hamming layout: positions
that are powers of two hold check bits, the rest hold data bits in order.  The
column of the parity-check matrix for position ``i`` is simply ``i`` written
in binary, so the syndrome of an error pattern is the XOR of the flipped
positions.  A syndrome that names no codeword position (possible because
2**r - 1 > n for a shortened code) leaves the word untouched.

Flip indices given to :func:`on_die_ecc_decode` are data-bit indices
``0..k-1`` followed by check-bit indices ``k..k+r-1``.
"""

from __future__ import annotations

import enum
from functools import lru_cache
from typing import Iterable, List, Tuple

import numpy as np


class EccAction(str, enum.Enum):
    UNCHANGED = "unchanged"
    CORRECTED = "corrected"
    MISCORRECTED = "miscorrected"


class SecCode:
    """Shortened Hamming SEC code over ``data_bits`` data bits."""

    def __init__(self, data_bits: int = 128):
        if data_bits < 1:
            raise ValueError("data_bits must be >= 1")
        r = 1
        while (1 << r) < data_bits + r + 1:
            r += 1
        self.data_bits = data_bits
        self.check_bits = r
        self.n = data_bits + r
        data_pos, check_pos = [], []
        for pos in range(1, self.n + 1):
            (check_pos if pos & (pos - 1) == 0 else data_pos).append(pos)
        self.data_pos = data_pos  # data bit i lives at codeword position data_pos[i]
        self.check_pos = check_pos
        self._pos_to_index = {p: i for i, p in enumerate(data_pos)}
        self._pos_to_index.update({p: data_bits + j for j, p in enumerate(check_pos)})

    def position(self, index: int) -> int:
        if index < self.data_bits:
            return self.data_pos[index]
        return self.check_pos[index - self.data_bits]

    def parity_check_matrix(self) -> np.ndarray:
        """``H`` with one column per bit index (data bits first, then check bits)."""
        cols = [self.position(i) for i in range(self.n)]
        return np.array([[(c >> b) & 1 for c in cols] for b in range(self.check_bits)],
                        dtype=np.uint8)

    def encode(self, data: int) -> int:
        """Check bits for ``data``; bit ``j`` of the result is check bit ``j``."""
        s = 0
        for i, pos in enumerate(self.data_pos):
            if (data >> i) & 1:
                s ^= pos
        parity = 0
        for j, pos in enumerate(self.check_pos):
            # check bit at position 2**j absorbs syndrome bit j
            if s & pos:
                parity |= 1 << j
        return parity

    def syndrome(self, data: int, parity: int) -> int:
        s = 0
        for i, pos in enumerate(self.data_pos):
            if (data >> i) & 1:
                s ^= pos
        for j, pos in enumerate(self.check_pos):
            if (parity >> j) & 1:
                s ^= pos
        return s

    def decode(self, data: int, parity: int) -> Tuple[int, int, int]:
        """Return ``(data, parity, corrected_index)``; index is -1 if untouched."""
        s = self.syndrome(data, parity)
        idx = self._pos_to_index.get(s, -1) if s else -1
        if idx < 0:
            return data, parity, -1
        if idx < self.data_bits:
            data ^= 1 << idx
        else:
            parity ^= 1 << (idx - self.data_bits)
        return data, parity, idx


@lru_cache(maxsize=8)
def sec_code(data_bits: int = 128) -> SecCode:
    return SecCode(data_bits)


def on_die_ecc_decode(data_word: int, parity: int, injected_flips: Iterable[int],
                      code: SecCode = None) -> Tuple[int, EccAction]:
    """Inject raw flips into a stored codeword and read it back through the decoder.

    ``parity`` must be the check bits of the pre-flip ``data_word``.  Returns the
    data word the system observes and what the decoder did to it relative to
    the injected errors.
    """
    code = code or sec_code(128)
    flips = set(injected_flips)
    data, par = data_word, parity
    for i in flips:
        if not 0 <= i < code.n:
            raise IndexError(f"bit index {i} outside codeword of {code.n} bits")
        if i < code.data_bits:
            data ^= 1 << i
        else:
            par ^= 1 << (i - code.data_bits)
    out, _, idx = code.decode(data, par)
    if idx < 0:
        return out, EccAction.UNCHANGED
    if idx in flips:
        return out, EccAction.CORRECTED
    return out, EccAction.MISCORRECTED


def visible_flips(flipped_data_bits: Iterable[int], code: SecCode = None) -> List[int]:
    """Data-bit indices that differ from the written word after decoding.

    The decode outcome of a SEC code depends only on the error pattern, so the
    written data itself is irrelevant here.
    """
    code = code or sec_code(128)
    flips = sorted(set(flipped_data_bits))
    if not flips:
        return []
    out, _ = on_die_ecc_decode(0, 0, flips, code)
    return [i for i in range(code.data_bits) if (out >> i) & 1]
