"""Prefix-preserving IPv4 anonymization (Crypto-PAn construction).

Output bit ``i`` of an address is its input bit ``i`` XORed with the most
significant bit of ``AES_k(prefix_i || pad)``, where ``prefix_i`` is the first
``i`` bits of the input. Two addresses sharing exactly a ``k``-bit prefix
therefore map to images sharing exactly a ``k``-bit prefix.

Addresses narrower than 32 bits (``bits < 32``) are handled by left-aligning
them in the 32-bit word, so a ``bits``-wide mapping is a bijection on
``[0, 2**bits)``. At ``bits=32`` the mapping is the standard Crypto-PAn one.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

KEY_BYTES = 32
KEY_ENV_VAR = "HYPERTRAFFIC_KEY"
TABLE_MAGIC = b"HTAN"
TABLE_VERSION = 1
_TABLE_HEADER = struct.Struct("<4sHH8s")

# AES blocks encrypted per call; 2**20 blocks = 16 MiB of cipher input.
_AES_BATCH = 1 << 20


class KeyMaterialError(ValueError):
    """Missing or malformed anonymization key material."""


class TableError(ValueError):
    """Lookup table cannot be built, read, or does not match the key."""


class AnonKey:
    """32 bytes of secret key material.

    The first half keys AES-128, the second half is encrypted once to form
    the padding block. Keys are loaded from a file or the environment, never
    taken from the command line.
    """

    def __init__(self, material: bytes):
        if len(material) != KEY_BYTES:
            raise KeyMaterialError(f"key must be {KEY_BYTES} bytes, got {len(material)}")
        self._material = bytes(material)
        self._cipher = Cipher(algorithms.AES(self._material[:16]), modes.ECB())
        enc = self._cipher.encryptor()
        self.pad = enc.update(self._material[16:]) + enc.finalize()

    @classmethod
    def from_file(cls, path) -> "AnonKey":
        """Read a key file holding 32 raw bytes or 64 hex characters."""
        path = Path(path)
        if not path.is_file():
            raise KeyMaterialError(f"key file not found: {path}")
        data = path.read_bytes()
        if len(data) == KEY_BYTES:
            return cls(data)
        return cls.from_hex(data.decode("ascii", errors="replace").strip())

    @classmethod
    def from_hex(cls, text: str) -> "AnonKey":
        try:
            return cls(bytes.fromhex(text))
        except ValueError:
            raise KeyMaterialError("key must be 32 raw bytes or 64 hex characters") from None

    @classmethod
    def from_env(cls, var: str = KEY_ENV_VAR) -> "AnonKey":
        text = os.environ.get(var)
        if not text:
            raise KeyMaterialError(f"environment variable {var} is not set")
        return cls.from_hex(text)

    @classmethod
    def generate(cls) -> "AnonKey":
        return cls(os.urandom(KEY_BYTES))

    @property
    def fingerprint(self) -> bytes:
        """8-byte identifier of the key, safe to store next to tables."""
        return hashlib.sha256(b"hypertraffic-anon\0" + self._material).digest()[:8]

    def encrypt_blocks(self, data: bytes) -> bytes:
        enc = self._cipher.encryptor()
        return enc.update(data) + enc.finalize()

    def __repr__(self) -> str:
        return f"AnonKey(fingerprint={self.fingerprint.hex()})"


def _check_bits(bits: int) -> None:
    if not 1 <= bits <= 32:
        raise ValueError(f"address bit-width must be in [1, 32], got {bits}")


def anonymize_array(key: AnonKey, addrs, bits: int = 32) -> np.ndarray:
    """Direct-mode anonymization of an array of ``bits``-wide addresses."""
    _check_bits(bits)
    addrs = np.asarray(addrs)
    shape = addrs.shape
    flat = addrs.reshape(-1).astype(np.uint64)
    if len(flat) and int(flat.max()) >= 1 << bits:
        raise ValueError(f"address exceeds {bits}-bit range")
    flat = flat.astype(np.uint32)
    # each distinct address costs `bits` AES calls, so do each only once
    uniq, inverse = np.unique(flat, return_inverse=True)
    out = np.empty(len(uniq), dtype=np.uint32)
    per_chunk = max(1, _AES_BATCH // bits)
    for lo in range(0, len(uniq), per_chunk):
        out[lo:lo + per_chunk] = _anonymize_unique(key, uniq[lo:lo + per_chunk], bits)
    return out[inverse].reshape(shape)


def _anonymize_unique(key: AnonKey, addrs: np.ndarray, bits: int) -> np.ndarray:
    shift = np.uint32(32 - bits)
    aligned = addrs << shift
    n = len(aligned)
    pad_word = np.uint32(int.from_bytes(key.pad[:4], "big"))
    # prefix mask for positions 0..bits-1: first `pos` bits of the address
    pos = np.arange(bits, dtype=np.uint64)
    masks = ((np.uint64(0xFFFFFFFF) << (np.uint64(32) - pos)) & np.uint64(0xFFFFFFFF)).astype(np.uint32)
    words = (aligned[:, None] & masks[None, :]) | (pad_word & ~masks[None, :])
    blocks = np.empty((n * bits, 16), dtype=np.uint8)
    blocks[:, :4] = words.reshape(-1).astype(">u4").view(np.uint8).reshape(-1, 4)
    blocks[:, 4:] = np.frombuffer(key.pad[4:], dtype=np.uint8)
    cipher = np.frombuffer(key.encrypt_blocks(blocks.tobytes()), dtype=np.uint8)
    msb = (cipher[::16] >> 7).astype(np.uint32).reshape(n, bits)
    weights = np.uint32(1) << (np.uint32(31) - np.arange(bits, dtype=np.uint32))
    otp = (msb * weights[None, :]).sum(axis=1, dtype=np.uint64).astype(np.uint32)
    return (aligned ^ otp) >> shift


def anonymize(key: AnonKey, addr: int, bits: int = 32) -> int:
    """Anonymize one address (direct mode)."""
    return int(anonymize_array(key, np.array([addr], dtype=np.uint64), bits)[0])


class LookupTable:
    """Precomputed anonymization of every ``bits``-wide address.

    ``table[x] == anonymize(key, x, bits)``. At 32 bits this is
    ``2**32 * 4`` bytes (16 GiB).
    """

    def __init__(self, table: np.ndarray, bits: int, fingerprint: bytes):
        _check_bits(bits)
        table = np.asarray(table, dtype=np.uint32)
        if table.shape != (1 << bits,):
            raise TableError(f"table of {bits} bits must have {1 << bits} entries")
        self.table = table
        self.bits = bits
        self.fingerprint = bytes(fingerprint)

    @staticmethod
    def required_bytes(bits: int) -> int:
        return (1 << bits) * 4

    @classmethod
    def build(cls, key: AnonKey, bits: int = 32) -> "LookupTable":
        _check_bits(bits)
        size = 1 << bits
        try:
            table = np.empty(size, dtype=np.uint32)
        except (MemoryError, ValueError) as exc:
            raise TableError(f"cannot allocate {cls.required_bytes(bits)} bytes "
                             f"for a {bits}-bit table: {exc}") from None
        step = max(1, _AES_BATCH // bits)
        for lo in range(0, size, step):
            hi = min(size, lo + step)
            table[lo:hi] = _anonymize_unique(key, np.arange(lo, hi, dtype=np.uint32), bits)
        return cls(table, bits, key.fingerprint)

    def lookup(self, addrs) -> np.ndarray:
        addrs = np.asarray(addrs)
        if addrs.size and int(addrs.max()) >= len(self.table):
            raise ValueError(f"address exceeds {self.bits}-bit table range")
        return self.table[addrs]

    def check_key(self, key: AnonKey) -> None:
        if key.fingerprint != self.fingerprint:
            raise TableError("lookup table was built with a different key "
                             f"({self.fingerprint.hex()} != {key.fingerprint.hex()})")

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_TABLE_HEADER.pack(TABLE_MAGIC, TABLE_VERSION, self.bits, self.fingerprint))
            fh.write(self.table.astype("<u4").tobytes())

    @classmethod
    def load(cls, path, key: AnonKey | None = None) -> "LookupTable":
        """Load a saved table; with ``key`` given, a fingerprint mismatch is an error."""
        with open(path, "rb") as fh:
            head = fh.read(_TABLE_HEADER.size)
            if len(head) != _TABLE_HEADER.size:
                raise TableError(f"{path}: truncated table header")
            magic, version, bits, fp = _TABLE_HEADER.unpack(head)
            if magic != TABLE_MAGIC or version != TABLE_VERSION:
                raise TableError(f"{path}: not a version {TABLE_VERSION} anonymization table")
            _check_bits(bits)
            table = np.fromfile(fh, dtype="<u4")
        if len(table) != 1 << bits:
            raise TableError(f"{path}: expected {1 << bits} entries, found {len(table)}")
        out = cls(table.astype(np.uint32), bits, fp)
        if key is not None:
            out.check_key(key)
        return out


class Anonymizer:
    """Anonymization in ``"direct"`` or ``"table"`` mode behind one interface."""

    MODES = ("direct", "table")

    def __init__(self, key: AnonKey, mode: str = "direct", bits: int = 32,
                 table: LookupTable | None = None):
        if mode not in self.MODES:
            raise ValueError(f"unknown anonymization mode {mode!r}")
        _check_bits(bits)
        self.key = key
        self.mode = mode
        self.bits = bits
        if mode == "table":
            if table is None:
                table = LookupTable.build(key, bits)
            table.check_key(key)
            if table.bits != bits:
                raise TableError(f"table is {table.bits} bits, anonymizer expects {bits}")
        self.table = table

    def __call__(self, addrs) -> np.ndarray:
        if self.mode == "table":
            return self.table.lookup(addrs)
        return anonymize_array(self.key, addrs, self.bits)

    def anonymize_block(self, block):
        """Map ``src`` and ``dst`` of a packet block, keeping order and timestamps."""
        if len(block) == 0:
            return block
        both = self(np.concatenate([block.src, block.dst]))
        n = len(block)
        return block.replace(src=both[:n], dst=both[n:])


def anonymize_block(anonymizer: Anonymizer, block):
    return anonymizer.anonymize_block(block)


def common_prefix_length(a: int, b: int, bits: int = 32) -> int:
    x = (a ^ b) & ((1 << bits) - 1)
    return bits - x.bit_length()
