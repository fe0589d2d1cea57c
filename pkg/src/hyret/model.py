"""Full retrieval model: encoder + heads, text encoding, checkpoint I/O.

Checkpoint format (little-endian): magic ``HYRC``, u32 version, u32 JSON
header length, JSON header (encoder config + config hash + vocab hash),
then per tensor: u16 name length, name (utf-8), u8 ndim, u32 dims,
float32 data. Loading verifies the stored config hash.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from . import encoder as enc
from . import heads
from .autodiff import Tensor
from .text import Vocab, TokenizedText, pad_batch, tokenize

MAGIC = b"HYRC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: enc.EncoderConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def vocab_hash(vocab: Vocab) -> str:
    blob = "\n".join(vocab.id_to_token).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class Model:
    def __init__(self, config: enc.EncoderConfig, vocab: Vocab, params: dict = None):
        if config.vocab_size != vocab.size:
            raise enc.ConfigError(
                f"config vocab_size {config.vocab_size} != vocab size {vocab.size}")
        self.config = config
        self.vocab = vocab
        if params is None:
            params = enc.init_params(config)
            params.update(heads.init_head_params(
                config.hidden_size, np.random.default_rng(config.seed + 1)))
        self.params = params

    # -- encoding -----------------------------------------------------------

    def tokenize(self, text: str) -> TokenizedText:
        return tokenize(text, self.vocab, self.config.max_len)

    def forward_batch(self, batch):
        """Run the encoder over a list of TokenizedText; returns outputs + mask."""
        ids, mask = pad_batch(batch, self.vocab.pad_id)
        out = enc.forward(self.params, self.config, ids, mask)
        return out, np.asarray(mask)

    def encode(self, texts, batch_size: int = 32):
        """Encode raw texts into (SparseRepresentation, dense float32[H]) pairs."""
        results = []
        for lo in range(0, len(texts), batch_size):
            chunk = [self.tokenize(t) for t in texts[lo:lo + batch_size]]
            out, _ = self.forward_batch(chunk)
            probs = heads.union_probs(out.L, self.params).data
            weights = heads.term_weights(out.L, self.params).data
            dense = heads.dense_vector(out.D[:, 0, :], self.params).data
            for row, tok in enumerate(chunk):
                positions = tok.real_token_positions()
                rep = heads.bag(tok, probs[row][positions], weights[row][positions])
                results.append((rep, dense[row].astype(np.float32)))
        return results

    def encode_one(self, text: str):
        return self.encode([text])[0]

    # -- persistence --------------------------------------------------------

    def save(self, path):
        header = {
            "config": self.config.to_dict(),
            "config_hash": config_hash(self.config),
            "vocab_hash": vocab_hash(self.vocab),
        }
        header_blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(header_blob)))
            fh.write(header_blob)
            for name in sorted(self.params):
                data = self.params[name].data.astype("<f4")
                name_b = name.encode("utf-8")
                fh.write(struct.pack("<H", len(name_b)))
                fh.write(name_b)
                fh.write(struct.pack("<B", data.ndim))
                fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
                fh.write(data.tobytes())

    @classmethod
    def load(cls, path, vocab: Vocab) -> "Model":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC:
            raise CheckpointError("bad checkpoint magic")
        version, header_len = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        header = json.loads(blob[off:off + header_len].decode("utf-8"))
        off += header_len
        config = enc.EncoderConfig(**header["config"])
        if config_hash(config) != header["config_hash"]:
            raise CheckpointError("checkpoint config hash mismatch")
        if vocab_hash(vocab) != header["vocab_hash"]:
            raise CheckpointError("checkpoint was built with a different vocab")
        params = {}
        while off < len(blob):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
            params[name] = Tensor(data.reshape(shape).astype(np.float64),
                                  requires_grad=True)
        return cls(config, vocab, params)
