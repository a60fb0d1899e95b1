"""Reference DiT forward pass in NumPy.

Reads forward_inputs.ditt (parameters, latents, timesteps, labels) and
writes forward_expected.json with the predicted noise and variance channel
of every block variant.
"""

import json
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
LN_EPS = 1e-6
FREQ_DIM = 256
MAX_PERIOD = 10000.0


def read_ditt(path):
    data = path.read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        out = data[pos : pos + n]
        pos += n
        return out

    assert take(4) == b"DITT"
    (version,) = struct.unpack("<I", take(4))
    assert version == 1
    (n,) = struct.unpack("<I", take(4))
    meta = json.loads(take(n).decode()) if n else {}
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode()
        dtype = {0: "<f4", 1: "<f8"}[take(1)[0]]
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) * np.dtype(dtype).itemsize
        tensors[name] = np.frombuffer(take(size), dtype=dtype).astype(np.float64).reshape(shape)
    assert pos == len(data)
    return meta, tensors


def layer_norm(x):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def gelu(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))


def silu(x):
    return x / (1 + np.exp(-x))


def softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


class Net:
    def __init__(self, cfg, p):
        self.cfg = cfg
        self.p = p

    def lin(self, name, x):
        return x @ self.p[name + ".weight"] + self.p[name + ".bias"]

    def norm(self, name, x):
        return layer_norm(x) * self.p[name + ".weight"] + self.p[name + ".bias"]

    def attend(self, q, k, v):
        b, tq, d = q.shape
        h = self.cfg["heads"]
        split = lambda a: a.reshape(a.shape[0], a.shape[1], h, d // h).transpose(0, 2, 1, 3)
        w = softmax(split(q) @ split(k).transpose(0, 1, 3, 2) / np.sqrt(d // h))
        return (w @ split(v)).transpose(0, 2, 1, 3).reshape(b, tq, d)

    def self_attn(self, pre, x):
        q, k, v = np.split(self.lin(pre + ".qkv", x), 3, axis=-1)
        return self.lin(pre + ".proj", self.attend(q, k, v))

    def mlp(self, pre, x):
        return self.lin(pre + ".fc2", gelu(self.lin(pre + ".fc1", x)))

    def chunks(self, name, c, k):
        out = self.lin(name, silu(c))[:, None, :]
        return np.split(out, k, axis=-1)

    def block(self, i, x, t_emb, y_emb):
        b = f"blocks.{i}"
        kind = self.cfg["variant"]
        if kind == "in-context":
            x = x + self.self_attn(b + ".attn", self.norm(b + ".norm1", x))
            return x + self.mlp(b + ".mlp", self.norm(b + ".norm2", x))
        if kind == "cross-attention":
            x = x + self.self_attn(b + ".attn", self.norm(b + ".norm1", x))
            seq = self.norm(b + ".cond_norm", np.stack([t_emb, y_emb], axis=1))
            q = self.lin(b + ".cross_attn.q", self.norm(b + ".norm_cross", x))
            k, v = np.split(self.lin(b + ".cross_attn.kv", seq), 2, axis=-1)
            x = x + self.lin(b + ".cross_attn.proj", self.attend(q, k, v))
            return x + self.mlp(b + ".mlp", self.norm(b + ".norm2", x))
        c = t_emb + y_emb
        if kind == "adaln":
            s1, c1, s2, c2 = self.chunks(b + ".adaLN_modulation", c, 4)
            x = x + self.self_attn(b + ".attn", layer_norm(x) * (1 + c1) + s1)
            return x + self.mlp(b + ".mlp", layer_norm(x) * (1 + c2) + s2)
        s1, c1, g1, s2, c2, g2 = self.chunks(b + ".adaLN_modulation", c, 6)
        x = x + g1 * self.self_attn(b + ".attn", layer_norm(x) * (1 + c1) + s1)
        return x + g2 * self.mlp(b + ".mlp", layer_norm(x) * (1 + c2) + s2)

    def forward(self, z, t, labels):
        cfg, p = self.cfg, self.p
        n, size, _, ch = z.shape
        ps, d = cfg["patch"], cfg["hidden"]
        g = size // ps
        tokens = z.reshape(n, g, ps, g, ps, ch).transpose(0, 1, 3, 2, 4, 5).reshape(n, g * g, -1)
        x = self.lin("x_embedder.proj", tokens) + pos_embed(g, d)

        half = FREQ_DIM // 2
        freqs = np.exp(-np.log(MAX_PERIOD) * np.arange(half) / half)
        args = np.asarray(t, dtype=np.float64)[:, None] * freqs
        feats = np.concatenate([np.cos(args), np.sin(args)], axis=1)
        t_emb = self.lin("t_embedder.mlp.2", silu(self.lin("t_embedder.mlp.0", feats)))
        y_emb = p["y_embedder.embedding_table"][labels]

        if cfg["variant"] == "in-context":
            x = np.concatenate([x, t_emb[:, None], y_emb[:, None]], axis=1)
        for i in range(cfg["depth"]):
            x = self.block(i, x, t_emb, y_emb)
        x = x[:, : g * g]

        if cfg["variant"] in ("adaln", "adaln-zero"):
            shift, scale = self.chunks("final_layer.adaLN_modulation", t_emb + y_emb, 2)
            h = layer_norm(x) * (1 + scale) + shift
        else:
            h = self.norm("final_layer.norm_final", x)
        out = self.lin("final_layer.linear", h)
        out = out.reshape(n, g, g, ps, ps, 2 * ch).transpose(0, 1, 3, 2, 4, 5)
        out = out.reshape(n, size, size, 2 * ch)
        return out[..., :ch], out[..., ch:]


def pos_embed(grid, d):
    def axis(pos, width):
        omega = 1.0 / MAX_PERIOD ** (np.arange(width // 2) / (width // 2))
        out = np.empty(width)
        out[0::2] = np.sin(pos * omega)
        out[1::2] = np.cos(pos * omega)
        return out

    rows = [np.concatenate([axis(k // grid, d // 2), axis(k % grid, d // 2)]) for k in range(grid * grid)]
    return np.stack(rows)


def main():
    meta, tensors = read_ditt(HERE / "forward_inputs.ditt")
    z = tensors["z"]
    out = {}
    for cfg in meta["configs"]:
        prefix = cfg["variant"] + "/"
        params = {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}
        eps, v = Net(cfg, params).forward(z, meta["timesteps"], meta["labels"])
        out[cfg["variant"]] = {"eps": eps.ravel().tolist(), "v": v.ravel().tolist()}
    (HERE / "forward_expected.json").write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
