"""Named parameter store: trainability masks, SGD, checkpoints, grad checking.

Parameters live in an insertion-ordered dict of name -> Tensor. Name prefixes
partition the model into groups (``sem_enc.``, ``lm.``, ...), which is what
the stage schedule toggles via `set_trainable`.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

_CKPT_MAGIC = b"SLCK0001"
_ADAM_MAGIC = b"ADAM0001"


class ParamStore:
    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._momentum: dict[str, np.ndarray] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self._adam_t = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params.keys())

    def num_scalars(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- trainability / optimization ----------------------------------------

    def set_trainable(self, prefixes: list[str] | tuple[str, ...]) -> list[str]:
        """Mark exactly the params whose name starts with any prefix trainable.

        Every other parameter gets requires_grad=False so the tape never
        reaches it. Returns the trainable names, in insertion order.
        """
        chosen = []
        for name, p in self.params.items():
            on = any(name.startswith(pre) for pre in prefixes)
            p.requires_grad = on
            if not on:
                p.grad = None
            if on:
                chosen.append(name)
        return chosen

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def sgd_step(self, lr: float, momentum: float = 0.0) -> None:
        """In-place SGD over trainable params that received a gradient."""
        for name, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            if momentum > 0.0:
                buf = self._momentum.get(name)
                if buf is None:
                    buf = np.zeros_like(p.data)
                    self._momentum[name] = buf
                buf *= momentum
                buf += p.grad
                p.data -= lr * buf
            else:
                p.data -= lr * p.grad

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        """Adam update over trainable params that received a gradient.

        One shared step counter drives bias correction; moment buffers are
        lazily created per parameter and never touch frozen ones.
        """
        self._adam_t += 1
        c1 = 1.0 - beta1 ** self._adam_t
        c2 = 1.0 - beta2 ** self._adam_t
        for name, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            m = self._adam_m.get(name)
            if m is None:
                m = self._adam_m[name] = np.zeros_like(p.data)
                self._adam_v[name] = np.zeros_like(p.data)
            v = self._adam_v[name]
            m *= beta1
            m += (1.0 - beta1) * p.grad
            v *= beta2
            v += (1.0 - beta2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)

    # -- checkpoint codec ----------------------------------------------------

    def save(self, path: str) -> None:
        """Binary dump: magic, count, then (name, shape, raw f64le) records.

        When Adam has stepped, an optimizer-state trailer follows (shared
        step counter plus per-parameter moment pairs), so a warm start from
        this checkpoint continues the optimizer exactly where it stopped
        instead of restarting its bias correction from scratch.
        """
        with open(path, "wb") as f:
            f.write(_CKPT_MAGIC)
            f.write(struct.pack("<I", len(self.params)))
            for name, p in self.params.items():
                nb = name.encode("utf-8")
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", p.data.ndim))
                for d in p.data.shape:
                    f.write(struct.pack("<I", d))
                f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
            if self._adam_t or self._adam_m:
                f.write(_ADAM_MAGIC)
                f.write(struct.pack("<I", self._adam_t))
                f.write(struct.pack("<I", len(self._adam_m)))
                for name, m in self._adam_m.items():
                    nb = name.encode("utf-8")
                    f.write(struct.pack("<I", len(nb)))
                    f.write(nb)
                    f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
                    f.write(np.ascontiguousarray(self._adam_v[name],
                                                 dtype="<f8").tobytes())

    def load(self, path: str) -> None:
        """Restore values bit-exactly into already-registered parameters.

        If the file carries an Adam-state trailer the optimizer moments and
        step counter are restored too; otherwise Adam restarts fresh.
        Momentum buffers for plain SGD stay process-local either way.
        """
        with open(path, "rb") as f:
            magic = f.read(len(_CKPT_MAGIC))
            if magic != _CKPT_MAGIC:
                raise ValueError(f"not a checkpoint file: {path}")
            (count,) = struct.unpack("<I", f.read(4))
            seen = set()
            for _ in range(count):
                (nlen,) = struct.unpack("<I", f.read(4))
                name = f.read(nlen).decode("utf-8")
                (ndim,) = struct.unpack("<I", f.read(4))
                shape = tuple(struct.unpack("<I", f.read(4))[0]
                              for _ in range(ndim))
                size = int(np.prod(shape)) if shape else 1
                raw = f.read(8 * size)
                arr = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
                if name not in self.params:
                    raise ValueError(f"checkpoint has unknown parameter {name}")
                if self.params[name].data.shape != shape:
                    raise ValueError(
                        f"checkpoint shape mismatch for {name}: "
                        f"{shape} vs {self.params[name].data.shape}")
                self.params[name].data = arr
                seen.add(name)
            missing = set(self.params) - seen
            if missing:
                raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
            self._adam_t = 0
            self._adam_m.clear()
            self._adam_v.clear()
            trailer = f.read(len(_ADAM_MAGIC))
            if not trailer:
                return
            if trailer != _ADAM_MAGIC:
                raise ValueError(f"unrecognized checkpoint trailer in {path}")
            (self._adam_t,) = struct.unpack("<I", f.read(4))
            (n_bufs,) = struct.unpack("<I", f.read(4))
            for _ in range(n_bufs):
                (nlen,) = struct.unpack("<I", f.read(4))
                name = f.read(nlen).decode("utf-8")
                if name not in self.params:
                    raise ValueError(
                        f"checkpoint optimizer state for unknown parameter {name}")
                shape = self.params[name].data.shape
                size = int(np.prod(shape)) if shape else 1
                m = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape)
                v = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape)
                self._adam_m[name] = m.copy()
                self._adam_v[name] = v.copy()


def grad_check(store: ParamStore, loss_fn, h: float = 1e-5,
               sample_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> dict:
    """Compare tape gradients against central finite differences.

    loss_fn: () -> Tensor scalar, re-run from scratch each call so the
    perturbed parameter value is actually consulted.

    sample_per_param=None checks every scalar; an integer checks that many
    randomly chosen coordinates per parameter tensor (still touching every
    tensor). Returns {"max_rel_err", "worst_param", "checked"}.
    """
    store.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in store.params.items() if p.requires_grad}

    max_rel = 0.0
    worst = None
    checked = 0
    for name, p in store.params.items():
        if not p.requires_grad:
            continue
        flat = p.data.reshape(-1)
        n = flat.size
        if sample_per_param is None or sample_per_param >= n:
            coords = range(n)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=sample_per_param, replace=False)
        ga = analytic[name].reshape(-1)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn().item()
            flat[i] = keep - h
            down = loss_fn().item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(ga[i]), abs(numeric), 1e-4)
            rel = abs(ga[i] - numeric) / denom
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (name, int(i), float(ga[i]), float(numeric))
    store.zero_grad()
    return {"max_rel_err": max_rel, "worst_param": worst, "checked": checked}
