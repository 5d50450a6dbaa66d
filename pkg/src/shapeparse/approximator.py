"""Small numpy networks with hand-written reverse-mode gradients.

A network owns one flat float64 parameter vector; layers hold views into it,
so optimizers and finite-difference checks operate on a single array.
Inputs are feature blocks of shape (N, F, F, C).  Convolutions use
kernel == stride (non-overlapping patches), which keeps both passes as
reshapes plus a matrix product.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grammar import N_RULES


@dataclass
class Architecture:
    side: int = 32
    in_channels: int = 2
    conv: tuple[int, ...] = (8, 16)
    kernel: int = 2
    dense: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64,)
    init: str = "uniform"  # or "zero"
    head_scale: float = 0.1
    # subtracted from every feature channel so trunk inputs are roughly centred
    input_shift: float = 0.5
    # critic sees the split drawn as a soft step image in an extra input channel
    split_map: bool = False
    # width of the soft step, in feature cells
    split_map_width: float = 1.0

    def __post_init__(self):
        self.conv = tuple(self.conv)
        self.dense = tuple(self.dense)
        self.critic_hidden = tuple(self.critic_hidden)
        side = self.side
        for _ in self.conv:
            if side % self.kernel:
                raise ValueError(f"feature side {self.side} not divisible through the conv stack")
            side //= self.kernel

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    clip: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.clip <= 0:
            raise ValueError("learning rate and clip must be positive")


class NumericError(FloatingPointError):
    pass


# layers -------------------------------------------------------------------


class _Layer:
    shapes: tuple = ()

    def bind(self, flat: np.ndarray, grad: np.ndarray, offset: int) -> int:
        self.params, self.grads = [], []
        for shape in self.shapes:
            n = int(np.prod(shape))
            self.params.append(flat[offset:offset + n].reshape(shape))
            self.grads.append(grad[offset:offset + n].reshape(shape))
            offset += n
        return offset

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)


class Dense(_Layer):
    def __init__(self, n_in: int, n_out: int, scale: float = 1.0):
        self.shapes = ((n_in, n_out), (n_out,))
        self.fan_in = n_in
        self.scale = scale

    def forward(self, x):
        w, b = self.params
        return x @ w + b, x

    def backward(self, x, dout):
        w, _ = self.params
        self.grads[0] += x.T @ dout
        self.grads[1] += dout.sum(axis=0)
        return dout @ w.T


class PatchConv(_Layer):
    """Convolution with kernel == stride over NHWC input."""

    def __init__(self, c_in: int, c_out: int, k: int):
        self.k = k
        self.shapes = ((k * k * c_in, c_out), (c_out,))
        self.fan_in = k * k * c_in
        self.scale = 1.0

    def forward(self, x):
        n, h, w, c = x.shape
        k = self.k
        cols = (x.reshape(n, h // k, k, w // k, k, c)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(n * (h // k) * (w // k), k * k * c))
        wt, b = self.params
        out = (cols @ wt + b).reshape(n, h // k, w // k, -1)
        return out, (cols, x.shape)

    def backward(self, cache, dout):
        cols, (n, h, w, c) = cache
        k = self.k
        wt, _ = self.params
        d2 = dout.reshape(-1, dout.shape[-1])
        self.grads[0] += cols.T @ d2
        self.grads[1] += d2.sum(axis=0)
        dcols = d2 @ wt.T
        return (dcols.reshape(n, h // k, w // k, k, k, c)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(n, h, w, c))


class Tanh(_Layer):
    def forward(self, x):
        y = np.tanh(x)
        return y, y

    def backward(self, y, dout):
        return dout * (1.0 - y * y)


class Flatten(_Layer):
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, dout):
        return dout.reshape(shape)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, dout):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dout = layer.backward(c, dout)
        return dout


def _trunk_layers(arch: Architecture, extra_channels: int = 0) -> tuple[list, int]:
    layers, c, side = [], arch.in_channels + extra_channels, arch.side
    for c_out in arch.conv:
        layers += [PatchConv(c, c_out, arch.kernel), Tanh()]
        c, side = c_out, side // arch.kernel
    layers.append(Flatten())
    n = c * side * side
    for width in arch.dense:
        layers += [Dense(n, width), Tanh()]
        n = width
    return layers, n


class _Network:
    """Shared parameter plumbing for the policy and critic networks."""

    kind = "network"

    def __init__(self, arch: Architecture, seed: int = 0):
        self.arch = arch
        self.seed = seed
        self.size = sum(l.size for l in self._all_layers())
        self.params = np.zeros(self.size)
        self.grad = np.zeros(self.size)
        offset = 0
        for layer in self._all_layers():
            offset = layer.bind(self.params, self.grad, offset)
        if arch.init == "uniform":
            rng = np.random.default_rng(seed)
            for layer in self._all_layers():
                if isinstance(layer, (Dense, PatchConv)):
                    bound = layer.scale / np.sqrt(layer.fan_in)
                    layer.params[0][...] = rng.uniform(-bound, bound, layer.shapes[0])
        elif arch.init != "zero":
            raise ValueError(f"unknown init {arch.init!r}")

    def _all_layers(self):
        raise NotImplementedError

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ValueError("parameter vector has the wrong size")
        self.params[...] = flat

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def blocks(self) -> list[tuple[str, slice]]:
        """Named slices of the flat vector, one per weight/bias array."""
        out, offset = [], 0
        for i, layer in enumerate(self._all_layers()):
            for j, shape in enumerate(layer.shapes):
                n = int(np.prod(shape))
                out.append((f"{type(layer).__name__}{i}.{'wb'[j]}", slice(offset, offset + n)))
                offset += n
        return out

    def clone(self):
        other = type(self)(self.arch, self.seed)
        other.set_params(self.params)
        return other


class PolicyNet(_Network):
    """Shared trunk with a rule-logit head and a split pre-activation head."""

    kind = "policy"

    def __init__(self, arch: Architecture | None = None, seed: int = 0):
        arch = arch or Architecture()
        layers, n = _trunk_layers(arch)
        self.trunk = Sequential(layers)
        self.head = Dense(n, N_RULES + 1, scale=arch.head_scale)
        super().__init__(arch, seed)

    def _all_layers(self):
        return [*self.trunk.layers, self.head]

    def raw(self, features):
        x = np.asarray(features, dtype=np.float64) - self.arch.input_shift
        h, caches = self.trunk.forward(x)
        out, hc = self.head.forward(h)
        return out, (caches, hc)

    def forward(self, features, masks):
        """Masked rule probabilities (N, 4), split fractions (N,), cache."""
        out, cache = self.raw(features)
        masks = np.asarray(masks, dtype=bool)
        if not masks.any(axis=1).all():
            raise ValueError("every state needs at least one legal rule")
        logits = np.where(masks, out[:, :N_RULES], -np.inf)
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        z = out[:, N_RULES]
        split = 1.0 / (1.0 + np.exp(-z))
        return probs, split, (cache, probs, split, z, masks)

    def backward(self, cache, dlogits, dsplit=None, dz=None):
        """Accumulate parameter gradients; returns the input gradient.

        ``dlogits`` is the gradient w.r.t. the (masked) rule logits, ``dsplit``
        w.r.t. the split fraction, ``dz`` w.r.t. its pre-activation.
        """
        (caches, hc), probs, split, z, masks = cache
        dout = np.zeros((probs.shape[0], N_RULES + 1))
        dout[:, :N_RULES] = np.where(masks, dlogits, 0.0)
        if dsplit is not None:
            dout[:, N_RULES] += dsplit * split * (1.0 - split)
        if dz is not None:
            dout[:, N_RULES] += dz
        dh = self.head.backward(hc, dout)
        return self.trunk.backward(caches, dh)


class CriticNet(_Network):
    """Q(s, r, l): trunk features joined with one-hot(r) and l * one-hot(r).

    With ``arch.split_map`` the trunk also receives the split as an image:
    tanh((u - l) / tau) along the split axis (u = cell centre in (0, 1)),
    zero for assignment rules.  This lets the convolutions line the cut up
    with the region content.
    """

    kind = "critic"

    def __init__(self, arch: Architecture | None = None, seed: int = 0):
        arch = arch or Architecture()
        layers, n = _trunk_layers(arch, 1 if arch.split_map else 0)
        self.trunk = Sequential(layers)
        hidden = []
        m = n + 2 * N_RULES
        for width in arch.critic_hidden:
            hidden += [Dense(m, width), Tanh()]
            m = width
        hidden.append(Dense(m, 1, scale=arch.head_scale))
        self.head = Sequential(hidden)
        self.n_trunk = n
        super().__init__(arch, seed + 7919)
        self.seed = seed

    def _all_layers(self):
        return [*self.trunk.layers, *self.head.layers]

    def _split_map(self, rules, split):
        side = self.arch.side
        tau = self.arch.split_map_width / side
        u = (np.arange(side) + 0.5) / side
        step = np.tanh((u[None, :] - split[:, None]) / tau)  # (n, side)
        along_x = (rules == 0)[:, None, None]
        along_y = (rules == 1)[:, None, None]
        img = along_x * step[:, None, :] + along_y * step[:, :, None]
        # d img / d l
        dstep = -(1.0 - step * step) / tau
        dimg = along_x * dstep[:, None, :] + along_y * dstep[:, :, None]
        return img[..., None], dimg

    def forward(self, features, rules, split):
        x = np.asarray(features, dtype=np.float64) - self.arch.input_shift
        rules = np.asarray(rules, dtype=np.int64)
        split = np.asarray(split, dtype=np.float64)
        dimg = None
        if self.arch.split_map:
            img, dimg = self._split_map(rules, split)
            x = np.concatenate([x, img], axis=3)
        h, tc = self.trunk.forward(x)
        onehot = np.zeros((x.shape[0], N_RULES))
        onehot[np.arange(x.shape[0]), rules] = 1.0
        joined = np.concatenate([h, onehot, onehot * split[:, None]], axis=1)
        q, hc = self.head.forward(joined)
        return q[:, 0], (tc, hc, onehot, dimg)

    def backward(self, cache, dq, need_input: bool = True):
        """Accumulate parameter gradients; returns (d_features, d_split).

        d_features is None when ``need_input`` is false.
        """
        tc, hc, onehot, dimg = cache
        dj = self.head.backward(hc, np.asarray(dq, dtype=np.float64)[:, None])
        dsplit = (dj[:, self.n_trunk + N_RULES:] * onehot).sum(axis=1)
        dx = self.trunk.backward(tc, dj[:, :self.n_trunk])
        if dimg is not None:
            dsplit = dsplit + (dx[..., -1] * dimg).sum(axis=(1, 2))
            dx = dx[..., :-1]
        return (dx if need_input else None), dsplit

    def split_gradient(self, features, rules, split):
        """dQ/dl without touching the parameter gradient buffer."""
        saved = self.grad.copy()
        q, cache = self.forward(features, rules, split)
        _, dsplit = self.backward(cache, np.ones_like(q), need_input=False)
        self.grad[...] = saved
        return q, dsplit


def policy_forward(net: PolicyNet, features, legal):
    """Single-state convenience wrapper: (rule probabilities, split fraction)."""
    probs, split, _ = net.forward(np.asarray(features)[None], np.asarray(legal)[None])
    return probs[0], float(split[0])


def critic_forward(net: CriticNet, features, rule: int, split: float) -> float:
    q, _ = net.forward(np.asarray(features)[None], [int(rule)], [split])
    return float(q[0])


# optimizer ----------------------------------------------------------------


class Adam:
    """Adam with element-wise gradient clipping; minimises by default."""

    def __init__(self, size: int, config: OptimizerConfig | None = None):
        self.config = config or OptimizerConfig()
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step_count = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite gradient")
        c = self.config
        g = np.clip(grad, -c.clip, c.clip)
        self.step_count += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        m_hat = self.m / (1 - c.beta1 ** self.step_count)
        v_hat = self.v / (1 - c.beta2 ** self.step_count)
        params -= c.lr * m_hat / (np.sqrt(v_hat) + c.eps)
        return params


def adam_step(params, gradient, config: OptimizerConfig, state: Adam | None = None):
    """Functional form: returns (updated copy of params, optimizer state)."""
    state = state or Adam(np.size(params), config)
    out = np.array(params, dtype=np.float64, copy=True)
    state.step(out, np.asarray(gradient, dtype=np.float64))
    return out, state


# gradient checking --------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation scaled by the largest gradient magnitude."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def finite_difference(f, x: np.ndarray, coords=None, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(len(coords))
    for i, c in enumerate(coords):
        old = flat[c]
        flat[c] = old + h
        fp = f()
        flat[c] = old - h
        fm = f()
        flat[c] = old
        out[i] = (fp - fm) / (2 * h)
    return out


def _sample_coords(n: int, limit: int | None, rng) -> np.ndarray:
    if limit is None or n <= limit:
        return np.arange(n)
    return np.sort(rng.choice(n, size=limit, replace=False))


def grad_check(network, inputs: dict, seed: int = 0, per_block: int | None = None,
               h: float = 1e-5, corrupt: float = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``network`` is a PolicyNet or CriticNet.  The checked scalar is a random
    projection of its outputs (policy: sum c_r log pi_r + c * l; critic: Q).
    ``inputs`` holds ``features`` plus ``legal`` (policy) or ``rules``/``split``
    (critic).  Every parameter block and the inputs are checked; with
    ``per_block`` set, at most that many coordinates per block are sampled.
    ``corrupt`` adds a bias to the analytic gradient (harness self-test).
    """
    rng = np.random.default_rng(seed)
    x = np.array(inputs["features"], dtype=np.float64, copy=True)
    n = x.shape[0]

    if isinstance(network, PolicyNet):
        legal = np.asarray(inputs["legal"], dtype=bool)
        c_rule = rng.normal(size=(n, N_RULES)) * legal
        c_split = rng.normal(size=n)

        def scalar():
            probs, split, _ = network.forward(x, legal)
            logp = np.log(np.where(legal, probs, 1.0))
            return float((c_rule * logp).sum() + (c_split * split).sum())

        network.zero_grad()
        probs, split, cache = network.forward(x, legal)
        # d/dlogits of sum_r c_r log p_r = c - p * sum(c)
        dlogits = c_rule - probs * c_rule.sum(axis=1, keepdims=True)
        dx = network.backward(cache, dlogits, dsplit=c_split)
        extra = {}
    else:
        rules = np.asarray(inputs["rules"], dtype=np.int64)
        split = np.array(inputs["split"], dtype=np.float64, copy=True)
        c_q = rng.normal(size=n)

        def scalar():
            q, _ = network.forward(x, rules, split)
            return float((c_q * q).sum())

        network.zero_grad()
        _, cache = network.forward(x, rules, split)
        dx, dsplit = network.backward(cache, c_q)
        extra = {"split": (split, dsplit)}

    analytic = network.grad.copy() + corrupt
    worst = 0.0
    for _, block in network.blocks():
        idx = np.arange(block.start, block.stop)
        coords = idx[_sample_coords(idx.size, per_block, rng)]
        num = finite_difference(scalar, network.params, coords, h)
        worst = max(worst, relative_error(analytic[coords], num))
    coords = _sample_coords(x.size, per_block, rng)
    worst = max(worst, relative_error(dx.reshape(-1)[coords] + corrupt,
                                      finite_difference(scalar, x, coords, h)))
    for arr, grad in extra.values():
        worst = max(worst, relative_error(grad + corrupt, finite_difference(scalar, arr, None, h)))
    network.zero_grad()
    return worst


# checkpoints --------------------------------------------------------------

MAGIC = b"SHPARSE1"


def save_checkpoint(path: str | Path, policy: PolicyNet, critic: CriticNet | None = None,
                    step: int = 0, seed: int = 0, extra: dict | None = None) -> None:
    """Write MAGIC, a little-endian u32 header length, a JSON header, then float64 params."""
    header = {
        "architecture": policy.arch.to_dict(),
        "step": int(step),
        "seed": int(seed),
        "policy_size": policy.size,
        "critic_size": 0 if critic is None else critic.size,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(policy.params.astype("<f8").tobytes())
        if critic is not None:
            fh.write(critic.params.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[PolicyNet, CriticNet | None, dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    header = json.loads(data[start:start + n])
    arch = Architecture(**header["architecture"])
    values = np.frombuffer(data[start + n:], dtype="<f8").astype(np.float64)
    ps, cs = header["policy_size"], header["critic_size"]
    if values.size != ps + cs:
        raise ValueError(f"{path}: truncated parameter block")
    policy = PolicyNet(arch, header["seed"])
    policy.set_params(values[:ps])
    critic = None
    if cs:
        critic = CriticNet(arch, header["seed"])
        critic.set_params(values[ps:])
    return policy, critic, header
