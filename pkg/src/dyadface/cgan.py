"""Conditional GAN over standardized shape-parameter vectors.

The generator maps ``[affect (8) || z]`` to a shape vector and the
discriminator scores ``[affect (8) || shape]``. Each training step makes one
discriminator update followed by two generator updates with fresh noise.
Generation uses an exponential moving average of the generator weights,
which damps the rotation of adversarial training around its equilibrium.

Random streams: weights from ``default_rng([seed, 0])`` (generator) and
``default_rng([seed, 1])`` (discriminator); training draws use the ``rng``
passed in by the caller.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import N_AFFECT, Standardizer
from .optim import Adam
from .textio import LineReader, fmt_row, write_matrix, write_text

CLAMP = 1e-7
LEAK = 0.2


class MlpNet:
    """Fully connected net with leaky-ReLU hidden layers."""

    def __init__(self, sizes, output: str = "identity", rng=None):
        if len(sizes) < 3:
            raise ValueError("an MLP needs at least one hidden layer")
        if output not in ("identity", "sigmoid"):
            raise ValueError("output must be 'identity' or 'sigmoid'")
        self.sizes = [int(s) for s in sizes]
        self.output = output
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {}
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"W{k}"] = rng.uniform(-lim, lim, (fan_in, fan_out))
            self.params[f"b{k}"] = np.zeros(fan_out)

    def copy(self) -> "MlpNet":
        twin = MlpNet.__new__(MlpNet)
        twin.sizes, twin.output = list(self.sizes), self.output
        twin.params = {k: v.copy() for k, v in self.params.items()}
        return twin

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def logits(self, x):
        """Pre-activation of the last layer plus the cache needed by ``backward``."""
        acts = [np.asarray(x, dtype=np.float64)]
        pres = []
        h = acts[0]
        for k in range(self.n_layers):
            a = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
            pres.append(a)
            if k < self.n_layers - 1:
                h = np.where(a > 0, a, LEAK * a)
                acts.append(h)
        return pres[-1], (acts, pres)

    def __call__(self, x):
        out, _ = self.logits(x)
        if self.output == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * out))
        return out

    def backward(self, cache, grad_logits):
        """Gradients w.r.t. parameters and input, given dLoss/d(last pre-activation)."""
        acts, pres = cache
        grads = {}
        g = grad_logits
        for k in range(self.n_layers - 1, -1, -1):
            grads[f"W{k}"] = acts[k].T @ g
            grads[f"b{k}"] = g.sum(axis=0)
            g = g @ self.params[f"W{k}"].T
            if k > 0:
                g = g * np.where(pres[k - 1] > 0, 1.0, LEAK)
        return grads, g


@dataclass
class CGanConfig:
    d: int = 16
    z_dim: int | None = None  # defaults to d
    hidden: int = 64
    n_hidden: int = 2
    batch_size: int = 64
    learning_rate: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    ema_decay: float = 0.99
    seed: int = 0
    z_source: str = "gaussian"

    def __post_init__(self):
        if self.z_dim is None:
            self.z_dim = self.d

    def validate(self) -> None:
        if min(self.d, self.z_dim, self.hidden, self.n_hidden) < 1:
            raise ValueError("CGAN dimensions must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.z_source not in ("gaussian", "dictionary"):
            raise ValueError("z_source must be 'gaussian' or 'dictionary'")


@dataclass
class CGanModel:
    config: CGanConfig
    G: MlpNet
    D: MlpNet
    standardizer: Standardizer
    G_avg: MlpNet | None = None
    g_updates: int = 0
    d_updates: int = 0
    g_opt: Adam | None = field(default=None, repr=False)
    d_opt: Adam | None = field(default=None, repr=False)

    @classmethod
    def init(cls, config: CGanConfig, standardizer: Standardizer | None = None) -> "CGanModel":
        config.validate()
        hid = [config.hidden] * config.n_hidden
        G = MlpNet([N_AFFECT + config.z_dim, *hid, config.d], "identity", np.random.default_rng([config.seed, 0]))
        D = MlpNet([N_AFFECT + config.d, *hid, 1], "sigmoid", np.random.default_rng([config.seed, 1]))
        if standardizer is None:
            standardizer = Standardizer(np.zeros(config.d), np.ones(config.d))
        model = cls(config, G, D, standardizer)
        model.reset_optimizers()
        return model

    def __post_init__(self):
        if self.G_avg is None:
            self.G_avg = self.G.copy()

    def reset_optimizers(self) -> None:
        cfg = self.config
        self.g_opt = Adam(self.G.params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)
        self.d_opt = Adam(self.D.params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)

    def update_average(self) -> None:
        rate = 1.0 - self.config.ema_decay
        for k, v in self.G.params.items():
            avg = self.G_avg.params[k]
            avg += rate * (v - avg)

    @property
    def z_dim(self) -> int:
        return self.config.z_dim


def _prob(logit):
    p = 0.5 * (1.0 + np.tanh(0.5 * logit))
    return np.clip(p, CLAMP, 1.0 - CLAMP)


def _check_batch(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("empty batch")
    return x


def d_loss(D: MlpNet, G: MlpNet, x, y, z, with_grad: bool = False):
    """``-mean[log D(x, y) + log(1 - D(x, G(x, z)))]``; optionally with D gradients."""
    x, y, z = _check_batch(x), _check_batch(y), _check_batch(z)
    n = len(x)
    fake = G(np.hstack([x, z]))
    lr, cache_r = D.logits(np.hstack([x, y]))
    lf, cache_f = D.logits(np.hstack([x, fake]))
    pr, pf = _prob(lr), _prob(lf)
    loss = -float(np.mean(np.log(pr) + np.log(1.0 - pf)))
    if not with_grad:
        return loss
    # d/dlogit of -log(sigmoid) is -(1 - p); of -log(1 - sigmoid) is p; zero where clamped
    live_r = (pr > CLAMP) & (pr < 1.0 - CLAMP)
    live_f = (pf > CLAMP) & (pf < 1.0 - CLAMP)
    g_r, _ = D.backward(cache_r, -(1.0 - pr) * live_r / n)
    g_f, _ = D.backward(cache_f, pf * live_f / n)
    return loss, {k: g_r[k] + g_f[k] for k in g_r}


def g_loss(D: MlpNet, G: MlpNet, x, z, with_grad: bool = False):
    """Non-saturating generator loss ``-mean[log D(x, G(x, z))]``; optionally with G gradients."""
    x, z = _check_batch(x), _check_batch(z)
    n = len(x)
    fake, cache_g = G.logits(np.hstack([x, z]))
    lf, cache_d = D.logits(np.hstack([x, fake]))
    pf = _prob(lf)
    loss = -float(np.mean(np.log(pf)))
    if not with_grad:
        return loss
    live = (pf > CLAMP) & (pf < 1.0 - CLAMP)
    _, g_in = D.backward(cache_d, -(1.0 - pf) * live / n)
    grads, _ = G.backward(cache_g, g_in[:, N_AFFECT:])
    return loss, grads


def gaussian_z(x, rng, z_dim):
    return rng.normal(size=(len(x), z_dim))


def train_step(model: CGanModel, x, y, rng, z_sampler=None, step_index: int | None = None):
    """One discriminator update, then two generator updates with fresh z.

    ``x`` are affect conditions, ``y`` standardized shape vectors.
    ``z_sampler(x, rng)`` overrides the standard gaussian noise source.
    Returns ``(d_loss, g_loss)`` measured after the updates.
    """
    x = _check_batch(x)
    y = _check_batch(y)
    if len(x) < 2:
        raise ValueError("batch size must be >= 2")
    if model.g_opt is None or model.d_opt is None:
        model.reset_optimizers()
    draw = z_sampler or (lambda xb, r: gaussian_z(xb, r, model.z_dim))
    where = "" if step_index is None else f" at step {step_index}"

    loss, grads = d_loss(model.D, model.G, x, y, draw(x, rng), with_grad=True)
    if not np.isfinite(loss):
        raise FloatingPointError(f"discriminator loss is not finite{where}")
    model.d_opt.step(model.D.params, grads)
    model.d_updates += 1
    for _ in range(2):
        loss, grads = g_loss(model.D, model.G, x, draw(x, rng), with_grad=True)
        if not np.isfinite(loss):
            raise FloatingPointError(f"generator loss is not finite{where}")
        model.g_opt.step(model.G.params, grads)
        model.g_updates += 1
    model.update_average()
    z = draw(x, rng)
    dl, gl = d_loss(model.D, model.G, x, y, z), g_loss(model.D, model.G, x, z)
    if not (np.isfinite(dl) and np.isfinite(gl)):
        raise FloatingPointError(f"CGAN loss is not finite{where}")
    return dl, gl


def train(model: CGanModel, x, y, steps: int, rng, z_sampler=None, log=None, log_every: int = 500):
    """Minibatch loop over a fixed dataset; returns the per-step (d_loss, g_loss) history."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    history = []
    bs = min(model.config.batch_size, len(x))
    for step in range(steps):
        idx = rng.choice(len(x), size=bs, replace=len(x) < bs)
        history.append(train_step(model, x[idx], y[idx], rng, z_sampler, step))
        if log is not None and (step + 1) % log_every == 0:
            log(f"step {step + 1}/{steps} d_loss {history[-1][0]:.4f} g_loss {history[-1][1]:.4f}")
    return history


def generate(model: CGanModel, affect, z=None, count: int = 1, rng=None, standardized: bool = False,
             averaged: bool = True):
    """Generate ``count`` shape vectors for one affect condition.

    ``z`` may be a single vector (reused) or ``(count, z_dim)``; when absent
    it is drawn from a standard gaussian with ``rng``. ``averaged`` selects
    the weight-averaged generator rather than the live one.
    """
    affect = np.asarray(affect, dtype=np.float64).reshape(N_AFFECT)
    if z is None:
        rng = rng if rng is not None else np.random.default_rng()
        z = rng.normal(size=(count, model.z_dim))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != model.z_dim:
        raise ValueError(f"z has dimension {z.shape[1]}, model expects {model.z_dim}")
    if len(z) == 1 and count > 1:
        z = np.repeat(z, count, axis=0)
    net = model.G_avg if averaged else model.G
    out = net(np.hstack([np.repeat(affect[None], len(z), axis=0), z]))
    return out if standardized else model.standardizer.inverse(out)


def dictionary_z_sampler(dictionary, standardizer: Standardizer, top_k: int = 5):
    """z source drawing standardized shape vectors from the affect-shape dictionary."""
    from .dictionary import sample_z

    if len(standardizer.mean) != dictionary.d:
        raise ValueError("the standardizer and the dictionary disagree on the shape dimension")

    def draw(x, rng):
        return np.stack([standardizer.transform(sample_z(dictionary, xi, None, rng, top_k)) for xi in x])

    return draw


# --- checkpoint -----------------------------------------------------------

def _write_net(lines, tag, net: MlpNet):
    lines.append(f"{tag} {net.output} " + " ".join(str(s) for s in net.sizes))
    for k in range(net.n_layers):
        write_matrix(lines, net.params[f"W{k}"])
        lines.append(fmt_row(net.params[f"b{k}"]))


def _read_net(rd: LineReader, tag: str) -> MlpNet:
    head = rd.next().split()
    if len(head) < 5 or head[0] != tag:
        raise rd.error(f"expected '{tag} <output> <sizes...>'")
    try:
        sizes = [int(s) for s in head[2:]]
        net = MlpNet(sizes, head[1])
    except ValueError as exc:
        raise rd.error(str(exc)) from None
    for k in range(net.n_layers):
        net.params[f"W{k}"] = rd.matrix(sizes[k], sizes[k + 1])
        net.params[f"b{k}"] = rd.floats(sizes[k + 1])
    return net


def save_cgan(model: CGanModel, path) -> None:
    cfg = asdict(model.config)
    lines = ["CGAN v1", " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in cfg.items()),
             f"g_updates={model.g_updates} d_updates={model.d_updates}",
             fmt_row(model.standardizer.mean), fmt_row(model.standardizer.std)]
    _write_net(lines, "G", model.G)
    _write_net(lines, "A", model.G_avg)
    _write_net(lines, "D", model.D)
    write_text(path, lines)


def load_cgan(path) -> CGanModel:
    rd = LineReader(path)
    rd.expect("CGAN v1")
    raw = rd.keyvalues()
    defaults = asdict(CGanConfig())
    kwargs = {}
    try:
        for key, value in raw.items():
            kwargs[key] = type(defaults[key])(value)
    except (KeyError, ValueError):
        raise rd.error("bad configuration line") from None
    config = CGanConfig(**kwargs)
    counters = rd.keyvalues()
    mean = rd.floats(config.d)
    std = rd.floats(config.d)
    G = _read_net(rd, "G")
    G_avg = _read_net(rd, "A")
    D = _read_net(rd, "D")
    if G.sizes != G_avg.sizes or G.sizes[0] != N_AFFECT + config.z_dim or G.sizes[-1] != config.d \
            or D.sizes[0] != N_AFFECT + config.d:
        raise rd.error("network sizes do not match the configuration")
    model = CGanModel(config, G, D, Standardizer(mean, std), G_avg,
                      int(counters.get("g_updates", 0)), int(counters.get("d_updates", 0)))
    model.reset_optimizers()
    return model
