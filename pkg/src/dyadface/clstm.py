"""Conditional LSTM over shape-parameter sequences.

Each step sees ``[partner affect (8) || agent shape (d, standardized)]`` and
predicts the agent's standardized shape at the next frame. Training is
teacher-forced over windows of ``n`` frames with the recurrent state reset at
the start of every window.

Random streams: weights are drawn from ``default_rng([seed, 0])`` and the
window order from ``default_rng([seed, 1])``.
"""
from __future__ import annotations

import enum
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .corpus import N_AFFECT, DyadSequence, Standardizer, trailing_aggregate
from .optim import Adam, clip_global_norm
from .textio import LineReader, fmt_row, write_matrix, write_text

PARAM_NAMES = ("W", "U", "b", "V", "c")


class GenerationMode(enum.Enum):
    OVERLAP = "overlap"
    NONOVERLAP = "nonoverlap"


@dataclass
class CLstmConfig:
    d: int = 16
    hidden_dim: int = 64
    window: int = 100
    learning_rate: float = 1e-3
    grad_clip: float = 5.0
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    use_aggregate: bool = False
    aggregate_window: int = 100

    @property
    def input_dim(self) -> int:
        return N_AFFECT + self.d

    @property
    def output_dim(self) -> int:
        return self.d

    def validate(self) -> None:
        if min(self.d, self.hidden_dim, self.window, self.batch_size, self.aggregate_window) < 1:
            raise ValueError("all CLSTM dimensions and the window must be >= 1")
        if self.learning_rate < 0 or self.grad_clip < 0 or self.epochs < 0:
            raise ValueError("learning rate, clip and epochs must be non-negative")


@dataclass
class CLstmModel:
    config: CLstmConfig
    params: dict
    standardizer: Standardizer

    @classmethod
    def init(cls, config: CLstmConfig, standardizer: Standardizer | None = None) -> "CLstmModel":
        config.validate()
        rng = np.random.default_rng([config.seed, 0])
        hid, inp, out = config.hidden_dim, config.input_dim, config.output_dim
        lim = 1.0 / np.sqrt(hid)
        params = {
            "W": rng.uniform(-lim, lim, (4 * hid, inp)),
            "U": rng.uniform(-lim, lim, (4 * hid, hid)),
            "b": np.zeros(4 * hid),
            "V": rng.uniform(-lim, lim, (out, hid)),
            "c": np.zeros(out),
        }
        params["b"][hid:2 * hid] = 1.0
        if standardizer is None:
            standardizer = Standardizer(np.zeros(config.d), np.ones(config.d))
        return cls(config, params, standardizer)

    def copy(self) -> "CLstmModel":
        return CLstmModel(CLstmConfig(**asdict(self.config)),
                          {k: v.copy() for k, v in self.params.items()},
                          Standardizer(self.standardizer.mean.copy(), self.standardizer.std.copy()))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_batch(inputs):
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 2
    return (x[:, None, :] if single else x), single


def _run(params: dict, x: np.ndarray, h0, c0):
    steps, batch, _ = x.shape
    hid = params["U"].shape[1]
    hs = np.empty((steps + 1, batch, hid))
    cs = np.empty((steps + 1, batch, hid))
    acts = np.empty((steps, batch, 4 * hid))
    hs[0] = 0.0 if h0 is None else h0
    cs[0] = 0.0 if c0 is None else c0
    W, U, b = params["W"], params["U"], params["b"]
    pre_x = x @ W.T + b
    for t in range(steps):
        a = pre_x[t] + hs[t] @ U.T
        gates = acts[t]
        gates[:, :3 * hid] = _sigmoid(a[:, :3 * hid])
        gates[:, 3 * hid:] = np.tanh(a[:, 3 * hid:])
        i, f, o, g = (gates[:, k * hid:(k + 1) * hid] for k in range(4))
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
    y = hs[1:] @ params["V"].T + params["c"]
    return y, hs, cs, acts


def forward(model: CLstmModel, inputs, h0=None, c0=None):
    """Run the recurrence over ``inputs`` of shape (T, input_dim) or (T, B, input_dim).

    Returns ``(outputs, (h_T, c_T))`` with outputs shaped like the inputs'
    leading axes plus ``d``.
    """
    x, single = _as_batch(inputs)
    if x.shape[-1] != model.config.input_dim:
        raise ValueError(f"input dimension {x.shape[-1]} != {model.config.input_dim}")
    y, hs, cs, _ = _run(model.params, x, h0, c0)
    if single:
        return y[:, 0], (hs[-1, 0], cs[-1, 0])
    return y, (hs[-1], cs[-1])


def bptt_gradients(model: CLstmModel, inputs, targets, mask=None, reduction: str = "mean"):
    """Loss and exact gradients of the squared error by backpropagation through time.

    ``mask`` (T, B) weights individual steps. ``reduction='mean'`` averages
    over weighted steps and output dimensions, ``'sum'`` adds them up.
    Returns ``(loss, grads)`` with grads keyed like ``model.params``.
    """
    x, single = _as_batch(inputs)
    tgt = np.asarray(targets, dtype=np.float64)
    if single:
        tgt = tgt[:, None, :]
    if x.shape[-1] != model.config.input_dim or tgt.shape != x.shape[:2] + (model.config.output_dim,):
        raise ValueError("inputs and targets are not aligned with the model dimensions")
    steps, batch = x.shape[:2]
    w = np.ones((steps, batch)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(steps, batch)
    p = model.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    total_w = float(np.sum(w))
    if steps == 0 or total_w == 0.0:
        return 0.0, grads

    y, hs, cs, acts = _run(p, x, None, None)
    diff = (y - tgt) * w[:, :, None]
    denom = total_w * model.config.output_dim if reduction == "mean" else 1.0
    loss = float(np.sum(diff * (y - tgt)) / denom)
    if not np.isfinite(loss):
        raise FloatingPointError("CLSTM loss is not finite")
    dy = 2.0 * diff / denom

    hid = p["U"].shape[1]
    grads["V"] = np.einsum("tbo,tbh->oh", dy, hs[1:])
    grads["c"] = dy.sum(axis=(0, 1))
    dh_next = np.zeros((batch, hid))
    dc_next = np.zeros((batch, hid))
    das = np.empty((steps, batch, 4 * hid))
    V, U = p["V"], p["U"]
    for t in range(steps - 1, -1, -1):
        gates = acts[t]
        i, f, o, g = (gates[:, k * hid:(k + 1) * hid] for k in range(4))
        dh = dy[t] @ V + dh_next
        tc = np.tanh(cs[t + 1])
        dct = dh * o * (1.0 - tc * tc) + dc_next
        da = das[t]
        da[:, :hid] = dct * g * i * (1.0 - i)
        da[:, hid:2 * hid] = dct * cs[t] * f * (1.0 - f)
        da[:, 2 * hid:3 * hid] = dh * tc * o * (1.0 - o)
        da[:, 3 * hid:] = dct * i * (1.0 - g * g)
        dc_next = dct * f
        dh_next = da @ U
    grads["W"] = np.einsum("tba,tbi->ai", das, x)
    grads["U"] = np.einsum("tba,tbh->ah", das, hs[:-1])
    grads["b"] = das.sum(axis=(0, 1))
    return loss, grads


# --- data -----------------------------------------------------------------

def _affect_track(affect: np.ndarray, config: CLstmConfig) -> np.ndarray:
    if config.use_aggregate:
        return trailing_aggregate(affect, config.aggregate_window)
    return affect


def make_windows(sequences: list[DyadSequence], model: CLstmModel):
    """Teacher-forcing windows: inputs (N, n, 8 + d) and next-frame targets (N, n, d)."""
    n = model.config.window
    xs, ys = [], []
    for seq in sequences:
        if len(seq) < n + 1:
            continue
        aff = _affect_track(seq.affect, model.config)
        std = model.standardizer.transform(seq.shapes)
        feats = np.hstack([aff, std])
        for start in range(0, len(seq) - n, n):
            xs.append(feats[start:start + n])
            ys.append(std[start + 1:start + n + 1])
    if not xs:
        raise ValueError(f"no sequence is long enough for one window of {n} + 1 frames")
    return np.stack(xs), np.stack(ys)


@dataclass
class TrainReport:
    initial_loss: float
    epoch_losses: list = field(default_factory=list)
    n_windows: int = 0
    seconds: float = 0.0


def _dataset_loss(model: CLstmModel, xs, ys, batch: int = 256) -> float:
    total, count = 0.0, 0
    for s in range(0, len(xs), batch):
        y, *_ = _run(model.params, xs[s:s + batch].transpose(1, 0, 2), None, None)
        err = y - ys[s:s + batch].transpose(1, 0, 2)
        total += float(np.sum(err * err))
        count += err.size
    return total / count


def train(model: CLstmModel, sequences: list[DyadSequence], config: CLstmConfig | None = None,
          fit_standardizer: bool = True, log=None):
    """Teacher-forced Adam training; returns ``(model, TrainReport)``.

    The model is updated in place. When ``fit_standardizer`` is set the
    shape standardization is refit on ``sequences`` first.
    """
    config = config or model.config
    config.validate()
    start = time.perf_counter()
    if fit_standardizer:
        model.standardizer = Standardizer.fit(np.vstack([s.shapes for s in sequences]))
    xs, ys = make_windows(sequences, model)
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(model.params, lr=config.learning_rate)
    report = TrainReport(_dataset_loss(model, xs, ys), n_windows=len(xs))
    for epoch in range(config.epochs):
        order = rng.permutation(len(xs))
        losses, weights = [], []
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = bptt_gradients(model, xs[idx].transpose(1, 0, 2), ys[idx].transpose(1, 0, 2))
            clip_global_norm(grads, config.grad_clip)
            opt.step(model.params, grads)
            losses.append(loss)
            weights.append(len(idx))
        report.epoch_losses.append(float(np.average(losses, weights=weights)))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss {report.epoch_losses[-1]:.6f}")
    report.seconds = time.perf_counter() - start
    return model, report


# --- generation -----------------------------------------------------------

def _last_output(params, x):
    y, hs, cs, _ = _run(params, x, None, None)
    return y[-1], hs[-1], cs[-1]


def generate_standardized(model: CLstmModel, hist_affect, hist_std, stream_affect, steps: int,
                          mode: GenerationMode | str):
    """Batched generation in standardized units.

    ``hist_affect`` (n, B, 8), ``hist_std`` (n, B, d), ``stream_affect``
    (>= steps, B, 8) are the model-facing affect tracks. Returns (steps, B, d).
    """
    mode = GenerationMode(mode)
    n = model.config.window
    if hist_affect.shape[0] != n or hist_std.shape[0] != n:
        raise ValueError(f"history must contain exactly n = {n} frames")
    batch = hist_std.shape[1]
    out = np.empty((steps, batch, model.config.d))
    p = model.params
    window = np.concatenate([hist_affect, hist_std], axis=2)
    if mode is GenerationMode.OVERLAP:
        for k in range(steps):
            y, _, _ = _last_output(p, window)
            out[k] = y
            frame = np.concatenate([stream_affect[k], y], axis=1)
            window = np.concatenate([window[1:], frame[None]], axis=0)
        return out

    k = 0
    while k < steps:
        y, h, c = _last_output(p, window)
        block_end = min(k + n, steps)
        out[k] = y
        for j in range(k + 1, block_end):
            inp = np.concatenate([stream_affect[j - 1], out[j - 1]], axis=1)
            y, (h, c) = _step(p, inp, h, c)
            out[j] = y
        if block_end - k == n:
            window = np.concatenate([stream_affect[k:block_end], out[k:block_end]], axis=2)
        k = block_end
    return out


def _step(params, inp, h, c):
    y, hs, cs, _ = _run(params, inp[None], h, c)
    return y[0], (hs[-1], cs[-1])


def generate(model: CLstmModel, history: DyadSequence, affect_stream, steps: int,
             mode: GenerationMode | str = GenerationMode.OVERLAP) -> np.ndarray:
    """Generate ``steps`` raw shape vectors following ``history``.

    ``affect_stream[k]`` is the partner affect at generated frame ``k``.
    """
    n = model.config.window
    if len(history) != n:
        raise ValueError(f"history has {len(history)} frames, the model needs n = {n}")
    stream = np.asarray(affect_stream, dtype=np.float64).reshape(-1, N_AFFECT)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return np.zeros((0, model.config.d))
    if len(stream) < steps:
        raise ValueError("affect stream is shorter than the requested number of steps")
    track = _affect_track(np.vstack([history.affect, stream[:steps]]), model.config)
    std = model.standardizer.transform(history.shapes)
    out = generate_standardized(model, track[:n, None], std[:, None], track[n:, None], steps, mode)
    return model.standardizer.inverse(out[:, 0])


# --- checkpoint -----------------------------------------------------------

def save_clstm(model: CLstmModel, path) -> None:
    cfg = asdict(model.config)
    cfg["use_aggregate"] = int(cfg["use_aggregate"])
    lines = ["CLSTM v1", " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in cfg.items())]
    lines.append(fmt_row(model.standardizer.mean))
    lines.append(fmt_row(model.standardizer.std))
    for name in PARAM_NAMES:
        arr = np.atleast_2d(model.params[name])
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        write_matrix(lines, arr)
    write_text(path, lines)


def load_clstm(path) -> CLstmModel:
    rd = LineReader(path)
    rd.expect("CLSTM v1")
    raw = rd.keyvalues()
    types = {f.name: f.type for f in fields(CLstmConfig)}
    kwargs = {}
    try:
        for key, value in raw.items():
            if key not in types:
                raise ValueError(key)
            kind = types[key]
            if kind in ("int", int):
                kwargs[key] = int(value)
            elif kind in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = bool(int(value))
    except ValueError:
        raise rd.error("bad configuration line") from None
    config = CLstmConfig(**kwargs)
    mean = rd.floats(config.d)
    std = rd.floats(config.d)
    params = {}
    for name in PARAM_NAMES:
        head = rd.next().split()
        if len(head) != 3 or head[0] != name:
            raise rd.error(f"expected '{name} <rows> <cols>'")
        params[name] = rd.matrix(int(head[1]), int(head[2]))
    params["b"] = params["b"].reshape(-1)
    params["c"] = params["c"].reshape(-1)
    model = CLstmModel(config, params, Standardizer(mean, std))
    expected = CLstmModel.init(CLstmConfig(**asdict(config))).params
    for name in PARAM_NAMES:
        if params[name].shape != expected[name].shape:
            raise rd.error(f"parameter {name} has shape {params[name].shape}, expected {expected[name].shape}")
    return model
