"""CTC line recognizer: forward pass, exact backprop, CTC loss, greedy
confidence decoding and the Adam/EMA optimizer step."""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from utils import layers
from utils.config import TrainingSettings
from utils.errors import CtcInfeasibleError, InputError, OracleSizeError, ShapeError
from utils.model import BLANK, TrainMeta
from utils.netspec import Conv, Lstm, Pool

logger = logging.getLogger(__name__)

BRUTEFORCE_LIMIT = 10 ** 6


@dataclass(frozen=True)
class Prediction:
    chars: str = ""
    confidences: tuple = ()
    positions: tuple = ()
    line_ref: str = ""

    def __post_init__(self):
        if not len(self.chars) == len(self.confidences) == len(self.positions):
            raise InputError("prediction chars, confidences and positions must have equal length")

    def to_record(self):
        return {
            "line_id": self.line_ref,
            "chars": self.chars,
            "confidences": [float(c) for c in self.confidences],
            "positions": [int(p) for p in self.positions],
        }

    @classmethod
    def from_record(cls, record):
        return cls(
            chars=record.get("chars", ""),
            confidences=tuple(record.get("confidences", ())),
            positions=tuple(record.get("positions", ())),
            line_ref=record.get("line_id", ""),
        )


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: int = 0


def init_optimizer(params):
    return AdamState(
        step=0,
        m={name: np.zeros_like(t) for name, t in params.tensors.items()},
        v={name: np.zeros_like(t) for name, t in params.tensors.items()},
    )


def _network_input(params, img):
    if img.height != params.input_height:
        raise ShapeError(f"line height {img.height} does not match model input height {params.input_height}")
    return (1.0 - img.pixels.astype(params.dtype))[None, :, :]


def output_length(params, width):
    """T = floor(width / product of pool widths)"""
    return width // params.spec.pool_width


def _forward(params, img, train_mode, rng):
    tensors = params.tensors
    spec = params.spec
    x = _network_input(params, img)
    classes = params.codec.size + 1
    if output_length(params, img.width) == 0:
        return np.zeros((0, classes), dtype=params.dtype), None

    caches = []
    conv_index = lstm_index = 0
    rate = spec.dropout_rate if train_mode else 0.0
    seq = None
    for layer in spec.layers:
        if isinstance(layer, Conv):
            x, conv_cache = layers.conv2d_forward(
                x, tensors[f"conv{conv_index}.weight"], tensors[f"conv{conv_index}.bias"]
            )
            x, relu_mask = layers.relu_forward(x)
            caches.append(("conv", conv_index, conv_cache, relu_mask))
            conv_index += 1
        elif isinstance(layer, Pool):
            x, pool_cache = layers.maxpool_forward(x, layer.ph, layer.pw)
            caches.append(("pool", pool_cache))
        elif isinstance(layer, Lstm):
            if seq is None:
                seq, flat_shape = _to_sequence(x)
                caches.append(("flatten", flat_shape))
            prefix = f"lstm{lstm_index}"
            seq, lstm_cache = layers.bilstm_forward(
                seq,
                tuple(tensors[f"{prefix}.fw.{k}"] for k in "WUb"),
                tuple(tensors[f"{prefix}.bw.{k}"] for k in "WUb"),
            )
            caches.append(("lstm", lstm_index, lstm_cache))
            seq, mask = layers.dropout_forward(seq, rate, rng)
            caches.append(("dropout", mask))
            lstm_index += 1

    if seq is None:
        seq, flat_shape = _to_sequence(x)
        caches.append(("flatten", flat_shape))
        seq, mask = layers.dropout_forward(seq, rate, rng)
        caches.append(("dropout", mask))

    logits = seq @ tensors["proj.weight"].T + tensors["proj.bias"]
    caches.append(("proj", seq))
    return logits, caches


def _to_sequence(feature_map):
    channels, height, width = feature_map.shape
    return feature_map.transpose(2, 0, 1).reshape(width, channels * height), feature_map.shape


def _from_sequence(dseq, shape):
    channels, height, width = shape
    return dseq.reshape(width, channels, height).transpose(1, 2, 0)


def _backward(params, dlogits, caches):
    tensors = params.tensors
    grads = {}
    dx = None
    for entry in reversed(caches):
        kind = entry[0]
        if kind == "proj":
            seq = entry[1]
            grads["proj.weight"] = dlogits.T @ seq
            grads["proj.bias"] = dlogits.sum(axis=0)
            dx = dlogits @ tensors["proj.weight"]
        elif kind == "dropout":
            dx = layers.dropout_backward(dx, entry[1])
        elif kind == "lstm":
            _, index, cache = entry
            dx, fw, bw = layers.bilstm_backward(dx, cache)
            for direction, parts in (("fw", fw), ("bw", bw)):
                for key, grad in zip("WUb", parts):
                    grads[f"lstm{index}.{direction}.{key}"] = grad
        elif kind == "flatten":
            dx = _from_sequence(dx, entry[1])
        elif kind == "pool":
            dx = layers.maxpool_backward(dx, entry[1])
        elif kind == "conv":
            _, index, cache, relu_mask = entry
            dx = layers.relu_backward(dx, relu_mask)
            dx, dweight, dbias = layers.conv2d_backward(dx, cache)
            grads[f"conv{index}.weight"] = dweight
            grads[f"conv{index}.bias"] = dbias
    return grads


def forward(params, img, train_mode=False, rng=None):
    """
    Run the network on one line

    Parameters:
    params: ModelParams (pass params.inference_view() to use EMA weights)
    img: LineImage whose height equals params.input_height
    train_mode: Apply dropout (requires rng)
    rng: numpy Generator for dropout masks

    Returns:
    np.ndarray: T x (codec size + 1) logit matrix, time-major
    """
    logits, _ = _forward(params, img, train_mode, rng)
    return logits


def ctc_min_length(label):
    """Minimum frames needed to emit a label: one per symbol plus one blank per repeat"""
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _extend(label):
    extended = [BLANK]
    for symbol in label:
        extended.extend([symbol, BLANK])
    return np.asarray(extended, dtype=np.int64)


def ctc_loss(logits, label):
    """
    Negative log-likelihood of a label under CTC, with its exact gradient

    Forward-backward recursion in log space over the blank-extended label.

    Parameters:
    logits: T x K matrix (K includes the blank at index 0)
    label: Sequence of indices >= 1

    Returns:
    tuple: (loss, grad) with grad of shape T x K
    """
    logits = np.asarray(logits)
    steps, classes = logits.shape
    label = list(label)
    if any(symbol < 1 or symbol >= classes for symbol in label):
        raise InputError(f"label indices must lie in [1, {classes - 1}]")
    if steps == 0 or steps < ctc_min_length(label):
        raise CtcInfeasibleError(
            f"{steps} frames cannot emit a label that needs {ctc_min_length(label)}"
        )

    log_probs = layers.log_softmax(logits.astype(np.float64))
    extended = _extend(label)
    states = len(extended)
    skip = np.zeros(states, dtype=bool)
    skip[2:] = (extended[2:] != BLANK) & (extended[2:] != extended[:-2])
    emit = log_probs[:, extended]

    log_alpha = np.full((steps, states), -np.inf)
    log_alpha[0, 0] = emit[0, 0]
    if states > 1:
        log_alpha[0, 1] = emit[0, 1]
    for t in range(1, steps):
        prev = log_alpha[t - 1]
        stay = prev
        step = np.concatenate([[-np.inf], prev[:-1]])
        jump = np.where(skip, np.concatenate([[-np.inf, -np.inf], prev[:-2]])[:states], -np.inf)
        log_alpha[t] = np.logaddexp(np.logaddexp(stay, step), jump) + emit[t]

    log_beta = np.full((steps, states), -np.inf)
    log_beta[-1, -1] = 0.0
    if states > 1:
        log_beta[-1, -2] = 0.0
    skip_from = np.zeros(states, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(steps - 2, -1, -1):
        nxt = log_beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate([nxt[1:], [-np.inf]])
        jump = np.where(skip_from, np.concatenate([nxt[2:], [-np.inf, -np.inf]])[:states], -np.inf)
        log_beta[t] = np.logaddexp(np.logaddexp(stay, step), jump)

    final = [log_alpha[-1, -1]] + ([log_alpha[-1, -2]] if states > 1 else [])
    log_likelihood = np.logaddexp.reduce(final)
    if not np.isfinite(log_likelihood):
        raise CtcInfeasibleError("label has zero probability under the given logits")

    occupancy = np.exp(log_alpha + log_beta - log_likelihood)
    posterior = np.zeros((steps, classes))
    for s in range(states):
        posterior[:, extended[s]] += occupancy[:, s]
    grad = np.exp(log_probs) - posterior
    return float(-log_likelihood), grad.astype(logits.dtype)


def collapse(path):
    """Merge repeats, then drop blanks"""
    return [symbol for symbol, _ in itertools.groupby(path) if symbol != BLANK]


def ctc_loss_bruteforce(probs, label):
    """
    Reference CTC loss by enumerating every frame path

    Parameters:
    probs: T x K probability matrix
    label: Target index sequence

    Returns:
    float: -log of the summed probability of all paths collapsing to label
    """
    probs = np.asarray(probs, dtype=np.float64)
    steps, classes = probs.shape
    if classes ** steps > BRUTEFORCE_LIMIT:
        raise OracleSizeError(f"{classes}^{steps} paths exceed the enumeration limit {BRUTEFORCE_LIMIT}")
    target = list(label)
    total = 0.0
    for path in itertools.product(range(classes), repeat=steps):
        if collapse(path) == target:
            total += math.prod(probs[t, k] for t, k in enumerate(path))
    return -math.log(total) if total > 0 else math.inf


def greedy_decode(logits, codec, line_ref=""):
    """
    Best-path decoding with per-character confidences

    Confidence of an emitted character is the mean softmax probability of that
    character over its contiguous argmax run; its position is the run's first frame.
    """
    logits = np.asarray(logits)
    if logits.shape[0] == 0:
        return Prediction(line_ref=line_ref)
    probs = layers.softmax(logits.astype(np.float64))
    best = probs.argmax(axis=1)
    chars, confidences, positions = [], [], []
    start = 0
    for symbol, run in itertools.groupby(best):
        length = len(list(run))
        if symbol != BLANK:
            chars.append(codec.chars[symbol - 1])
            confidences.append(float(probs[start:start + length, symbol].mean()))
            positions.append(start)
        start += length
    return Prediction("".join(chars), tuple(confidences), tuple(positions), line_ref)


def recognize_lines(params, images, use_ema=True):
    """Decode a list of LineImages with the EMA (default) or raw weights"""
    model = params.inference_view() if use_ema else params
    return [
        greedy_decode(forward(model, img), params.codec, "/".join(str(p) for p in img.source_id))
        for img in images
    ]


def loss_and_grads(params, img, label, train_mode=False, rng=None):
    """
    CTC loss of one line and the gradient of every tensor

    Returns:
    tuple: (loss, {tensor name: gradient})
    """
    logits, caches = _forward(params, img, train_mode, rng)
    loss, dlogits = ctc_loss(logits, label)
    return loss, _backward(params, dlogits.astype(params.dtype), caches)


def train_step(params, batch, opt_state, rng, settings=None):
    """
    One Adam step on the mean CTC loss of a batch

    Weight decay is decoupled (applied to the weights directly) and the EMA
    shadow follows every update. Infeasible samples are skipped and counted in
    opt_state.skipped.

    Parameters:
    params: Current ModelParams (not modified)
    batch: Non-empty list of (LineImage, label index list)
    opt_state: AdamState from init_optimizer or a previous step (not modified)
    rng: numpy Generator for dropout
    settings: TrainingSettings (defaults when omitted)

    Returns:
    tuple: (new params, new opt_state, mean loss over feasible samples)
    """
    if not batch:
        raise InputError("train_step needs a non-empty batch")
    settings = settings or TrainingSettings()

    total = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    losses = []
    skipped = 0
    for img, label in batch:
        try:
            loss, grads = loss_and_grads(params, img, label, train_mode=True, rng=rng)
        except CtcInfeasibleError as e:
            skipped += 1
            logger.warning(f"Skipping infeasible sample {img.source_id}: {e}")
            continue
        losses.append(loss)
        for name, grad in grads.items():
            total[name] += grad

    meta = TrainMeta(params.train_meta.samples_seen + len(batch), params.train_meta.epochs)
    if not losses:
        state = AdamState(opt_state.step, opt_state.m, opt_state.v, opt_state.skipped + skipped)
        return params.with_tensors(params.tensors, train_meta=meta), state, float("nan")

    lr = settings.learning_rate
    beta1, beta2 = settings.beta1, settings.beta2
    step = opt_state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    tensors, ema, m_new, v_new = {}, {}, {}, {}
    for name, theta in params.tensors.items():
        grad = total[name] / len(losses)
        m = beta1 * opt_state.m[name] + (1.0 - beta1) * grad
        v = beta2 * opt_state.v[name] + (1.0 - beta2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + settings.epsilon)
        new = theta - lr * update - lr * settings.weight_decay * theta
        tensors[name] = new.astype(theta.dtype)
        ema[name] = (settings.ema_decay * params.ema_tensors[name] + (1.0 - settings.ema_decay) * new).astype(
            theta.dtype
        )
        m_new[name] = m.astype(theta.dtype)
        v_new[name] = v.astype(theta.dtype)

    state = AdamState(step, m_new, v_new, opt_state.skipped + skipped)
    return params.with_tensors(tensors, ema, meta), state, float(np.mean(losses))
