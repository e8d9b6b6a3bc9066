"""Trainable grid-filter network: forward pipeline, training objective,
training loop, inference, and the MLP source-count estimator.

The network maps a steering manifold A (M x R) and a snapshot block
X (M x T_train) to an R x M spatial filter B, whose output energy spectrum
P_i = mean_t |(B X)_{i,t}|^2 is squashed to per-grid probabilities
rho = tanh(P). Complex values travel as real planes throughout; the
imaginary block comes first in every concatenation and split.

Pipeline (fixed):
  1. A~ = [Im(A); Re(A)] (2M x R), X~ = [Im(X); Re(X)] (2M x T)
  2. A' = BiGRU over the R grid steps -> R x E; X' = BiGRU over the T time
     steps -> T x E (per-step input width 2M, E = 2 * enc_hidden)
  3. three two-layer heads (affine, relu, affine): A_v, A_k from A'
     (R x E) and X_q from X' (T x E)
  4. scores = X_q A_k^T / sqrt(R) (T x R), row-softmax, O = scores A_v
  5. filter BiGRU over the T steps of O, then an affine grid head per step
     -> B' (T x R)
  6. projection head on B'^T (R x T): affine(T -> proj_hidden), relu,
     affine(proj_hidden -> 2M); first M output columns are Im(B), last M
     are Re(B)
  7. P' = B X (R x T), P_i = mean_t(Re^2 + Im^2), rho = tanh(P)

Training minimizes the asymmetric selective loss (asl_loss) with Adam on
mini-batches; validation is micro-F1 of (rho >= 0.5) against the grid
indicator, with best-F1 early stopping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .arraymodel import AngleGrid
from .beamform import Peak, SpatialFilter, SpatialSpectrum, peak_search
from .complexlin import ComplexMatrix
from .errors import (
    PaddingError,
    ShapeError,
    TrainingError,
    ValidationError,
)
from .metrics import f1_from_counts, labels_to_indicator
from .rng import Stream, derive_seed
from .scenario import Scenario

ASL_GAMMA_POS = 1
ASL_GAMMA_NEG = 4
ASL_MARGIN = 0.05
_LOG_CLAMP = 1e-12

CONFIG_KEY = "__model_config__"


@dataclass(frozen=True)
class ModelConfig:
    """Widths of the network; fields left at None derive from e.

    grid_head_width is the per-step width consumed by the grid head, which
    the pipeline fixes at 2 * filt_hidden (both BiGRU directions).
    """

    m: int
    r: int
    t_train: int
    e: int
    enc_hidden: Optional[int] = None
    align_hidden: Optional[int] = None
    filt_hidden: Optional[int] = None
    proj_hidden: Optional[int] = None
    grid_head_width: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.r < 1 or self.t_train < 1:
            raise ValidationError("model config: m, r, t_train must be >= 1")
        if self.e < 2 or self.e % 2:
            raise ValidationError(f"model width e must be even and >= 2, got {self.e}")
        defaults = {
            "enc_hidden": self.e // 2,
            "align_hidden": self.e,
            "filt_hidden": 2 * self.e,
            "proj_hidden": self.e,
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
            elif getattr(self, name) < 1:
                raise ValidationError(f"model width {name} must be >= 1")
        if 2 * self.enc_hidden != self.e:
            raise ValidationError(
                "enc_hidden is fixed at e/2: the embedding width e is the "
                "two-direction encoder output"
            )
        if self.align_hidden != self.e:
            raise ValidationError(
                "align_hidden is fixed at e: the alignment heads map the "
                "e-wide embeddings through an e-wide hidden layer"
            )
        if self.proj_hidden != self.e:
            raise ValidationError(
                "proj_hidden is fixed at e: the projection head's hidden "
                "layer is e wide"
            )
        if self.grid_head_width is None:
            object.__setattr__(self, "grid_head_width", 2 * self.filt_hidden)
        elif self.grid_head_width != 2 * self.filt_hidden:
            raise ValidationError(
                "grid_head_width is fixed at 2 * filt_hidden by the pipeline"
            )

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown model config keys {sorted(unknown)}")
        return cls(**raw)


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    """Create all parameters in a fixed, documented order (also the
    checkpoint order): A-encoder, X-encoder, the three alignment heads,
    filter BiGRU, grid head, projection head."""
    stream = Stream(cfg.seed)
    params: dict[str, Tensor] = {}
    nn.init_bigru(params, "enc_a", stream, 2 * cfg.m, cfg.enc_hidden)
    nn.init_bigru(params, "enc_x", stream, 2 * cfg.m, cfg.enc_hidden)
    for head in ("head_av", "head_ak", "head_xq"):
        nn.init_affine(params, f"{head}.l1", stream, cfg.e, cfg.align_hidden)
        nn.init_affine(params, f"{head}.l2", stream, cfg.align_hidden, cfg.e)
    nn.init_bigru(params, "filt", stream, cfg.e, cfg.filt_hidden)
    nn.init_affine(params, "grid", stream, cfg.grid_head_width, cfg.r)
    nn.init_affine(params, "proj.l1", stream, cfg.t_train, cfg.proj_hidden)
    nn.init_affine(params, "proj.l2", stream, cfg.proj_hidden, 2 * cfg.m)
    return params


def param_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


def save_model(path, params: dict[str, Tensor], cfg: ModelConfig) -> None:
    if CONFIG_KEY in params:
        raise ValidationError(f"parameter name {CONFIG_KEY!r} is reserved")
    entries: dict = dict(params)
    entries[CONFIG_KEY] = cfg.to_json().encode("utf-8")
    nn.write_checkpoint(path, entries)


def load_model(path) -> tuple[dict[str, Tensor], ModelConfig]:
    stored = nn.read_checkpoint(path)
    blob = stored.pop(CONFIG_KEY, None)
    if blob is None:
        raise ValidationError("checkpoint has no embedded model config")
    cfg = ModelConfig.from_json(bytes(blob).decode("utf-8"))
    params = init_params(cfg)
    nn.load_into(params, stored)
    return params, cfg


# ---------------------------------------------------------------------------
# forward


def _two_layer(params: dict, prefix: str, x: Tensor) -> Tensor:
    return nn.affine(params, f"{prefix}.l2", ad.relu(nn.affine(params, f"{prefix}.l1", x)))


def _interleaved_steps(re: np.ndarray, im: np.ndarray, batch_rows: bool) -> list:
    """Column t of [im; re] as a step tensor; one row per sample."""
    stacked = np.concatenate([im, re], axis=0)  # (2M, T)
    if batch_rows:
        return stacked
    return [Tensor(stacked[:, t][None, :]) for t in range(stacked.shape[1])]


def encode_a_side(params: dict, cfg: ModelConfig, a: ComplexMatrix) -> tuple[Tensor, Tensor]:
    """Run the manifold branch: returns (A_v, A_k), each R x E.

    Under an active tape this participates in the gradient; with no tape it
    is a cheap reusable cache for repeated inference against a fixed grid.
    """
    if a.shape != (cfg.m, cfg.r):
        raise ShapeError(f"manifold is {a.shape}, config wants {(cfg.m, cfg.r)}")
    steps = _interleaved_steps(a.re, a.im, batch_rows=False)
    enc = nn.bigru_sequence(params, "enc_a", steps, cfg.enc_hidden)
    a_prime = ad.concat_rows(enc)  # (R, E)
    return _two_layer(params, "head_av", a_prime), _two_layer(params, "head_ak", a_prime)


def _forward_batch(
    params: dict,
    cfg: ModelConfig,
    x_planes: Sequence[tuple[np.ndarray, np.ndarray]],
    a_side: tuple[Tensor, Tensor],
) -> dict:
    """Shared forward over a batch of snapshot blocks (each (re, im), M x
    T_train). Returns the tensors of interest; runs under whatever tape is
    active (or none)."""
    a_v, a_k = a_side
    batch = len(x_planes)
    t_len = cfg.t_train

    # X branch, batched: step t is a (batch, 2M) tensor, time-major stacking.
    per_sample = [np.concatenate([im, re], axis=0) for re, im in x_planes]  # (2M, T)
    x_steps = [
        Tensor(np.stack([per_sample[b][:, t] for b in range(batch)], axis=0))
        for t in range(t_len)
    ]
    enc_x = nn.bigru_sequence(params, "enc_x", x_steps, cfg.enc_hidden)
    x_prime = ad.concat_rows(enc_x)  # (T*batch, E)
    x_q = _two_layer(params, "head_xq", x_prime)

    scores = ad.scalar_scale(ad.matmul(x_q, ad.transpose(a_k)), 1.0 / math.sqrt(cfg.r))
    attention = ad.softmax_rows(scores)  # (T*batch, R)
    aligned = ad.matmul(attention, a_v)  # (T*batch, E)

    filt_steps = [ad.slice_rows(aligned, t * batch, (t + 1) * batch) for t in range(t_len)]
    filt_out = nn.bigru_sequence(params, "filt", filt_steps, cfg.filt_hidden)
    grid_rows = [nn.affine(params, "grid", h) for h in filt_out]  # each (batch, R)
    b_prime = ad.concat_rows(grid_rows)  # (T*batch, R) time-major

    # (batch*R, T): row b*R + i carries grid i of sample b across time.
    b_prime_t = ad.fold_steps_to_cols(b_prime, t_len, batch)
    projected = _two_layer(params, "proj", b_prime_t)  # (batch*R, 2M)
    b_im_all = ad.slice_cols(projected, 0, cfg.m)
    b_re_all = ad.slice_cols(projected, cfg.m, 2 * cfg.m)

    rho_rows, p_rows, b_parts = [], [], []
    for b in range(batch):
        b_re = ad.slice_rows(b_re_all, b * cfg.r, (b + 1) * cfg.r)
        b_im = ad.slice_rows(b_im_all, b * cfg.r, (b + 1) * cfg.r)
        x_re = Tensor(x_planes[b][0])
        x_im = Tensor(x_planes[b][1])
        out_re = ad.sub(ad.matmul(b_re, x_re), ad.matmul(b_im, x_im))
        out_im = ad.add(ad.matmul(b_re, x_im), ad.matmul(b_im, x_re))
        p_b = ad.mean_axis(ad.add(ad.square(out_re), ad.square(out_im)), axis=1)
        rho_rows.append(ad.tanh(p_b))
        p_rows.append(p_b)
        b_parts.append((b_re, b_im))
    return {
        "rho": rho_rows,
        "p": p_rows,
        "b": b_parts,
        "attention": attention,
    }


@dataclass
class ForwardResult:
    filt: SpatialFilter
    spectrum: SpatialSpectrum
    attention: np.ndarray  # (T_train, R); rows sum to 1

    @property
    def rho(self) -> np.ndarray:
        return self.spectrum.rho


def _check_x(cfg: ModelConfig, x: ComplexMatrix) -> None:
    if x.rows != cfg.m:
        raise ShapeError(f"snapshot block has {x.rows} rows, config wants {cfg.m}")
    if x.cols != cfg.t_train:
        raise PaddingError(
            f"forward needs exactly {cfg.t_train} snapshots, got {x.cols}; "
            "pad or truncate first (see infer_doa)"
        )


def forward(
    params: dict,
    cfg: ModelConfig,
    a: ComplexMatrix,
    x: ComplexMatrix,
    grid: Optional[AngleGrid] = None,
    a_side: Optional[tuple[Tensor, Tensor]] = None,
) -> ForwardResult:
    """Single-sample forward pass. Pass a_side (from encode_a_side) to
    reuse the manifold branch across calls with fixed params."""
    _check_x(cfg, x)
    if a_side is None:
        a_side = encode_a_side(params, cfg, a)
    out = _forward_batch(params, cfg, [(x.re, x.im)], a_side)
    b_re, b_im = out["b"][0]
    filt = SpatialFilter(b=ComplexMatrix(b_re.data.copy(), b_im.data.copy()), method="beamformnet")
    spectrum = SpatialSpectrum(
        p=out["p"][0].data.copy(), rho=out["rho"][0].data.copy(), grid=grid
    )
    return ForwardResult(filt=filt, spectrum=spectrum, attention=out["attention"].data.copy())


# ---------------------------------------------------------------------------
# loss


def asl_loss(
    rho_hat: np.ndarray,
    labels: np.ndarray,
    gamma_pos: float = ASL_GAMMA_POS,
    gamma_neg: float = ASL_GAMMA_NEG,
    margin: float = ASL_MARGIN,
) -> float:
    """Asymmetric selective loss, summed over grid cells.

    label 1: -(1 - rho)^gamma_pos * log(rho)
    label 0: -(rho_m)^gamma_neg * log(1 - rho_m), rho_m = max(rho - margin, 0)
    Logs are clamped at 1e-12.
    """
    rho_hat = np.asarray(rho_hat, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if rho_hat.shape != labels.shape:
        raise ShapeError(f"rho {rho_hat.shape} and labels {labels.shape} differ")
    if np.any((rho_hat < 0) | (rho_hat >= 1)):
        raise ValidationError("rho values must lie in [0, 1)")
    if np.any((labels != 0) & (labels != 1)):
        raise ValidationError("labels must be binary")
    pos = -((1.0 - rho_hat) ** gamma_pos) * np.log(np.maximum(rho_hat, _LOG_CLAMP))
    rho_m = np.maximum(rho_hat - margin, 0.0)
    neg = -(rho_m**gamma_neg) * np.log(np.maximum(1.0 - rho_m, _LOG_CLAMP))
    return float(np.sum(labels * pos + (1.0 - labels) * neg))


def _asl_mean_tensor(rho: Tensor, labels: np.ndarray) -> Tensor:
    """Mean-over-batch ASL as a tape op graph; rho is (batch, R)."""
    batch = rho.shape[0]
    y = Tensor(labels)
    one = Tensor(np.ones_like(labels))
    not_y = Tensor(1.0 - labels)
    pos = ad.mul(ad.mul(ad.int_pow(ad.sub(one, rho), ASL_GAMMA_POS), ad.log(rho)), y)
    rho_m = ad.shifted_hinge(rho, ASL_MARGIN)
    neg = ad.mul(ad.mul(ad.int_pow(rho_m, ASL_GAMMA_NEG), ad.log(ad.sub(one, rho_m))), not_y)
    return ad.scalar_scale(ad.total(ad.add(pos, neg)), -1.0 / batch)


# ---------------------------------------------------------------------------
# training


def _scenario_planes(cfg: ModelConfig, samples: Sequence[Scenario], what: str):
    planes, indicators = [], []
    for i, s in enumerate(samples):
        if s.x.rows != cfg.m or s.x.cols != cfg.t_train:
            raise TrainingError(
                f"{what} sample {i} is {s.x.shape}, config wants {(cfg.m, cfg.t_train)}"
            )
        if np.any(s.grid_labels >= cfg.r):
            raise TrainingError(f"{what} sample {i} has grid labels outside 0..{cfg.r - 1}")
        planes.append((s.x.re, s.x.im))
        indicators.append(labels_to_indicator(s.grid_labels, cfg.r))
    return planes, np.array(indicators, dtype=np.float64)


def _batch_rho_matrix(out: dict) -> Tensor:
    return ad.concat_rows(out["rho"])


def predict_indicators(
    params: dict,
    cfg: ModelConfig,
    a: ComplexMatrix,
    samples: Sequence[Scenario],
    batch_size: int = 32,
    threshold: float = 0.5,
) -> np.ndarray:
    """(N, R) boolean matrix of rho >= threshold, computed without a tape."""
    planes, _ = _scenario_planes(cfg, samples, "eval")
    a_side = encode_a_side(params, cfg, a)
    rows = []
    for lo in range(0, len(planes), batch_size):
        out = _forward_batch(params, cfg, planes[lo : lo + batch_size], a_side)
        rows.extend(r.data >= threshold for r in out["rho"])
    return np.array(rows, dtype=bool)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_f1: float
    improved: bool


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_f1: float = float("nan")


def train(
    params: dict,
    cfg: ModelConfig,
    a: ComplexMatrix,
    train_set: Sequence[Scenario],
    val_set: Sequence[Scenario],
    epochs: int,
    batch_size: int = 32,
    lr: float = 1e-4,
    patience: int = 20,
    seed: int = 0,
    log=None,
) -> TrainResult:
    """Mini-batch Adam on the mean ASL per batch.

    Per epoch: a seeded shuffle (derive_seed(seed, epoch)), optimizer steps
    over consecutive batches, then validation micro-F1 at threshold 0.5.
    Early stopping tracks the best F1; training stops once the count of
    epochs since the last improvement reaches `patience` (so patience=0
    stops after the first epoch). The best-F1 parameter values are restored
    into `params` before returning.
    """
    if not train_set or not val_set:
        raise TrainingError("training needs non-empty train and validation sets")
    if epochs < 1 or batch_size < 1 or patience < 0:
        raise TrainingError("epochs >= 1, batch_size >= 1, patience >= 0 required")
    train_planes, train_y = _scenario_planes(cfg, train_set, "train")
    _scenario_planes(cfg, val_set, "val")
    val_truth = np.array(
        [labels_to_indicator(s.grid_labels, cfg.r) for s in val_set], dtype=bool
    )

    opt = nn.Adam(params, lr=lr)
    result = TrainResult(params=params)
    best_snapshot = {k: p.data.copy() for k, p in params.items()}
    best_f1 = -1.0
    stale = 0
    n = len(train_planes)

    for epoch in range(epochs):
        order = np.arange(n)
        shuffle = Stream(derive_seed(seed, epoch))
        for i in range(n - 1, 0, -1):
            j = shuffle.pick(i + 1)
            order[i], order[j] = order[j], order[i]

        losses = []
        for b_idx, lo in enumerate(range(0, n, batch_size)):
            idx = order[lo : lo + batch_size]
            ad.zero_grads(params)
            with ad.Tape() as tape:
                out = _forward_batch(
                    params, cfg, [train_planes[i] for i in idx],
                    encode_a_side(params, cfg, a),
                )
                loss = _asl_mean_tensor(_batch_rho_matrix(out), train_y[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {b_idx}"
                    )
                ad.backward(loss, tape)
            opt.step()
            losses.append(value)

        preds = predict_indicators(params, cfg, a, val_set, batch_size=batch_size)
        val_f1 = f1_from_counts(
            int(np.sum(preds & val_truth)),
            int(np.sum(preds & ~val_truth)),
            int(np.sum(~preds & val_truth)),
        )
        improved = val_f1 > best_f1
        if improved:
            best_f1 = val_f1
            best_snapshot = {k: p.data.copy() for k, p in params.items()}
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
        stats = EpochStats(
            epoch=epoch, train_loss=float(np.mean(losses)), val_f1=val_f1, improved=improved
        )
        result.history.append(stats)
        if log is not None:
            log(stats)
        if stale >= patience:
            break

    for k, p in params.items():
        p.data = best_snapshot[k]
        p.grad = None
    result.best_f1 = best_f1
    return result


# ---------------------------------------------------------------------------
# inference


def pad_snapshots(x: ComplexMatrix, t_train: int) -> ComplexMatrix:
    """Cyclic replication of snapshot columns up to t_train."""
    if x.cols == t_train:
        return x
    if x.cols > t_train:
        raise PaddingError(
            f"block has {x.cols} snapshots but the model was trained on "
            f"{t_train}; truncate the input or retrain with a larger window"
        )
    picks = np.arange(t_train) % x.cols
    return ComplexMatrix(x.re[:, picks], x.im[:, picks])


def infer_doa(
    params: dict,
    cfg: ModelConfig,
    a: ComplexMatrix,
    x: ComplexMatrix,
    grid: AngleGrid,
    threshold: float = 0.5,
    a_side: Optional[tuple[Tensor, Tensor]] = None,
) -> tuple[list[Peak], ForwardResult]:
    """Pad (cyclic replication), run the forward pass, and peak-search the
    tanh spectrum at the given threshold."""
    result = forward(params, cfg, a, pad_snapshots(x, cfg.t_train), grid=grid, a_side=a_side)
    return peak_search(result.spectrum, threshold), result


# ---------------------------------------------------------------------------
# source-count estimator


def init_estimator(r: int, k_max: int = 8, seed: int = 0) -> dict[str, Tensor]:
    """MLP R -> 256 -> 64 -> K_max (classes are K = 1..K_max)."""
    if r < 1 or k_max < 1:
        raise ValidationError("estimator needs r >= 1 and k_max >= 1")
    stream = Stream(seed)
    params: dict[str, Tensor] = {}
    nn.init_affine(params, "est.l1", stream, r, 256)
    nn.init_affine(params, "est.l2", stream, 256, 64)
    nn.init_affine(params, "est.l3", stream, 64, k_max)
    return params


def _estimator_logits(est_params: dict, p_rows: Tensor) -> Tensor:
    h = ad.relu(nn.affine(est_params, "est.l1", p_rows))
    h = ad.relu(nn.affine(est_params, "est.l2", h))
    return nn.affine(est_params, "est.l3", h)


def estimate_k(est_params: dict, spectrum) -> int:
    """Argmax class of the MLP on a spatial spectrum's P vector; ties take
    the lowest class (so an all-zero estimator answers K=1)."""
    p = spectrum.p if isinstance(spectrum, SpatialSpectrum) else np.asarray(spectrum)
    want = est_params["est.l1.w"].shape[0]
    if p.ndim != 1 or p.shape[0] != want:
        raise ShapeError(f"spectrum length {p.shape} does not match estimator ({want})")
    logits = _estimator_logits(est_params, Tensor(p[None, :]))
    return int(np.argmax(logits.data[0])) + 1


def train_estimator(
    est_params: dict,
    spectra: np.ndarray,
    k_true: np.ndarray,
    epochs: int = 40,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Softmax cross-entropy on (P, K) pairs; returns per-epoch mean loss."""
    spectra = np.asarray(spectra, dtype=np.float64)
    k_true = np.asarray(k_true, dtype=np.int64)
    k_max = est_params["est.l3.b"].shape[0]
    if spectra.ndim != 2 or spectra.shape[0] != k_true.shape[0]:
        raise ShapeError("spectra must be (N, R) with one K per row")
    if np.any((k_true < 1) | (k_true > k_max)):
        raise ValidationError(f"K values must lie in 1..{k_max}")
    one_hot = np.zeros((len(k_true), k_max))
    one_hot[np.arange(len(k_true)), k_true - 1] = 1.0

    opt = nn.Adam(est_params, lr=lr)
    history = []
    n = len(k_true)
    for epoch in range(epochs):
        order = np.arange(n)
        shuffle = Stream(derive_seed(seed, epoch))
        for i in range(n - 1, 0, -1):
            j = shuffle.pick(i + 1)
            order[i], order[j] = order[j], order[i]
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            ad.zero_grads(est_params)
            with ad.Tape() as tape:
                logits = _estimator_logits(est_params, Tensor(spectra[idx]))
                log_probs = ad.log(ad.softmax_rows(logits))
                picked = ad.mul(log_probs, Tensor(one_hot[idx]))
                loss = ad.scalar_scale(ad.total(picked), -1.0 / len(idx))
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite estimator loss at epoch {epoch}")
                ad.backward(loss, tape)
            opt.step()
            losses.append(value)
        history.append(float(np.mean(losses)))
    return history
