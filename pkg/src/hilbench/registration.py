"""Coordinate-registration pipeline for an external localization reference.

Two asynchronous pose streams are fused by causal linear extrapolation of the
high-rate stream onto the low-rate timestamps, smoothed with a Savitzky-Golay
filter, and used to fit a hierarchy of mappings from the tracker frame to the
reference frame:

    raw (identity)  ->  rigid SVD  ->  global affine  ->  affine + MLP residual

The hybrid model is  f(p) = A p + t + g(normalize(p); theta)  where g is a
small tanh network trained on the affine residuals.  A synthetic distortion
field (true affine plus smooth radial bumps plus sensor noise) provides
ground truth for benchmarking the ladder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import rng_stream
from .spatial import MetricSummary, summarize


@dataclass(frozen=True)
class PoseStream:
    """Strictly time-sorted positions of one sensor."""

    t_ns: np.ndarray
    p: np.ndarray  # (N, d)

    def __post_init__(self):
        if self.t_ns.ndim != 1 or self.p.ndim != 2 or self.t_ns.size != self.p.shape[0]:
            raise ValueError("stream arrays must be (N,) and (N, d)")
        if self.t_ns.size >= 2 and not np.all(np.diff(self.t_ns) > 0):
            raise ValueError("stream timestamps must be strictly increasing")

    @property
    def d(self) -> int:
        return int(self.p.shape[1])

    def __len__(self) -> int:
        return int(self.t_ns.size)


@dataclass(frozen=True)
class MatchedPairs:
    """Synchronized coordinate pairs (tracker frame vs reference frame)."""

    t_ns: np.ndarray
    p_tracker: np.ndarray  # (N, d)
    p_reference: np.ndarray  # (N, d)

    def __len__(self) -> int:
        return int(self.t_ns.size)

    @property
    def d(self) -> int:
        return int(self.p_tracker.shape[1])

    def save_csv(self, path) -> None:
        d = self.d
        cols = ["t_ns"] + [f"pT{ax}" for ax in "xyz"[:d]] + [f"pL{ax}" for ax in "xyz"[:d]]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self)):
                row = [str(int(self.t_ns[i]))]
                row += [repr(float(v)) for v in self.p_tracker[i]]
                row += [repr(float(v)) for v in self.p_reference[i]]
                fh.write(",".join(row) + "\n")

    @staticmethod
    def load_csv(path) -> "MatchedPairs":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            d = (len(header) - 1) // 2
            t, pt, pl = [], [], []
            for line in fh:
                parts = line.strip().split(",")
                if not parts or parts == [""]:
                    continue
                t.append(int(parts[0]))
                pt.append([float(v) for v in parts[1:1 + d]])
                pl.append([float(v) for v in parts[1 + d:1 + 2 * d]])
        return MatchedPairs(np.array(t, dtype=np.int64), np.array(pt), np.array(pl))


def fuse_streams(high: PoseStream, low: PoseStream, max_gap_s: float) -> MatchedPairs:
    """Causally pair the streams at the low-rate timestamps.

    For each low-rate time, the two most recent high-rate samples at or
    before it are linearly extrapolated forward.  Pairs are rejected when
    fewer than two such samples exist or the newest is older than
    ``max_gap_s``.
    """
    if len(high) == 0 or len(low) == 0:
        return MatchedPairs(np.empty(0, dtype=np.int64),
                            np.empty((0, low.d if len(low) else 2)),
                            np.empty((0, low.d if len(low) else 2)))
    max_gap_ns = round(max_gap_s * 1e9)
    t_out, pt_out, pl_out = [], [], []
    idx = np.searchsorted(high.t_ns, low.t_ns, side="right") - 1
    for k, i in enumerate(idx):
        if i < 1:
            continue
        tau = int(low.t_ns[k])
        t1, t0 = int(high.t_ns[i]), int(high.t_ns[i - 1])
        if tau - t1 > max_gap_ns:
            continue
        frac = (tau - t1) / (t1 - t0)
        p = high.p[i] + frac * (high.p[i] - high.p[i - 1])
        t_out.append(tau)
        pt_out.append(p)
        pl_out.append(low.p[k])
    if not t_out:
        return MatchedPairs(np.empty(0, dtype=np.int64),
                            np.empty((0, high.d)), np.empty((0, low.d)))
    return MatchedPairs(np.array(t_out, dtype=np.int64), np.vstack(pt_out), np.vstack(pl_out))


def _sg_center_coeffs(window: int, order: int) -> np.ndarray:
    # Center row of the SG projection: fit a degree-`order` polynomial to the
    # window and evaluate it at the middle sample.
    half = (window - 1) // 2
    x = np.arange(-half, half + 1, dtype=float)
    vand = np.vander(x, order + 1, increasing=True)
    pinv = np.linalg.pinv(vand)
    return vand[half] @ pinv


def sg_smooth(stream: PoseStream, window: int, order: int) -> PoseStream:
    """Savitzky-Golay smoothing per dimension.

    Near the ends the window shrinks to the largest centered odd window that
    fits, with the polynomial order capped at window-1 (so the first and last
    samples pass through unchanged).
    """
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if order >= window:
        raise ValueError("order must be less than window")
    n = len(stream)
    if n >= 3:
        periods = np.diff(stream.t_ns).astype(float)
        med = float(np.median(periods))
        if np.max(np.abs(periods - med)) > 0.01 * med:
            raise ValueError("stream must be uniform-rate within 1% period jitter")
    out = stream.p.copy()
    half_max = (window - 1) // 2
    coeff_cache: dict[tuple[int, int], np.ndarray] = {}
    for i in range(n):
        half = min(i, n - 1 - i, half_max)
        if half == 0:
            continue
        w = 2 * half + 1
        o = min(order, w - 1)
        key = (w, o)
        if key not in coeff_cache:
            coeff_cache[key] = _sg_center_coeffs(w, o)
        out[i] = coeff_cache[key] @ stream.p[i - half:i + half + 1]
    return PoseStream(stream.t_ns.copy(), out)


class DegenerateGeometryError(ValueError):
    pass


def fit_rigid_svd(pairs: MatchedPairs, train_idx) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform (rotation + translation, det(R) = +1)."""
    idx = np.asarray(train_idx, dtype=int)
    d = pairs.d
    if idx.size < d + 1:
        raise DegenerateGeometryError(f"need at least {d + 1} pairs")
    src = pairs.p_tracker[idx]
    dst = pairs.p_reference[idx]
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[-1] / s[0] < 1e-12:
        raise DegenerateGeometryError("point configuration is degenerate")
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.ones(d)
    corr[-1] = sign
    r = vt.T @ np.diag(corr) @ u.T
    t = c_dst - r @ c_src
    return r, t


def fit_affine(pairs: MatchedPairs, train_idx) -> tuple[np.ndarray, np.ndarray]:
    """Ordinary least squares affine map on homogeneous coordinates."""
    idx = np.asarray(train_idx, dtype=int)
    d = pairs.d
    if idx.size < d + 1:
        raise DegenerateGeometryError(f"need at least {d + 1} pairs")
    src = pairs.p_tracker[idx]
    dst = pairs.p_reference[idx]
    design = np.hstack([src, np.ones((idx.size, 1))])
    if np.linalg.matrix_rank(design) < d + 1:
        raise DegenerateGeometryError("design matrix is rank deficient")
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return sol[:d].T.copy(), sol[d].copy()


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension affine input scaling (zero mean, unit variance)."""

    mean: np.ndarray
    scale: np.ndarray

    @staticmethod
    def fit(x: np.ndarray) -> "Normalizer":
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        return Normalizer(mean, scale)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


class ResidualMlp:
    """Small tanh network mapping normalized inputs to residual corrections."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None) -> None:
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if rng is None:
                w = np.zeros((n_in, n_out))
            else:
                limit = math.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-limit, limit, size=(n_in, n_out))
                if i == len(sizes) - 2:
                    w *= 0.1  # start the correction head near zero output
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
        return h @ self.weights[-1] + self.biases[-1]

    def forward_with_cache(self, x):
        activations = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
            activations.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, activations

    def gradients(self, x, err):
        """Backprop of mean-squared-error gradient ``err`` (dL/dout)."""
        out, acts = self.forward_with_cache(x)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = err
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = acts[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (1.0 - acts[layer] ** 2)
        return grads_w, grads_b

    def params_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_params_flat(self, theta: np.ndarray) -> None:
        pos = 0
        for arr_list in (self.weights, self.biases):
            for i, a in enumerate(arr_list):
                arr_list[i] = theta[pos:pos + a.size].reshape(a.shape).copy()
                pos += a.size
        if pos != theta.size:
            raise ValueError("parameter vector size mismatch")


@dataclass(frozen=True)
class MlpHyper:
    epochs: int = 2000
    batch: int = 256
    step: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 50


class TrainingDivergedError(RuntimeError):
    pass


def fit_residual_mlp(pairs: MatchedPairs, train_idx, affine: tuple[np.ndarray, np.ndarray],
                     hyper: MlpHyper, normalizer: Normalizer | None = None,
                     hidden: tuple[int, int] = (64, 64)) -> tuple[ResidualMlp, Normalizer]:
    """Train the residual network on the affine fit's training residuals.

    Mini-batch Adam with early stopping on a held-out validation fraction of
    the training set; returns the best-validation parameters.  Fully
    deterministic under ``hyper.seed``.
    """
    a_mat, t_vec = affine
    idx = np.asarray(train_idx, dtype=int)
    rng = rng_stream(hyper.seed, "reg.mlp")

    x_all = pairs.p_tracker[idx]
    resid = pairs.p_reference[idx] - (x_all @ a_mat.T + t_vec)
    if normalizer is None:
        normalizer = Normalizer.fit(x_all)
    xn = normalizer(x_all)

    n = idx.size
    order = rng.permutation(n)
    n_val = max(int(round(hyper.val_fraction * n)), 1) if hyper.val_fraction > 0 else 0
    val_sel = order[:n_val]
    tr_sel = order[n_val:]
    x_tr, y_tr = xn[tr_sel], resid[tr_sel]
    x_val, y_val = xn[val_sel], resid[val_sel]

    d = pairs.d
    mlp = ResidualMlp([d, *hidden, d], rng=rng)

    m_w = [np.zeros_like(w) for w in mlp.weights]
    v_w = [np.zeros_like(w) for w in mlp.weights]
    m_b = [np.zeros_like(b) for b in mlp.biases]
    v_b = [np.zeros_like(b) for b in mlp.biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step_count = 0

    def val_loss() -> float:
        if x_val.shape[0] == 0:
            pred = mlp.forward(x_tr)
            return float(np.mean((pred - y_tr) ** 2))
        pred = mlp.forward(x_val)
        return float(np.mean((pred - y_val) ** 2))

    best = val_loss()
    best_theta = mlp.params_flat()
    stale = 0
    n_tr = x_tr.shape[0]
    for _epoch in range(hyper.epochs):
        perm = rng.permutation(n_tr)
        for start in range(0, n_tr, hyper.batch):
            sel = perm[start:start + hyper.batch]
            xb, yb = x_tr[sel], y_tr[sel]
            pred = mlp.forward(xb)
            err = 2.0 * (pred - yb) / xb.shape[0]
            if not np.isfinite(pred).all():
                raise TrainingDivergedError(
                    f"non-finite network output at step {step_count}")
            gw, gb = mlp.gradients(xb, err)
            step_count += 1
            corr1 = 1.0 - beta1**step_count
            corr2 = 1.0 - beta2**step_count
            for i in range(len(mlp.weights)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * gw[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * gw[i] ** 2
                mlp.weights[i] -= hyper.step * (m_w[i] / corr1) / (np.sqrt(v_w[i] / corr2) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * gb[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * gb[i] ** 2
                mlp.biases[i] -= hyper.step * (m_b[i] / corr1) / (np.sqrt(v_b[i] / corr2) + eps)
        loss = val_loss()
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {_epoch}")
        if loss < best - 1e-15:
            best = loss
            best_theta = mlp.params_flat()
            stale = 0
        else:
            stale += 1
            if stale >= hyper.patience:
                break
    mlp.set_params_flat(best_theta)
    return mlp, normalizer


@dataclass
class RegistrationModel:
    """f(p) = A p + t + g(normalize(p); theta); g optional (affine-only models)."""

    a_mat: np.ndarray
    t_vec: np.ndarray
    normalizer: Normalizer | None = None
    mlp: ResidualMlp | None = None
    train_idx: np.ndarray | None = None

    def predict(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        out = p @ self.a_mat.T + self.t_vec
        if self.mlp is not None:
            out = out + self.mlp.forward(self.normalizer(p))
        return out

    @staticmethod
    def identity(d: int) -> "RegistrationModel":
        return RegistrationModel(np.eye(d), np.zeros(d))

    def to_json_dict(self) -> dict:
        obj = {
            "schema_version": 1,
            "d": int(self.a_mat.shape[0]),
            "A": self.a_mat.tolist(),
            "t": self.t_vec.tolist(),
            "normalizer": None,
            "mlp": None,
            "train_idx": None if self.train_idx is None else [int(i) for i in self.train_idx],
        }
        if self.normalizer is not None:
            obj["normalizer"] = {"mean": self.normalizer.mean.tolist(),
                                 "scale": self.normalizer.scale.tolist()}
        if self.mlp is not None:
            obj["mlp"] = {"sizes": self.mlp.sizes, "theta": self.mlp.params_flat().tolist()}
        return obj

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "RegistrationModel":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        model = RegistrationModel(np.array(obj["A"], dtype=float), np.array(obj["t"], dtype=float))
        if obj.get("normalizer") is not None:
            model.normalizer = Normalizer(np.array(obj["normalizer"]["mean"], dtype=float),
                                          np.array(obj["normalizer"]["scale"], dtype=float))
        if obj.get("mlp") is not None:
            mlp = ResidualMlp(obj["mlp"]["sizes"])
            mlp.set_params_flat(np.array(obj["mlp"]["theta"], dtype=float))
            model.mlp = mlp
        if obj.get("train_idx") is not None:
            model.train_idx = np.array(obj["train_idx"], dtype=int)
        return model


def evaluate(model: RegistrationModel, pairs: MatchedPairs, test_idx) -> MetricSummary:
    """Error statistics of ||f(p_T) - p_L|| over the test pairs only."""
    idx = np.asarray(test_idx, dtype=int)
    if idx.size == 0:
        raise ValueError("test set is empty")
    if model.train_idx is not None:
        overlap = np.intersect1d(idx, model.train_idx)
        if overlap.size:
            raise ValueError(f"test indices overlap training set (e.g. {int(overlap[0])})")
    pred = model.predict(pairs.p_tracker[idx])
    errors = np.linalg.norm(pred - pairs.p_reference[idx], axis=1)
    return summarize(errors)


# ---------------------------------------------------------------------------
# Synthetic distortion-field benchmark


@dataclass(frozen=True)
class GaussianBump:
    center: np.ndarray
    amplitude: np.ndarray  # displacement vector at the bump center
    width: float


@dataclass(frozen=True)
class DistortionField:
    """Ground-truth map from tracker space to reference space.

    reference = A0 p + t0 + warp(p), with warp a sum of radial Gaussian
    displacement bumps; tracker measurements additionally carry isotropic
    Gaussian noise.
    """

    a_true: np.ndarray
    t_true: np.ndarray
    bumps: tuple[GaussianBump, ...]
    noise_std: float
    seed: int

    def warp(self, p: np.ndarray) -> np.ndarray:
        out = np.zeros_like(p)
        for b in self.bumps:
            r2 = np.sum((p - b.center) ** 2, axis=1)
            out += np.exp(-r2 / (2.0 * b.width**2))[:, None] * b.amplitude
        return out

    def warp_jacobian(self, p: np.ndarray) -> np.ndarray:
        d = p.shape[0]
        jac = np.zeros((d, d))
        for b in self.bumps:
            diff = p - b.center
            g = math.exp(-float(diff @ diff) / (2.0 * b.width**2))
            jac += np.outer(b.amplitude, -diff / b.width**2) * g
        return jac

    def forward(self, p: np.ndarray) -> np.ndarray:
        return p @ self.a_true.T + self.t_true + self.warp(p)

    def invert(self, target: np.ndarray, iters: int = 60, tol: float = 1e-13) -> np.ndarray:
        """Newton inversion of the forward map for one reference point."""
        a_inv = np.linalg.inv(self.a_true)
        p = a_inv @ (target - self.t_true)
        for _ in range(iters):
            f = self.a_true @ p + self.t_true + self.warp(p[None, :])[0] - target
            if float(f @ f) < tol**2:
                break
            jac = self.a_true + self.warp_jacobian(p)
            p = p - np.linalg.solve(jac, f)
        return p


def synth_dataset(field: DistortionField, n_points: int, workspace) -> MatchedPairs:
    """Sample reference points uniformly in the workspace box and invert.

    ``workspace`` is ((min...), (max...)) per dimension.  Tracker coordinates
    are the exact inverse images plus Gaussian measurement noise; timestamps
    are a nominal uniform cadence.
    """
    if n_points < 100:
        raise ValueError("need at least 100 points")
    lo = np.asarray(workspace[0], dtype=float)
    hi = np.asarray(workspace[1], dtype=float)
    d = lo.size
    rng = rng_stream(field.seed, "reg.data")
    p_ref = lo + (hi - lo) * rng.random((n_points, d))
    p_trk = np.empty_like(p_ref)
    for i in range(n_points):
        p_trk[i] = field.invert(p_ref[i])
    if field.noise_std > 0.0:
        p_trk = p_trk + field.noise_std * rng.standard_normal(p_trk.shape)
    t_ns = (np.arange(n_points, dtype=np.int64) * 20_000_000)
    return MatchedPairs(t_ns, p_trk, p_ref)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform shuffle split into (train, test) index arrays."""
    rng = rng_stream(seed, "reg.split")
    order = rng.permutation(n)
    n_train = int(train_fraction * n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def default_benchmark_field(seed: int = 20240401) -> DistortionField:
    """Shipped synthetic benchmark: mild rotation/scale/shear plus 3 bumps."""
    theta = math.radians(8.0)
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    a0 = rot @ np.array([[1.03, 0.015], [0.0, 0.97]])
    return DistortionField(
        a_true=a0,
        t_true=np.array([0.35, -0.20]),
        bumps=(
            GaussianBump(np.array([1.05, 1.15]), np.array([0.022, -0.012]), 0.55),
            GaussianBump(np.array([2.90, 2.40]), np.array([-0.018, 0.025]), 0.75),
            GaussianBump(np.array([1.90, 3.30]), np.array([0.012, 0.016]), 0.50),
        ),
        noise_std=0.002,
        seed=seed,
    )


#: Benchmark sizing: 3433 pairs over the 4.2 m square workspace, 80/20 split.
BENCHMARK_N_POINTS = 3433
BENCHMARK_WORKSPACE = ((0.0, 0.0), (4.2, 4.2))
BENCHMARK_TRAIN_FRACTION = 0.8


def run_benchmark(field: DistortionField | None = None, hyper: MlpHyper | None = None):
    """Fit the full model ladder on the shipped benchmark.

    Returns (pairs, train_idx, test_idx, {name: (model, MetricSummary)}).
    """
    if field is None:
        field = default_benchmark_field()
    pairs = synth_dataset(field, BENCHMARK_N_POINTS, BENCHMARK_WORKSPACE)
    train_idx, test_idx = split_indices(len(pairs), BENCHMARK_TRAIN_FRACTION, field.seed)
    if hyper is None:
        hyper = MlpHyper(seed=field.seed)

    results = {}
    raw = RegistrationModel.identity(pairs.d)
    raw.train_idx = train_idx
    results["raw"] = (raw, evaluate(raw, pairs, test_idx))

    r_mat, t_r = fit_rigid_svd(pairs, train_idx)
    rigid = RegistrationModel(r_mat, t_r, train_idx=train_idx)
    results["rigid_svd"] = (rigid, evaluate(rigid, pairs, test_idx))

    a_mat, t_a = fit_affine(pairs, train_idx)
    affine = RegistrationModel(a_mat, t_a, train_idx=train_idx)
    results["affine"] = (affine, evaluate(affine, pairs, test_idx))

    mlp, norm = fit_residual_mlp(pairs, train_idx, (a_mat, t_a), hyper)
    hybrid = RegistrationModel(a_mat.copy(), t_a.copy(), normalizer=norm, mlp=mlp,
                               train_idx=train_idx)
    results["hybrid"] = (hybrid, evaluate(hybrid, pairs, test_idx))
    return pairs, train_idx, test_idx, results
