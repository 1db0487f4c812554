"""Multimodal execution monitor: likelihood-threshold anomaly detection over
100 ms feature windows, trained per subtask on nominal executions.

The nominal model is a left-to-right hidden-state sequence model with
diagonal-Gaussian emissions, trained by expectation-maximization.  Detection
compares a smoothed (moving-average, winsorized) one-step predictive
log-likelihood against a progress-indexed calibration curve:

    event  <=>  stat < mean(progress) - sensitivity * spread(progress)

Winsorizing each window's log-likelihood at (window_mean - ll_cap) bounds how
hard a single catastrophic window can pull the statistic.  That gives the
threshold multiplier real semantics: moderate sensitivities (~2) catch real
faults within a few windows, while very large multipliers (~10, as used to
de-emphasize detection during user studies) disable detection entirely
because the maximum achievable drop is capped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FEATURE_DIM = 6
WINDOW_TICKS = 100   # 100 ms of 1 kHz frames
FEATURE_NAMES = ("force_mean", "force_max", "sound", "current_sum",
                 "contact_count", "progress")

ANOMALY_VOCABULARY = (
    # non-canonical 12-class vocabulary; the first five have injectors here
    "collision", "loud_sound", "motor_overload", "spurious_contact",
    "occlusion", "food_spill", "utensil_slip", "user_stop", "tool_drop",
    "aggressive_motion", "sensor_dropout", "freeze",
)


class InsufficientDataError(ValueError):
    pass


def extract_features(frames, progress: float) -> np.ndarray:
    """Aggregate one 100 ms window of SensorFrames into a feature vector."""
    if len(frames) != WINDOW_TICKS:
        raise ValueError(f"window must span {WINDOW_TICKS} frames, got {len(frames)}")
    force = np.array([f.force_mag for f in frames])
    sound = np.array([f.sound for f in frames])
    current = np.array([float(np.sum(f.currents)) for f in frames])
    contacts = max(f.contact_count for f in frames)
    return np.array([force.mean(), force.max(), sound.mean(),
                     current.mean(), float(contacts), float(progress)])


# ----------------------------------------------------------------- sequence model

class LeftRightHmm:
    """Left-to-right hidden-state model with diagonal Gaussian emissions."""

    def __init__(self, means, variances, log_trans, log_start):
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)
        self.log_trans = np.asarray(log_trans, dtype=float)
        self.log_start = np.asarray(log_start, dtype=float)

    @property
    def n_states(self) -> int:
        return self.means.shape[0]

    def _log_emission(self, obs: np.ndarray) -> np.ndarray:
        """(T, S) log emission densities."""
        obs = np.atleast_2d(obs)
        diff = obs[:, None, :] - self.means[None, :, :]
        return -0.5 * np.sum(diff * diff / self.variances[None, :, :]
                             + np.log(2.0 * np.pi * self.variances[None, :, :]), axis=2)

    def stepwise_loglik(self, obs: np.ndarray) -> np.ndarray:
        """One-step predictive log-likelihoods log p(o_t | o_1..t-1)."""
        logb = self._log_emission(obs)
        out = np.empty(len(obs))
        alpha = self.log_start + logb[0]
        out[0] = _logsumexp(alpha)
        alpha -= out[0]
        for t in range(1, len(obs)):
            alpha = _logsumexp_mat(alpha[:, None] + self.log_trans) + logb[t]
            out[t] = _logsumexp(alpha)
            alpha -= out[t]
        return out

    def sequence_loglik(self, obs: np.ndarray) -> float:
        return float(np.sum(self.stepwise_loglik(obs)))

    @staticmethod
    def fit(sequences: list[np.ndarray], n_states: int, iters: int = 200,
            tol: float = 1e-4, var_floor: float = 1e-4) -> "LeftRightHmm":
        """Deterministic EM: initialized by equal progress segmentation."""
        dim = sequences[0].shape[1]
        chunks = [[] for _ in range(n_states)]
        for seq in sequences:
            edges = np.linspace(0, len(seq), n_states + 1).astype(int)
            for s in range(n_states):
                chunks[s].append(seq[edges[s]:max(edges[s] + 1, edges[s + 1])])
        means = np.stack([np.concatenate(c).mean(axis=0) for c in chunks])
        variances = np.stack([np.concatenate(c).var(axis=0) for c in chunks])
        variances = np.maximum(variances, var_floor)

        trans = np.full((n_states, n_states), -np.inf)
        for s in range(n_states):
            if s + 1 < n_states:
                trans[s, s] = np.log(0.9)
                trans[s, s + 1] = np.log(0.1)
            else:
                trans[s, s] = 0.0
        start = np.full(n_states, -np.inf)
        start[0] = 0.0
        model = LeftRightHmm(means, variances, trans, start)

        last_ll = -np.inf
        for _ in range(iters):
            ll, stats = model._em_step(sequences, var_floor)
            if abs(ll - last_ll) < tol:
                break
            last_ll = ll
        return model

    def _em_step(self, sequences, var_floor):
        S, D = self.means.shape
        g_sum = np.zeros(S)
        g_obs = np.zeros((S, D))
        g_obs2 = np.zeros((S, D))
        x_sum = np.full((S, S), -np.inf)
        total_ll = 0.0
        for seq in sequences:
            logb = self._log_emission(seq)
            T = len(seq)
            la = np.full((T, S), -np.inf)
            lb = np.full((T, S), -np.inf)
            la[0] = self.log_start + logb[0]
            for t in range(1, T):
                la[t] = _logsumexp_mat(la[t - 1][:, None] + self.log_trans) + logb[t]
            lb[-1] = 0.0
            for t in range(T - 2, -1, -1):
                lb[t] = _logsumexp_mat((self.log_trans + logb[t + 1][None, :]
                                        + lb[t + 1][None, :]).T)
            ll = _logsumexp(la[-1])
            total_ll += ll
            gamma = np.exp(la + lb - ll)
            g_sum += gamma.sum(axis=0)
            g_obs += gamma.T @ seq
            g_obs2 += gamma.T @ (seq * seq)
            for t in range(T - 1):
                xi = (la[t][:, None] + self.log_trans + logb[t + 1][None, :]
                      + lb[t + 1][None, :] - ll)
                x_sum = np.logaddexp(x_sum, xi)

        g_sum = np.maximum(g_sum, 1e-12)
        self.means = g_obs / g_sum[:, None]
        self.variances = np.maximum(g_obs2 / g_sum[:, None] - self.means ** 2,
                                    var_floor)
        mask = np.isfinite(self.log_trans)
        new_trans = np.full_like(self.log_trans, -np.inf)
        for s in range(S):
            row = np.where(mask[s], x_sum[s], -np.inf)
            z = _logsumexp(row)
            if np.isfinite(z):
                new_trans[s] = row - z
            else:
                new_trans[s] = self.log_trans[s]
        self.log_trans = new_trans
        return total_ll, None

    def to_dict(self) -> dict:
        return {
            "means": _hex_array(self.means),
            "variances": _hex_array(self.variances),
            "log_trans": _hex_array(self.log_trans),
            "log_start": _hex_array(self.log_start),
        }

    @staticmethod
    def from_dict(d: dict) -> "LeftRightHmm":
        return LeftRightHmm(_unhex_array(d["means"]), _unhex_array(d["variances"]),
                            _unhex_array(d["log_trans"]), _unhex_array(d["log_start"]))


def _logsumexp(v):
    m = np.max(v)
    if not np.isfinite(m):
        return m
    return m + np.log(np.sum(np.exp(v - m)))


def _logsumexp_mat(m):
    """logsumexp over axis 0 of a (S_from, S_to) matrix."""
    mx = np.max(m, axis=0)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.where(np.isfinite(mx),
                       mx + np.log(np.sum(np.exp(m - safe[None, :]), axis=0)), mx)
    return out


def _hex_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape),
            "hex": [float(x).hex() for x in np.ravel(a)]}


def _unhex_array(d: dict) -> np.ndarray:
    return np.array([float.fromhex(h) for h in d["hex"]]).reshape(d["shape"])


# ------------------------------------------------------------------ nominal model

MODEL_FORMAT_VERSION = 1


@dataclass
class NominalModel:
    subtask: str
    hmm: LeftRightHmm
    n_bins: int
    window_mean: np.ndarray     # per-bin mean of raw window log-likelihoods
    stat_mean: np.ndarray       # per-bin mean of the smoothed statistic
    stat_spread: np.ndarray     # per-bin std of the smoothed statistic
    mov_window: int = 3
    ll_cap: float = 18.0
    spread_floor: float = 2.5
    train_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def save(self, path):
        doc = {
            "format": "feedsim-nominal-model",
            "version": MODEL_FORMAT_VERSION,
            "subtask": self.subtask,
            "n_bins": self.n_bins,
            "mov_window": self.mov_window,
            "ll_cap": float(self.ll_cap),
            "spread_floor": float(self.spread_floor),
            "hmm": self.hmm.to_dict(),
            "window_mean": _hex_array(self.window_mean),
            "stat_mean": _hex_array(self.stat_mean),
            "stat_spread": _hex_array(self.stat_spread),
            "train_scores": _hex_array(self.train_scores),
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1)

    @staticmethod
    def load(path) -> "NominalModel":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != "feedsim-nominal-model":
            raise ValueError(f"{path} is not a nominal-model file")
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        return NominalModel(
            subtask=doc["subtask"], hmm=LeftRightHmm.from_dict(doc["hmm"]),
            n_bins=int(doc["n_bins"]), window_mean=_unhex_array(doc["window_mean"]),
            stat_mean=_unhex_array(doc["stat_mean"]),
            stat_spread=_unhex_array(doc["stat_spread"]),
            mov_window=int(doc["mov_window"]), ll_cap=float(doc["ll_cap"]),
            spread_floor=float(doc["spread_floor"]),
            train_scores=_unhex_array(doc["train_scores"]))

    def bin_of(self, progress: float) -> int:
        return min(self.n_bins - 1, max(0, int(progress * self.n_bins)))

    def _neighborhood(self, progress: float) -> slice:
        # sharp nominal events (contact onsets) jitter by a window or two
        # between runs; compare against the most permissive adjacent bin so
        # that timing jitter alone never looks anomalous
        b = self.bin_of(progress)
        return slice(max(0, b - 1), min(self.n_bins, b + 2))

    def threshold(self, progress: float, sensitivity: float) -> float:
        nb = self._neighborhood(progress)
        return float(np.min(self.stat_mean[nb]
                            - sensitivity * (self.stat_spread[nb] + self.spread_floor)))

    def statistic(self, window_lls: list[float], progresses: list[float]) -> float:
        """Winsorized moving-average of the trailing window log-likelihoods."""
        w = min(self.mov_window, len(window_lls))
        vals = []
        for ll, pg in zip(window_lls[-w:], progresses[-w:]):
            floor = float(np.min(self.window_mean[self._neighborhood(pg)])) - self.ll_cap
            vals.append(max(ll, floor))
        return float(np.mean(vals))


def train_nominal(sequences: list[np.ndarray], progresses: list[np.ndarray],
                  subtask: str, cfg: dict | None = None) -> NominalModel:
    """Fit the nominal model and its progress-indexed calibration curves."""
    cfg = cfg or {}
    min_train = int(cfg.get("min_train", 10))
    if len(sequences) < min_train:
        raise InsufficientDataError(
            f"{len(sequences)} nominal sequences < required {min_train}")
    n_states = int(cfg.get("n_states", 5))
    n_bins = int(cfg.get("progress_bins", 20))
    mov_window = int(cfg.get("mov_window", 3))
    ll_cap = float(cfg.get("ll_cap", 18.0))
    spread_floor = float(cfg.get("spread_floor", 2.5))
    var_floor = float(cfg.get("var_floor", 1e-4))

    hmm = LeftRightHmm.fit(sequences, n_states, int(cfg.get("em_iters", 200)),
                           float(cfg.get("em_tol", 1e-4)), var_floor)

    raw = [hmm.stepwise_loglik(s) for s in sequences]
    window_mean = _bin_curve(raw, progresses, n_bins, fill=0.0)

    model = NominalModel(subtask=subtask, hmm=hmm, n_bins=n_bins,
                         window_mean=window_mean, stat_mean=np.zeros(n_bins),
                         stat_spread=np.zeros(n_bins), mov_window=mov_window,
                         ll_cap=ll_cap, spread_floor=spread_floor)

    stats = []
    for lls, pgs in zip(raw, progresses):
        s = np.empty(len(lls))
        for t in range(len(lls)):
            s[t] = model.statistic(list(lls[:t + 1]), list(pgs[:t + 1]))
        stats.append(s)
    model.stat_mean = _bin_curve(stats, progresses, n_bins, fill=0.0)
    model.stat_spread = _bin_curve(stats, progresses, n_bins, fill=1.0,
                                   reduce="std")
    # worst margin per training run, for held-out sanity checks
    model.train_scores = np.array([
        min(s[t] - model.stat_mean[model.bin_of(p[t])] for t in range(len(s)))
        for s, p in zip(stats, progresses)])
    return model


def _bin_curve(values: list[np.ndarray], progresses: list[np.ndarray],
               n_bins: int, fill: float, reduce: str = "mean") -> np.ndarray:
    buckets = [[] for _ in range(n_bins)]
    for vals, pgs in zip(values, progresses):
        for v, p in zip(vals, pgs):
            b = min(n_bins - 1, max(0, int(p * n_bins)))
            buckets[b].append(v)
    out = np.full(n_bins, fill)
    for b, vals in enumerate(buckets):
        if vals:
            out[b] = np.std(vals) if reduce == "std" else np.mean(vals)
    # propagate neighbours into empty bins so lookups stay sane
    for b in range(n_bins):
        if not buckets[b]:
            near = [k for k in range(n_bins) if buckets[k]]
            if near:
                out[b] = out[min(near, key=lambda k: abs(k - b))]
    return out


# --------------------------------------------------------------------- detection

@dataclass(frozen=True)
class AnomalyEvent:
    timestamp: float
    subtask: str
    score: float            # the smoothed statistic at emission
    threshold: float
    label: str
    source: str = "monitor"


def detect_stream(features: np.ndarray, progresses: np.ndarray,
                  model: NominalModel, sensitivity: float,
                  t0: float = 0.0, dt: float = WINDOW_TICKS / 1000.0,
                  label: str = "unknown"):
    """Offline scan; emits at most one event at the first threshold crossing."""
    lls = model.hmm.stepwise_loglik(features)
    hist_ll: list[float] = []
    hist_pg: list[float] = []
    for t in range(len(features)):
        hist_ll.append(float(lls[t]))
        hist_pg.append(float(progresses[t]))
        stat = model.statistic(hist_ll, hist_pg)
        thr = model.threshold(progresses[t], sensitivity)
        if stat < thr:
            return AnomalyEvent(timestamp=t0 + (t + 1) * dt, subtask=model.subtask,
                                score=stat, threshold=thr, label=label)
    return None


class OnlineDetector:
    """Incremental detector for one execution of one subtask."""

    def __init__(self, model: NominalModel, sensitivity: float):
        self.model = model
        self.sensitivity = float(sensitivity)
        self._alpha = None
        self._lls: list[float] = []
        self._pgs: list[float] = []
        self.fired = False

    def ingest(self, feature: np.ndarray, progress: float, t: float,
               label: str = "unknown"):
        if self.fired:
            return None
        hmm = self.model.hmm
        logb = hmm._log_emission(feature[None, :])[0]
        if self._alpha is None:
            alpha = hmm.log_start + logb
        else:
            alpha = _logsumexp_mat(self._alpha[:, None] + hmm.log_trans) + logb
        ll = _logsumexp(alpha)
        self._alpha = alpha - ll
        self._lls.append(float(ll))
        self._pgs.append(float(progress))
        stat = self.model.statistic(self._lls, self._pgs)
        thr = self.model.threshold(progress, self.sensitivity)
        if stat < thr:
            self.fired = True
            return AnomalyEvent(timestamp=t, subtask=self.model.subtask,
                                score=stat, threshold=thr, label=label)
        return None


# -------------------------------------------------------------------- labelling

# labelling works in normalized "excess over nominal" space, on the five
# physical channels (progress excluded); prototypes are directions so the
# label is robust to anomaly magnitude
LABEL_BASELINE = np.array([0.1, 0.2, 0.02, 1.5, 0.0])
LABEL_SCALES = np.array([2.0, 5.0, 0.5, 2.0, 1.0])

LABEL_PROTOTYPES = {
    "collision":        np.array([1.0, 1.0, 0.0, 0.0, 0.2]),
    "loud_sound":       np.array([0.0, 0.0, 1.0, 0.3, 0.0]),
    "motor_overload":   np.array([0.0, 0.0, 0.0, 1.0, 0.0]),
    "spurious_contact": np.array([0.0, 0.0, 0.0, 0.0, 1.0]),
    "occlusion":        np.array([0.5, 0.6, 0.0, 0.2, 0.6]),
}


def label_anomaly(window_feature: np.ndarray, min_cosine: float = 0.8,
                  min_magnitude: float = 0.5,
                  prototypes: dict | None = None) -> str:
    """Direction-matched label over the anomaly prototype library."""
    protos = prototypes or LABEL_PROTOTYPES
    f = np.asarray(window_feature, dtype=float)[:5]
    excess = np.clip(f - LABEL_BASELINE, 0.0, None) / LABEL_SCALES
    mag = float(np.linalg.norm(excess))
    if mag < min_magnitude:
        return "unknown"
    best, best_cos = "unknown", min_cosine
    for name, proto in protos.items():
        p = np.asarray(proto, dtype=float)
        c = float(excess @ p) / (mag * float(np.linalg.norm(p)))
        if c > best_cos:
            best, best_cos = name, c
    return best
