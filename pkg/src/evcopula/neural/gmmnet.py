"""Conditional Gaussian-mixture networks with a Gibbs sampler.

One network per feature learns the full conditional x_i | x_{-i} as a
5-component Gaussian mixture (weight logits, means, log-sigmas).  The
networks train on z-scored features by mixture NLL with global
gradient-norm clipping, stop early on validation tau-Diff, and drive a
systematic-scan Gibbs sampler that draws each coordinate exactly from
its predicted mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .net import MLP, Adam, TrainLog, clip_gradients, feedforward

LOG_SIGMA_MIN = -7.0
LOG_SIGMA_MAX = 3.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GmmNetConfig:
    """Training and sampling hyperparameters (config keys ``gmmnet.*``)."""

    hidden: int = 32
    components: int = 5
    lr: float = 1e-3
    batch: int = 64
    grad_clip: float = 5.0
    max_epochs: int = 2000
    patience: int = 500
    eval_every: int = 25
    m_valid: int = 2000
    gibbs_burn_in: int = 100
    gibbs_thin: int = 5
    gibbs_chains: int = 16
    valid_burn_in: int = 25
    valid_thin: int = 1
    init_bank_size: int = 4096

    def __post_init__(self):
        if self.hidden <= 0 or self.components < 1 or self.batch <= 0:
            raise ValueError("invalid gmmnet architecture or batch size")
        if self.lr <= 0 or self.grad_clip <= 0:
            raise ValueError("invalid gmmnet training parameters")


@dataclass
class GmmNetModel:
    """Three conditional nets plus the train-set standardizer."""

    nets: list
    config: GmmNetConfig
    mean: np.ndarray
    sd: np.ndarray
    init_bank: np.ndarray
    trained: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": "gmmnet",
            "format": 1,
            "config": self.config.__dict__,
            "trained": self.trained,
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "init_bank": self.init_bank.tolist(),
            "weights": [[w.tolist() for w in net.parameters()] for net in self.nets],
            "buffers": [
                [[m.tolist(), v.tolist()] for m, v in net.get_buffers()] for net in self.nets
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "GmmNetModel":
        cfg = GmmNetConfig(**d["config"])
        rng = np.random.default_rng(0)
        nets = [_build_net(cfg, rng) for _ in range(3)]
        for net, weights, buffers in zip(nets, d["weights"], d["buffers"], strict=True):
            net.set_state([np.asarray(w) for w in weights])
            net.set_buffers([(np.asarray(m), np.asarray(v)) for m, v in buffers])
        return GmmNetModel(
            nets,
            cfg,
            np.asarray(d["mean"]),
            np.asarray(d["sd"]),
            np.asarray(d["init_bank"]),
            d["trained"],
        )


def _build_net(cfg: GmmNetConfig, rng: np.random.Generator) -> MLP:
    widths = [2, cfg.hidden, cfg.hidden, 3 * cfg.components]
    return feedforward(rng, widths, activation="relu", batch_norm=True)


def _split_params(out: np.ndarray, k: int):
    """Raw head output -> (log-weights, means, clamped log-sigmas)."""
    logits = out[:, :k]
    log_w = logits - _logsumexp(logits)
    mu = out[:, k : 2 * k]
    log_sig = np.clip(out[:, 2 * k :], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return log_w, mu, log_sig


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))


def mixture_params(m: GmmNetModel, i: int, others: np.ndarray):
    """Conditional mixture of feature i given the other two (z-scored)."""
    out = m.nets[i].forward(np.atleast_2d(others), train=False)
    log_w, mu, log_sig = _split_params(out, m.config.components)
    return np.exp(log_w), mu, np.exp(log_sig)


def _nll_and_grad(out: np.ndarray, y: np.ndarray, k: int):
    """Mean mixture NLL and its gradient wrt the raw head output."""
    log_w, mu, log_sig = _split_params(out, k)
    z = (y[:, None] - mu) / np.exp(log_sig)
    log_norm = -0.5 * z * z - log_sig - 0.5 * _LOG_2PI
    joint = log_w + log_norm
    ll = _logsumexp(joint)
    resp = np.exp(joint - ll)  # posterior component responsibilities
    n = len(y)
    grad = np.empty_like(out)
    grad[:, :k] = (np.exp(log_w) - resp) / n
    grad[:, k : 2 * k] = -resp * z / np.exp(log_sig) / n
    dls = -resp * (z * z - 1.0) / n
    # clamped entries have zero derivative
    clamped = (out[:, 2 * k :] <= LOG_SIGMA_MIN) | (out[:, 2 * k :] >= LOG_SIGMA_MAX)
    grad[:, 2 * k :] = np.where(clamped, 0.0, dls)
    return float(-np.mean(ll)), grad


def train_gmmnet(
    train_features: np.ndarray,
    valid_features: np.ndarray,
    config: GmmNetConfig | None = None,
    seed: int = 0,
) -> tuple[GmmNetModel, TrainLog]:
    """Fit the three conditionals jointly with tau-Diff early stopping."""
    from ..copulas import kendall_matrix

    cfg = config or GmmNetConfig()
    x = np.asarray(train_features, dtype=np.float64)
    xv = np.asarray(valid_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3 or len(x) < cfg.batch:
        raise ValueError("train features must be n x 3 with n >= batch size")
    if xv.ndim != 2 or xv.shape[1] != 3 or len(xv) < 2:
        raise ValueError("valid features must be n x 3 with n >= 2")
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    # constant columns leave summation dust ~1e-14 in std, so test relative to scale
    if np.any(sd <= 1e-8 * (1.0 + np.abs(mean))):
        raise ValueError("degenerate feature: zero variance in training data")
    vsd = xv.std(axis=0)
    if np.any(vsd <= 1e-8 * (1.0 + np.abs(xv.mean(axis=0)))):
        raise ValueError("degenerate feature: zero variance in validation data")
    z = (x - mean) / sd

    rng = np.random.default_rng(seed)
    nets = [_build_net(cfg, rng) for _ in range(3)]
    stride = max(1, len(z) // cfg.init_bank_size)
    model = GmmNetModel(nets, cfg, mean, sd, z[::stride].copy(), trained=True)
    opts = [Adam(net.parameters(), lr=cfg.lr) for net in nets]
    log = TrainLog()
    valid_taus = kendall_matrix(xv)
    others = [[j for j in range(3) if j != i] for i in range(3)]

    n = len(z)
    steps = n // cfg.batch
    best_state = [net.get_state() for net in nets]
    best_buffers = [net.get_buffers() for net in nets]
    best_val = np.inf
    best_epoch = 0
    m_valid = min(cfg.m_valid, 10 * len(xv))

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for step in range(steps):
            rows = z[order[step * cfg.batch : (step + 1) * cfg.batch]]
            for i, (net, opt) in enumerate(zip(nets, opts)):
                out = net.forward(rows[:, others[i]], train=True)
                loss, grad = _nll_and_grad(out, rows[:, i], cfg.components)
                epoch_loss += loss
                net.backward(grad)
                clip_gradients(net.gradients(), cfg.grad_clip)
                opt.step(net.parameters(), net.gradients())
        epoch_loss /= steps * 3
        if not np.isfinite(epoch_loss):
            raise RuntimeError(f"non-finite gmmnet loss at epoch {epoch}: {epoch_loss}")
        log.losses.append(epoch_loss)

        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            synth = gibbs_sample_gmmnet(
                model,
                m_valid,
                burn_in=cfg.valid_burn_in,
                thin=cfg.valid_thin,
                seed=rng.integers(2**63),
                chains=cfg.gibbs_chains,
            )
            tau_diff = float(np.linalg.norm(kendall_matrix(synth) - valid_taus))
            log.val_epochs.append(epoch)
            log.val_tau_diff.append(tau_diff)
            if tau_diff < best_val:
                best_val = tau_diff
                best_state = [net.get_state() for net in nets]
                best_buffers = [net.get_buffers() for net in nets]
                best_epoch = epoch
            elif epoch - best_epoch >= cfg.patience:
                log.stop_reason = f"no tau-diff improvement for {cfg.patience} epochs"
                break
    else:
        log.stop_reason = "reached max_epochs"

    for net, state, buffers in zip(nets, best_state, best_buffers):
        net.set_state(state)
        net.set_buffers(buffers)
    log.best_epoch = best_epoch
    return model, log


def gmmnet_nll(m: GmmNetModel, features: np.ndarray) -> np.ndarray:
    """Per-network mean conditional NLL of raw features (inference mode)."""
    z = (np.asarray(features, dtype=np.float64) - m.mean) / m.sd
    out = np.empty(3)
    for i in range(3):
        cols = [j for j in range(3) if j != i]
        head = m.nets[i].forward(z[:, cols], train=False)
        out[i] = _nll_and_grad(head, z[:, i], m.config.components)[0]
    return out


def _draw_conditional(m: GmmNetModel, i: int, others: np.ndarray, rng: np.random.Generator):
    """Exact draw from the predicted mixture: component, then Gaussian."""
    w, mu, sig = mixture_params(m, i, others)
    cdf = np.cumsum(w, axis=1)
    pick = (cdf < rng.random((len(w), 1))).sum(axis=1)
    pick = np.minimum(pick, m.config.components - 1)
    rows = np.arange(len(w))
    return mu[rows, pick] + sig[rows, pick] * rng.standard_normal(len(w))


def gibbs_sample_gmmnet(
    m: GmmNetModel,
    n: int,
    burn_in: int | None = None,
    thin: int | None = None,
    seed=0,
    chains: int | None = None,
) -> np.ndarray:
    """Systematic-scan Gibbs with exact conditional draws.

    Chains start at random rows of the training bank; output is
    de-standardized back to feature units.
    """
    if not m.trained:
        raise ValueError("gmmnet model is untrained")
    if n <= 0:
        raise ValueError("need n > 0 samples")
    cfg = m.config
    burn_in = cfg.gibbs_burn_in if burn_in is None else burn_in
    thin = cfg.gibbs_thin if thin is None else thin
    chains = min(cfg.gibbs_chains if chains is None else chains, n)
    rng = np.random.default_rng(seed)

    state = m.init_bank[rng.integers(len(m.init_bank), size=chains)].copy()
    others = [[j for j in range(3) if j != i] for i in range(3)]
    keep_rounds = -(-n // chains)
    kept = np.empty((keep_rounds * chains, 3))
    kept_rows = 0
    for sweep in range(burn_in + thin * keep_rounds):
        for i in range(3):
            state[:, i] = _draw_conditional(m, i, state[:, others[i]], rng)
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            kept[kept_rows : kept_rows + chains] = state
            kept_rows += chains
    return kept[:n] * m.sd + m.mean


def lighter_config_for_tests(**overrides) -> GmmNetConfig:
    """Small-budget config used by fast unit tests."""
    base = GmmNetConfig(max_epochs=150, eval_every=50, m_valid=500)
    return replace(base, **overrides)
