"""Copula-density estimation with a discriminator network.

A 3->100->100->100->1 LeakyReLU net with a sigmoid read-out D is
trained to separate pseudo-observations from uniform noise on the unit
cube, maximizing E_real[log D] + E_noise[log(1 - D)].  At the optimum
D/(1 - D) equals the density ratio against the uniform reference, i.e.
the copula density itself.  Generation runs a systematic-scan Gibbs
sampler over gridded conditionals of that density estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .net import MLP, Adam, TrainLog, feedforward

_EPS = 1e-12


@dataclass(frozen=True)
class CodineConfig:
    """Training and sampling hyperparameters (config keys ``codine.*``)."""

    hidden: int = 100
    depth: int = 3
    slope: float = 0.2
    lr: float = 1e-4
    batch: int = 64
    max_epochs: int = 2000
    patience: int = 500
    eval_every: int = 25
    m_valid: int = 2000
    gibbs_grid: int = 256
    gibbs_burn_in: int = 100
    gibbs_thin: int = 5
    gibbs_chains: int = 16
    # validation generation runs a cheaper sampler; full settings are
    # reserved for the final synthetic set
    valid_gibbs_grid: int = 64
    valid_burn_in: int = 25
    valid_thin: int = 1

    def __post_init__(self):
        if self.hidden <= 0 or self.depth < 1 or self.batch <= 0:
            raise ValueError("invalid codine architecture or batch size")
        if self.lr <= 0 or self.max_epochs < 1:
            raise ValueError("invalid codine training parameters")


@dataclass
class CodineModel:
    """Trained discriminator plus the config it was trained with."""

    mlp: MLP
    config: CodineConfig
    trained: bool = False
    gibbs_warnings: int = field(default=0, compare=False)

    def to_dict(self) -> dict:
        return {
            "kind": "codine",
            "format": 1,
            "config": self.config.__dict__,
            "trained": self.trained,
            "weights": [w.tolist() for w in self.mlp.parameters()],
        }

    @staticmethod
    def from_dict(d: dict) -> "CodineModel":
        cfg = CodineConfig(**d["config"])
        model = CodineModel(_build_mlp(cfg, np.random.default_rng(0)), cfg, d["trained"])
        model.mlp.set_state([np.asarray(w) for w in d["weights"]])
        return model


def _build_mlp(cfg: CodineConfig, rng: np.random.Generator) -> MLP:
    widths = [3] + [cfg.hidden] * cfg.depth + [1]
    return feedforward(rng, widths, activation="leaky_relu", slope=cfg.slope)


def _logits(mlp: MLP, u: np.ndarray) -> np.ndarray:
    return mlp.forward(u, train=False)[:, 0]


def codine_discriminator(m: CodineModel, u) -> np.ndarray:
    """D(u) in (0, 1): probability the point is real rather than noise."""
    z = _logits(m.mlp, np.atleast_2d(np.asarray(u, dtype=np.float64)))
    d = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    return np.clip(d, _EPS, 1.0 - _EPS)


def codine_density(m: CodineModel, u) -> np.ndarray:
    """Density estimate D/(1 - D) = exp(logit); >= 0 by construction."""
    if not m.trained:
        raise ValueError("codine model is untrained")
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("density arguments must lie strictly inside (0, 1)")
    return np.exp(_logits(m.mlp, u))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def train_codine(
    pseudo_train: np.ndarray,
    pseudo_valid: np.ndarray,
    config: CodineConfig | None = None,
    seed: int = 0,
) -> tuple[CodineModel, TrainLog]:
    """Adversarial training against uniform noise with tau-Diff stopping.

    Every ``eval_every`` epochs a cheap Gibbs sample is scored by the
    Frobenius distance of Kendall matrices against the validation set;
    the returned model carries the best-scoring epoch's weights.
    """
    from ..copulas import kendall_matrix

    cfg = config or CodineConfig()
    train = np.asarray(pseudo_train, dtype=np.float64)
    valid = np.asarray(pseudo_valid, dtype=np.float64)
    if train.ndim != 2 or train.shape[1] != 3 or len(train) < cfg.batch:
        raise ValueError("pseudo_train must be n x 3 with n >= batch size")
    if valid.ndim != 2 or valid.shape[1] != 3 or len(valid) < 2:
        raise ValueError("pseudo_valid must be n x 3 with n >= 2")

    rng = np.random.default_rng(seed)
    model = CodineModel(_build_mlp(cfg, rng), cfg, trained=True)
    mlp = model.mlp
    opt = Adam(mlp.parameters(), lr=cfg.lr)
    log = TrainLog()
    valid_taus = kendall_matrix(valid)

    n = len(train)
    steps = n // cfg.batch
    best_state = mlp.get_state()
    best_val = np.inf
    best_epoch = 0
    m_valid = min(cfg.m_valid, 10 * len(valid))

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for step in range(steps):
            real = train[order[step * cfg.batch : (step + 1) * cfg.batch]]
            noise = rng.random((cfg.batch, 3))
            batch = np.vstack([real, noise])
            z = mlp.forward(batch, train=True)[:, 0]
            zr, zf = z[: cfg.batch], z[cfg.batch :]
            loss = float(np.mean(_softplus(-zr)) + np.mean(_softplus(zf)))
            epoch_loss += loss
            g = np.empty_like(z)
            g[: cfg.batch] = (_sigmoid(zr) - 1.0) / cfg.batch
            g[cfg.batch :] = _sigmoid(zf) / cfg.batch
            mlp.backward(g[:, None])
            opt.step(mlp.parameters(), mlp.gradients())
        epoch_loss /= steps
        if not np.isfinite(epoch_loss):
            raise RuntimeError(f"non-finite codine loss at epoch {epoch}: {epoch_loss}")
        log.losses.append(epoch_loss)

        if epoch % cfg.eval_every == 0 or epoch == cfg.max_epochs:
            synth = gibbs_sample_codine(
                model,
                m_valid,
                burn_in=cfg.valid_burn_in,
                thin=cfg.valid_thin,
                seed=rng.integers(2**63),
                grid=cfg.valid_gibbs_grid,
                chains=cfg.gibbs_chains,
            )
            tau_diff = float(np.linalg.norm(kendall_matrix(synth) - valid_taus))
            log.val_epochs.append(epoch)
            log.val_tau_diff.append(tau_diff)
            if tau_diff < best_val:
                best_val = tau_diff
                best_state = mlp.get_state()
                best_epoch = epoch
            elif epoch - best_epoch >= cfg.patience:
                log.stop_reason = f"no tau-diff improvement for {cfg.patience} epochs"
                break
    else:
        log.stop_reason = "reached max_epochs"

    mlp.set_state(best_state)
    log.best_epoch = best_epoch
    return model, log


def _conditional_inverse_cdf(dens: np.ndarray, p: np.ndarray, rng: np.random.Generator):
    """Inverse-CDF draw from per-row gridded conditionals with jitter.

    Returns (samples, zero_rows): rows whose conditional mass underflows
    to zero are redrawn uniformly and counted.
    """
    grid = dens.shape[1]
    total = dens.sum(axis=1)
    zero = total <= 0.0
    if np.any(zero):
        dens = dens.copy()
        dens[zero] = 1.0
        total = dens.sum(axis=1)
    cdf = np.cumsum(dens, axis=1)
    targets = p * total
    cells = np.minimum((cdf < targets[:, None]).sum(axis=1), grid - 1)
    jitter = rng.random(len(dens))
    return (cells + jitter) / grid, int(np.sum(zero))


def gibbs_sample_codine(
    m: CodineModel,
    n: int,
    burn_in: int | None = None,
    thin: int | None = None,
    seed=0,
    grid: int | None = None,
    chains: int | None = None,
) -> np.ndarray:
    """Systematic-scan Gibbs over gridded conditionals of the density.

    ``chains`` independent walkers each discard ``burn_in`` sweeps and
    then contribute every ``thin``-th state until n samples exist.
    """
    if not m.trained:
        raise ValueError("codine model is untrained")
    if n <= 0:
        raise ValueError("need n > 0 samples")
    cfg = m.config
    burn_in = cfg.gibbs_burn_in if burn_in is None else burn_in
    thin = cfg.gibbs_thin if thin is None else thin
    grid = cfg.gibbs_grid if grid is None else grid
    chains = min(cfg.gibbs_chains if chains is None else chains, n)
    rng = np.random.default_rng(seed)

    state = rng.random((chains, 3))
    centers = (np.arange(grid) + 0.5) / grid
    keep_rounds = -(-n // chains)  # ceil
    kept = np.empty((keep_rounds * chains, 3))
    zero_rows = 0

    probe = np.empty((chains * grid, 3))
    total_sweeps = burn_in + thin * keep_rounds
    kept_rows = 0
    for sweep in range(total_sweeps):
        for coord in range(3):
            probe[:] = np.repeat(state, grid, axis=0)
            probe[:, coord] = np.tile(centers, chains)
            dens = np.exp(_logits(m.mlp, probe)).reshape(chains, grid)
            draw, zeros = _conditional_inverse_cdf(dens, rng.random(chains), rng)
            zero_rows += zeros
            state[:, coord] = draw
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            kept[kept_rows : kept_rows + chains] = state
            kept_rows += chains
    m.gibbs_warnings = zero_rows
    out = np.clip(kept[:n], _EPS, 1.0 - _EPS)
    return out


def lighter_config_for_tests(**overrides) -> CodineConfig:
    """Small-budget config used by fast unit tests."""
    base = CodineConfig(max_epochs=150, eval_every=50, m_valid=500)
    return replace(base, **overrides)
