"""Masked truncated beta-process factor analysis by Gibbs sampling.

Joint dictionary learning and sparse coding from subsampled patches.  The
generative model, per patch x_i observed on the element set Omega_i:

    x_i = D (z_i * s_i) + eps_i            restricted to Omega_i
    d_k        ~ Normal(0, I_P / P)
    pi_k       ~ Beta(a / K, b (K - 1) / K)
    z_ik       ~ Bernoulli(pi_k)
    s_ik       ~ Normal(0, 1 / gamma_s)
    eps_i      ~ Normal(0, I_P / gamma_eps)
    gamma_s    ~ Gamma(c, d)      (shape, rate)
    gamma_eps  ~ Gamma(e, f)      (shape, rate)

One epoch is a full sweep in fixed order: atoms k = 1..K, then per-atom
usage/weights for all patches, then pi, gamma_s, gamma_eps.  Only observed
elements ever enter a conditional, so values at unobserved elements cannot
influence any sample.  All draws come from streams keyed by
(seed, domain, epoch, atom), making a run bit-reproducible for any worker
count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .patches import PatchMatrix, ShapeError
from .rng import DOMAIN_ATOM, DOMAIN_CODE, DOMAIN_GAMMA, DOMAIN_INIT, DOMAIN_PI, keyed_rng

PRECISION_FLOOR = 1e-12
_PI_EPS = 1e-15


class DivergenceError(RuntimeError):
    """Inference produced non-finite state; aborts with a diagnostic."""


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters; num_atoms is the truncation level."""

    num_atoms: int = 64
    concentration_a: float = 1.0
    concentration_b: float = 1.0
    weight_shape: float = 1e-6
    weight_rate: float = 1e-6
    noise_shape: float = 1e-6
    noise_rate: float = 1e-6

    def __post_init__(self):
        if self.num_atoms < 1:
            raise ValueError("num_atoms must be >= 1")
        for name in ("concentration_a", "concentration_b", "weight_shape",
                     "weight_rate", "noise_shape", "noise_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class Dictionary:
    """K learned atoms (flattened patches) with their activation probabilities."""

    atoms: np.ndarray          # (K, P) float64
    pi: np.ndarray             # (K,) float64 in (0, 1)
    patch_shape: tuple[int, ...]

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def patch_size(self) -> int:
        return self.atoms.shape[1]

    def copy(self) -> "Dictionary":
        return Dictionary(self.atoms.copy(), self.pi.copy(), tuple(self.patch_shape))


@dataclass
class GibbsState:
    """Full latent state of one inference problem."""

    dictionary: Dictionary
    usage: np.ndarray          # (N, K) bool: which atoms each patch uses
    weights: np.ndarray        # (N, K) float64
    weight_precision: float    # gamma_s
    noise_precision: float     # gamma_eps
    epoch: int
    seed: int

    @property
    def num_patches(self) -> int:
        return self.usage.shape[0]

    @property
    def num_atoms(self) -> int:
        return self.usage.shape[1]


def init_state(
    pm: PatchMatrix,
    hp: Hyperparams,
    seed: int,
    init_mode: str = "data",
) -> GibbsState:
    """Initialize the sampler state.

    "prior" draws atoms from their prior with pi at its mean and no atoms
    in use.  "data" seeds atoms from the patches with the most observed
    elements (ties by index), zero-filled and unit-normalized; surplus
    atoms (K > N, or zero-norm patches) fall back to prior draws.
    """
    n, p_len = pm.values.shape
    if n < 1 or p_len < 1:
        raise ShapeError("patch matrix must be non-empty")
    k = hp.num_atoms
    rng = keyed_rng(seed, DOMAIN_INIT)
    prior_atoms = rng.standard_normal((k, p_len)) / math.sqrt(p_len)

    if init_mode == "prior":
        atoms = prior_atoms
    elif init_mode == "data":
        counts = pm.observed.sum(axis=1)
        order = np.argsort(-counts, kind="stable")
        atoms = prior_atoms.copy()
        take = min(k, n)
        cand = pm.values[order[:take]].astype(np.float64)
        norms = np.sqrt((cand * cand).sum(axis=1))
        ok = norms > 0
        atoms[:take][ok] = cand[ok] / norms[ok, None]
    else:
        raise ValueError(f"unknown init mode {init_mode!r}")

    pi0 = hp.concentration_a / (hp.concentration_a + hp.concentration_b)
    dictionary = Dictionary(
        atoms=atoms,
        pi=np.full(k, pi0, dtype=np.float64),
        patch_shape=tuple(pm.spec.patch_shape),
    )
    return GibbsState(
        dictionary=dictionary,
        usage=np.zeros((n, k), dtype=bool),
        weights=np.zeros((n, k), dtype=np.float64),
        weight_precision=max(hp.weight_shape / hp.weight_rate, PRECISION_FLOOR),
        noise_precision=max(hp.noise_shape / hp.noise_rate, PRECISION_FLOOR),
        epoch=0,
        seed=int(seed),
    )


# --- posterior parameters -------------------------------------------------
#
# These small helpers are the single source of the conditional-distribution
# algebra; the sweep consumes them and tests compare them against
# straight-from-definition oracles.

def _atom_params(mom_a, mom_c, atom, noise_precision, patch_size):
    # non-finite inputs flow through to the epoch-end divergence check
    with np.errstate(invalid="ignore", over="ignore"):
        lam = patch_size + noise_precision * mom_a
        mu = noise_precision * (mom_c + atom * mom_a) / lam
    return lam, mu


def _code_params(u, v, w_old, s_old, pi_k, weight_precision, noise_precision):
    # non-finite inputs flow through to the epoch-end divergence check
    with np.errstate(invalid="ignore", over="ignore"):
        proj = v + w_old * u  # sum over Omega_i of atom * residual-without-this-atom
        pi_k = np.clip(pi_k, _PI_EPS, 1.0 - _PI_EPS)
        log_odds = np.log(pi_k) - np.log1p(-pi_k)
        log_rho = log_odds - 0.5 * noise_precision * (s_old * s_old * u - 2.0 * s_old * proj)
        alpha = weight_precision + noise_precision * u
        mean = noise_precision * proj / alpha
    return log_rho, alpha, mean


def _residual(pm: PatchMatrix, state: GibbsState) -> np.ndarray:
    out = np.empty_like(pm.values)
    _kernels.residual_full(
        pm.values, pm.observed, state.usage, state.weights, state.dictionary.atoms, out
    )
    return out


def atom_posterior(pm: PatchMatrix, state: GibbsState, k: int):
    """Posterior (precision, mean) per pixel of atom k given the rest."""
    resid = _residual(pm, state)
    w_col = np.where(state.usage[:, k], state.weights[:, k], 0.0)
    mom_a, mom_c = _kernels.atom_moments(resid, pm.observed, w_col)
    return _atom_params(
        mom_a, mom_c, state.dictionary.atoms[k], state.noise_precision, float(pm.patch_size)
    )


def code_posterior(pm: PatchMatrix, state: GibbsState, k: int):
    """Per-patch (log_rho, alpha, mean) for atom k's usage/weight update.

    log_rho is the log-odds of z_ik = 1 evaluated at the current weight;
    alpha the weight's posterior precision; mean its posterior mean given
    z_ik = 1.
    """
    resid = _residual(pm, state)
    atom = state.dictionary.atoms[k]
    u, v = _kernels.code_moments(resid, pm.observed, atom)
    s_old = state.weights[:, k]
    w_old = np.where(state.usage[:, k], s_old, 0.0)
    return _code_params(
        u, v, w_old, s_old, float(state.dictionary.pi[k]),
        state.weight_precision, state.noise_precision,
    )


def pi_posterior(state: GibbsState, hp: Hyperparams):
    """Beta(shape_a, shape_b) parameters for every pi_k."""
    n = state.num_patches
    k = state.num_atoms  # truncation level of this state (may differ after transfer)
    m = state.usage.sum(axis=0).astype(np.float64)
    return hp.concentration_a / k + m, hp.concentration_b * (k - 1) / k + n - m


def gamma_posteriors(pm: PatchMatrix, state: GibbsState, hp: Hyperparams):
    """(shape, rate) of the weight- and noise-precision conditionals."""
    n, k = state.usage.shape
    sq_weights = float((state.weights * state.weights).sum())
    weight_post = (hp.weight_shape + 0.5 * n * k, hp.weight_rate + 0.5 * sq_weights)

    resid = _residual(pm, state)
    n_obs = int(pm.observed.sum())
    sq_resid = _kernels.masked_sq_norm(resid)
    noise_post = (hp.noise_shape + 0.5 * n_obs, hp.noise_rate + 0.5 * sq_resid)
    return weight_post, noise_post


# --- the sweep --------------------------------------------------------------

def _sample_codes_for_atom(
    resid: np.ndarray,
    pm: PatchMatrix,
    state: GibbsState,
    k: int,
    rng: np.random.Generator,
) -> None:
    """Resample (z_ik, s_ik) for all patches i; updates state and resid."""
    atom = state.dictionary.atoms[k]
    u, v = _kernels.code_moments(resid, pm.observed, atom)
    s_old = state.weights[:, k].copy()
    w_old = np.where(state.usage[:, k], s_old, 0.0)
    log_rho, alpha, mean = _code_params(
        u, v, w_old, s_old, float(state.dictionary.pi[k]),
        state.weight_precision, state.noise_precision,
    )

    n = u.shape[0]
    uniforms = rng.random(n)
    normals = rng.standard_normal(n)

    # z = 1 with probability sigmoid(log_rho): compare against a logistic draw.
    logistic = np.log(uniforms) - np.log1p(-uniforms)
    z_new = logistic < log_rho

    s_new = np.where(
        z_new,
        mean + normals / np.sqrt(alpha),
        normals / math.sqrt(state.weight_precision),
    )
    w_new = np.where(z_new, s_new, 0.0)

    dw = w_old - w_new
    _kernels.shift_codes(resid, pm.observed, atom, dw)
    state.usage[:, k] = z_new
    state.weights[:, k] = s_new


def gibbs_epoch(
    state: GibbsState,
    pm: PatchMatrix,
    hp: Hyperparams,
    freeze_dict: bool = False,
) -> GibbsState:
    """One full sweep; mutates and returns the state with epoch + 1.

    Order: atoms (skipped when freeze_dict), per-atom usage/weights, pi,
    weight precision, noise precision.
    """
    n, p_len = pm.values.shape
    if state.num_patches != n or state.dictionary.patch_size != p_len:
        raise ShapeError("state dimensions do not match the patch matrix")
    k_len = state.num_atoms
    epoch = state.epoch + 1
    seed = state.seed
    atoms = state.dictionary.atoms

    resid = _residual(pm, state)

    if not freeze_dict:
        for k in range(k_len):
            w_col = np.where(state.usage[:, k], state.weights[:, k], 0.0)
            mom_a, mom_c = _kernels.atom_moments(resid, pm.observed, w_col)
            lam, mu = _atom_params(mom_a, mom_c, atoms[k], state.noise_precision, float(p_len))
            draws = keyed_rng(seed, DOMAIN_ATOM, epoch, k).standard_normal(p_len)
            new_atom = mu + draws / np.sqrt(lam)
            _kernels.shift_atom(resid, pm.observed, w_col, atoms[k] - new_atom)
            atoms[k] = new_atom

    for k in range(k_len):
        rng = keyed_rng(seed, DOMAIN_CODE, epoch, k)
        _sample_codes_for_atom(resid, pm, state, k, rng)

    shape_a, shape_b = pi_posterior(state, hp)
    # K = 1 collapses the prior's second parameter to 0 (point mass at 1);
    # floor both so the sampler stays defined at the degenerate limit.
    state.dictionary.pi = keyed_rng(seed, DOMAIN_PI, epoch).beta(
        np.maximum(shape_a, PRECISION_FLOOR), np.maximum(shape_b, PRECISION_FLOOR)
    )

    rng = keyed_rng(seed, DOMAIN_GAMMA, epoch)
    sq_weights = float((state.weights * state.weights).sum())
    state.weight_precision = max(
        rng.gamma(hp.weight_shape + 0.5 * n * k_len,
                  1.0 / (hp.weight_rate + 0.5 * sq_weights)),
        PRECISION_FLOOR,
    )
    n_obs = int(pm.observed.sum())
    sq_resid = _kernels.masked_sq_norm(resid)
    state.noise_precision = max(
        rng.gamma(hp.noise_shape + 0.5 * n_obs,
                  1.0 / (hp.noise_rate + 0.5 * sq_resid)),
        PRECISION_FLOOR,
    )

    if not (math.isfinite(state.weight_precision)
            and math.isfinite(state.noise_precision)
            and math.isfinite(sq_resid)):
        raise DivergenceError(
            f"non-finite state at epoch {epoch}: "
            f"gamma_s={state.weight_precision}, gamma_eps={state.noise_precision}, "
            f"masked residual norm={sq_resid}"
        )

    state.epoch = epoch
    return state


def compose_estimates(state: GibbsState) -> np.ndarray:
    """Model estimate D (z_i * s_i) for every patch at every element."""
    out = np.empty((state.num_patches, state.dictionary.patch_size), dtype=np.float64)
    _kernels.compose_estimates(state.usage, state.weights, state.dictionary.atoms, out)
    return out


def install_dictionary(
    state_seed: int,
    pm: PatchMatrix,
    hp: Hyperparams,
    dictionary: Dictionary,
) -> GibbsState:
    """State with a given dictionary installed and codes reset to zero."""
    if dictionary.patch_size != pm.patch_size:
        raise ShapeError(
            f"dictionary patch size {dictionary.patch_size} != patches {pm.patch_size}"
        )
    n = pm.num_patches
    k = dictionary.num_atoms
    return GibbsState(
        dictionary=dictionary.copy(),
        usage=np.zeros((n, k), dtype=bool),
        weights=np.zeros((n, k), dtype=np.float64),
        weight_precision=max(hp.weight_shape / hp.weight_rate, PRECISION_FLOOR),
        noise_precision=max(hp.noise_shape / hp.noise_rate, PRECISION_FLOOR),
        epoch=0,
        seed=int(state_seed),
    )


def infer(
    pm: PatchMatrix,
    hp: Hyperparams,
    epochs: int,
    seed: int,
    freeze_dict: bool = False,
    initial_dict: Dictionary | None = None,
    init_mode: str = "data",
    average_last: int = 1,
    state: GibbsState | None = None,
) -> tuple[GibbsState, np.ndarray]:
    """Run `epochs` sweeps and return the state plus per-patch estimates.

    The estimator is the last Gibbs sample; set average_last > 1 to average
    the estimates of the final sweeps instead.  Pass `state` to continue a
    warm sampler instead of initializing.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if state is None:
        if initial_dict is not None:
            if hp.num_atoms != initial_dict.num_atoms:
                hp = replace(hp, num_atoms=initial_dict.num_atoms)
            state = install_dictionary(seed, pm, hp, initial_dict)
        else:
            state = init_state(pm, hp, seed, init_mode=init_mode)

    average_last = max(1, min(int(average_last), epochs))
    tail_sum: np.ndarray | None = None
    for t in range(epochs):
        state = gibbs_epoch(state, pm, hp, freeze_dict=freeze_dict)
        if t >= epochs - average_last:
            est = compose_estimates(state)
            tail_sum = est if tail_sum is None else tail_sum + est
    assert tail_sum is not None
    return state, tail_sum / average_last


def transfer_dictionary(
    src: Dictionary,
    dst_patch_shape: tuple[int, ...],
    dst_tensor_shape: tuple[int, ...] | None = None,
) -> Dictionary:
    """Re-shape a dictionary for a destination problem.

    Equal patch shapes copy atoms bitwise.  A destination whose patch shape
    extends the source's with extra trailing dimensions re-uses each source
    atom across every slice of those dimensions (which must span the
    destination tensor), tiled and renormalized.
    """
    dst_patch_shape = tuple(int(b) for b in dst_patch_shape)
    src_shape = tuple(src.patch_shape)
    if dst_patch_shape == src_shape:
        return src.copy()

    d_src, d_dst = len(src_shape), len(dst_patch_shape)
    if d_dst <= d_src or dst_patch_shape[:d_src] != src_shape:
        raise ShapeError(
            f"cannot transfer atoms of shape {src_shape} to patch shape {dst_patch_shape}"
        )
    extra = dst_patch_shape[d_src:]
    if dst_tensor_shape is not None:
        if len(dst_tensor_shape) != d_dst:
            raise ShapeError("destination tensor rank does not match its patch shape")
        for i, b in enumerate(extra, start=d_src):
            if b != dst_tensor_shape[i]:
                raise ShapeError(
                    f"transfer dimension {i} must span the destination tensor "
                    f"({b} != {dst_tensor_shape[i]})"
                )

    k = src.num_atoms
    tiled = np.broadcast_to(
        src.atoms.reshape((k,) + src_shape + (1,) * len(extra)),
        (k,) + src_shape + extra,
    ).reshape(k, -1).copy()
    norms = np.sqrt((tiled * tiled).sum(axis=1))
    ok = norms > 0
    tiled[ok] /= norms[ok, None]
    return Dictionary(atoms=tiled, pi=src.pi.copy(), patch_shape=dst_patch_shape)
