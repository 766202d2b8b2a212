"""Adversarial evaluation harness.

Privacy side: membership-inference scores (confidence gap and threshold
classifier), a canary-based gradient-leakage rate, a toy exhaustive key
search against small ring-LWE instances, and share-reconstruction attacks
on the secret-sharing layer. Fairness side: label-flip poisoning and
trigger-patch backdoors on compromised client shards.

The key-search estimator is deliberately a toy: it enumerates ternary
secrets at degrees small enough for exhaustion and scores candidates by
residual norm. It reproduces the direction that larger ring degrees resist
recovery better, not absolute rates of real lattice reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClientShard, Dataset
from .errors import CapacityError, InvalidInputError
from .numerics import Architecture, Batch, ModelParams, forward, loss_and_grad
from .smc import SmcConfig, ShareBundle, fixed_decode, fixed_encode, FixedPointVector, \
    random_field_elements, shamir_reconstruct, shamir_split

_LA_SEARCH_CAP = 45_000_000  # 3^16 is the largest admissible ternary space


@dataclass
class AdversaryConfig:
    beta: float = 0.0                 # compromised-client fraction
    poison_fraction: float = 0.10
    backdoor_fraction: float = 0.10
    backdoor_target: int = 0
    trigger: list[tuple[int, float]] = field(default_factory=list)
    canary_index: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("beta", "poison_fraction", "backdoor_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must be in [0, 1]")


@dataclass
class AttackReport:
    msr: float | None = None
    dlr: float | None = None
    dpa_a: float | None = None
    dpa_ad: float | None = None
    ba_a: float | None = None
    ba_ad: float | None = None
    la_success: float | None = None
    sra_success: float | None = None


# --- membership inference -----------------------------------------------------

def msr_confidence_gap(model: ModelParams, arch: Architecture,
                       held_in: Batch, held_out: Batch) -> float:
    """Mean true-label confidence gap between member and non-member samples.

    Value lies in [-0.5, 0.5]: each pair contributes (p_in - p_out) / 2.
    """
    if len(held_in) != len(held_out) or len(held_in) == 0:
        raise InvalidInputError("held-in and held-out sets must be equal-size, nonempty")
    p_in = forward(model, arch, held_in)[np.arange(len(held_in)), held_in.labels]
    p_out = forward(model, arch, held_out)[np.arange(len(held_out)), held_out.labels]
    return float(np.sum(p_in - p_out) / (2 * len(held_in)))


def msr_threshold_classifier(model: ModelParams, arch: Architecture,
                             held_in: Batch, held_out: Batch,
                             threshold: float) -> float:
    """Success rate of 'member iff confidence > threshold' over both sets."""
    if len(held_in) == 0 or len(held_out) == 0:
        raise InvalidInputError("held-in/held-out sets must be nonempty")
    p_in = forward(model, arch, held_in)[np.arange(len(held_in)), held_in.labels]
    p_out = forward(model, arch, held_out)[np.arange(len(held_out)), held_out.labels]
    correct = np.sum(p_in > threshold) + np.sum(p_out <= threshold)
    return float(correct) / (len(held_in) + len(held_out))


def msr_best_threshold(model: ModelParams, arch: Architecture,
                       held_in: Batch, held_out: Batch) -> float:
    """Classifier success at the best threshold over all observed confidences."""
    p_in = forward(model, arch, held_in)[np.arange(len(held_in)), held_in.labels]
    p_out = forward(model, arch, held_out)[np.arange(len(held_out)), held_out.labels]
    best = 0.0
    for tau in np.concatenate([p_in, p_out, [0.0, 1.0]]):
        correct = np.sum(p_in > tau) + np.sum(p_out <= tau)
        best = max(best, float(correct) / (len(p_in) + len(p_out)))
    return best


# --- differential leakage ------------------------------------------------------

def dlr_canary(model: ModelParams, arch: Architecture, shard_batch: Batch,
               canary_features: np.ndarray, canary_label: int) -> float:
    """Mean absolute per-parameter gradient change from adding one record."""
    if len(shard_batch) == 0:
        raise InvalidInputError("shard is empty")
    _, grad_without = loss_and_grad(model, arch, shard_batch)
    with_canary = Batch(
        np.vstack([shard_batch.features, np.atleast_2d(canary_features)]),
        np.concatenate([shard_batch.labels, [canary_label]]),
    )
    _, grad_with = loss_and_grad(model, arch, with_canary)
    return float(np.abs(grad_with.values - grad_without.values).sum() / model.dim)


# --- data manipulation attacks -------------------------------------------------

def poison_shards(dataset: Dataset, shards: list[ClientShard], cfg: AdversaryConfig,
                  rng: np.random.Generator) -> tuple[Dataset, list[int]]:
    """Randomly relabel a fraction of samples on floor(beta*K) clients.

    Returns a poisoned copy of the dataset and the compromised client ids;
    shard index structure is unchanged.
    """
    k_comp = int(cfg.beta * len(shards))
    labels = dataset.labels.copy()
    if k_comp == 0:
        return dataset, []
    chosen = sorted(rng.choice(len(shards), size=k_comp, replace=False).tolist())
    for cid in chosen:
        idx = shards[cid].indices
        n_poison = int(cfg.poison_fraction * len(idx))
        if n_poison == 0:
            continue
        victims = rng.choice(idx, size=n_poison, replace=False)
        for v in victims:
            old = labels[v]
            # uniform over the other classes
            new = rng.integers(0, dataset.num_classes - 1)
            labels[v] = new if new < old else new + 1
    poisoned = Dataset(dataset.features, labels, dataset.num_classes,
                       name=f"{dataset.name}+poison")
    return poisoned, chosen


def plant_backdoor(dataset: Dataset, shards: list[ClientShard], cfg: AdversaryConfig,
                   rng: np.random.Generator) -> tuple[Dataset, list[int]]:
    """Stamp the trigger pattern and target label on a fraction of samples
    belonging to floor(beta*K) compromised clients."""
    k_comp = int(cfg.beta * len(shards))
    if k_comp == 0 or cfg.backdoor_fraction == 0.0 or not cfg.trigger:
        return dataset, []
    features = dataset.features.copy()
    labels = dataset.labels.copy()
    chosen = sorted(rng.choice(len(shards), size=k_comp, replace=False).tolist())
    for cid in chosen:
        idx = shards[cid].indices
        n_bd = int(cfg.backdoor_fraction * len(idx))
        if n_bd == 0:
            continue
        victims = rng.choice(idx, size=n_bd, replace=False)
        for feat_idx, value in cfg.trigger:
            features[victims, feat_idx] = value
        labels[victims] = cfg.backdoor_target
    stamped = Dataset(features, labels, dataset.num_classes, name=f"{dataset.name}+backdoor")
    return stamped, chosen


def apply_trigger(batch: Batch, cfg: AdversaryConfig) -> Batch:
    """Stamp the trigger onto every sample (labels untouched), for evaluation."""
    features = batch.features.copy()
    for feat_idx, value in cfg.trigger:
        features[:, feat_idx] = value
    return Batch(features, batch.labels)


def backdoor_success(model: ModelParams, arch: Architecture, clean_test: Batch,
                     cfg: AdversaryConfig) -> float:
    """Fraction of triggered non-target test samples classified as the target."""
    keep = clean_test.labels != cfg.backdoor_target
    if not np.any(keep):
        raise InvalidInputError("test set only contains the backdoor target class")
    probe = apply_trigger(Batch(clean_test.features[keep], clean_test.labels[keep]), cfg)
    preds = forward(model, arch, probe).argmax(axis=1)
    return float(np.mean(preds == cfg.backdoor_target))


# --- share reconstruction -------------------------------------------------------

def sra_success(cfg: SmcConfig, compromised: int, trials: int,
                rng: np.random.Generator, eps_tol: float | None = None) -> float:
    """Rate of reconstructing a shared scalar from `compromised` leaked bundles.

    Below threshold the attacker pads with forged uniform bundles; success
    means the decoded value lands within eps_tol of the truth.
    """
    if not 0 <= compromised <= cfg.num_shares:
        raise InvalidInputError("compromised count must be in [0, num_shares]")
    if eps_tol is None:
        eps_tol = 2.0 ** (-cfg.frac_bits)
    if compromised == 0:
        return 0.0
    hits = 0
    for _ in range(trials):
        secret_value = float(rng.uniform(-4.0, 4.0))
        bundles = shamir_split(fixed_encode(np.array([secret_value]), cfg).raw, cfg, rng)
        leaked = list(bundles[:compromised])
        if compromised < cfg.threshold:
            forged_n = cfg.threshold - compromised
            used = {b.share_index for b in leaked}
            free = [x for x in range(1, cfg.num_shares + 1) if x not in used][:forged_n]
            for x in free:
                vals = random_field_elements(rng, 1, cfg.prime)
                leaked.append(ShareBundle(share_index=x, values=vals))
        guess_raw = shamir_reconstruct(leaked, cfg)
        guess = fixed_decode(FixedPointVector(guess_raw, cfg.frac_bits), cfg)[0]
        if abs(guess - secret_value) <= eps_tol:
            hits += 1
    return hits / trials


# --- toy key search against small ring-LWE instances ----------------------------

@dataclass
class ToyRlweParams:
    degree: int = 8          # ring degree n; 3^n candidate ternary secrets
    modulus: int = 257       # <= 2^12 by contract
    error_std: float = 1.0

    def __post_init__(self):
        if self.degree < 2 or self.degree & (self.degree - 1):
            raise InvalidInputError("toy degree must be a power of two >= 2")
        if self.modulus > 4096:
            raise CapacityError("toy modulus must stay <= 2^12")
        if 3 ** self.degree > _LA_SEARCH_CAP:
            raise CapacityError(
                f"3^{self.degree} ternary secrets exceed the exhaustive-search cap"
            )


def _negacyclic_matrix(a: np.ndarray, q: int) -> np.ndarray:
    """n x n matrix A with (A s)_i = sum_j a_{(i-j) mod n} * sign * s_j."""
    n = len(a)
    mat = np.zeros((n, n), dtype=np.int64)
    for j in range(n):
        for i in range(n):
            k = i - j
            if k >= 0:
                mat[i, j] = a[k]
            else:
                mat[i, j] = (-int(a[k + n])) % q
    return mat


def _ternary_block(lo: int, count: int, width: int) -> np.ndarray:
    """Rows lo..lo+count of the base-3 enumeration, digits mapped to -1/0/1."""
    idx = np.arange(lo, lo + count, dtype=np.int64)
    out = np.empty((count, width), dtype=np.int64)
    for col in range(width):
        idx, digit = np.divmod(idx, 3)
        out[:, col] = digit - 1
    return out


def _centered_norm_sq(values: np.ndarray, q: int) -> np.ndarray:
    r = np.mod(values, q)
    r = np.where(r > q // 2, r - q, r)
    return np.sum(r.astype(np.float64) ** 2, axis=-1)


def la_toy_success(params: ToyRlweParams, attempts: int, delta_tol: float,
                   rng: np.random.Generator) -> float:
    """Exhaustive ternary key search success rate on toy RLWE instances.

    Per attempt: sample (s, a, e), publish b = -a*s + e mod q, let the
    attacker pick the ternary candidate with the smallest centred residual
    norm of b + a*s', and count success when every norm-minimising candidate
    lies within delta_tol (L2 on keys) of the truth. The search is exact over
    all 3^n secrets; a meet-in-the-middle table plus residual-bound pruning
    keeps 3^16 tractable.
    """
    n, q = params.degree, params.modulus
    hits = 0
    for _ in range(attempts):
        s = rng.integers(-1, 2, size=n, dtype=np.int64)
        a = rng.integers(0, q, size=n, dtype=np.int64)
        e = np.rint(rng.normal(0.0, params.error_std, size=n)).astype(np.int64)
        mat = _negacyclic_matrix(a, q)
        b = np.mod(-(mat @ s) + e, q)
        if _attack_recovers_key(s, b, mat, q, n, delta_tol):
            hits += 1
    return hits / attempts


def _attack_recovers_key(s_true: np.ndarray, b: np.ndarray, mat: np.ndarray,
                         q: int, n: int, delta_tol: float) -> bool:
    """Exact success test: does the norm-minimising ternary candidate match?

    Any candidate tying or beating the true key's residual norm r_true has
    every centred residual coordinate within sqrt(r_true), which prunes the
    pair enumeration hard in the low-noise regime. In the high-noise regime
    the bound is vacuous but wrong winners are plentiful, so the scan exits
    on the first one found (ties count against the attacker).
    """
    r_true = float(_centered_norm_sq(b + mat @ s_true, q))
    tau = int(np.floor(np.sqrt(r_true)))
    windowed = 2 * tau + 1 < q

    half = n // 2
    left_n, right_n = 3 ** half, 3 ** (n - half)
    u = np.mod(b + _ternary_block(0, left_n, half) @ mat[:, :half].T, q)
    v = np.mod(_ternary_block(0, right_n, n - half) @ mat[:, half:].T, q)
    true_pair = (_ternary_index(s_true[:half]), _ternary_index(s_true[half:]))

    order = np.argsort(v[:, 0], kind="stable")
    v0_sorted = v[order, 0]
    u_block = max(1, 4_000_000 // max(right_n, 1))
    for lo in range(0, left_n, u_block):
        count = min(u_block, left_n - lo)
        if windowed:
            li, rj = _window_pairs(u[lo : lo + count, 0], v0_sorted, order, lo, q, tau)
            if li.size == 0:
                continue
        else:
            li = np.repeat(np.arange(lo, lo + count), right_n)
            rj = np.tile(np.arange(right_n), count)
        # progressive norm accumulation, pruning pairs that exceed r_true
        partial = np.zeros(li.size, dtype=np.float64)
        alive = np.arange(li.size)
        for c in range(n):
            res = np.mod(u[li[alive], c] + v[rj[alive], c], q)
            res = np.where(res > q // 2, res - q, res).astype(np.float64)
            updated = partial[alive] + res ** 2
            partial[alive] = updated
            alive = alive[updated <= r_true]
            if alive.size == 0:
                break
        for k in alive:
            pair = (int(li[k]), int(rj[k]))
            if pair == true_pair:
                continue
            cand = np.concatenate([
                _ternary_block(pair[0], 1, half)[0],
                _ternary_block(pair[1], 1, n - half)[0],
            ])
            if np.linalg.norm(cand - s_true) > delta_tol:
                return False   # a wrong candidate ties or beats the true key
    return True


def _ternary_index(digits: np.ndarray) -> int:
    idx = 0
    for d in reversed([int(x) for x in digits]):
        idx = idx * 3 + (d + 1)
    return idx


def _window_pairs(u0: np.ndarray, v0_sorted: np.ndarray, order: np.ndarray,
                  lo: int, q: int, tau: int) -> tuple[np.ndarray, np.ndarray]:
    """All (left,right) index pairs with centred (u0 + v0) mod q within tau."""
    li_parts, rj_parts = [], []
    for row, u_val in enumerate(u0):
        # v0 must fall in [-u - tau, -u + tau] mod q: one or two sorted windows
        centre = (-int(u_val)) % q
        windows = []
        a, b_ = centre - tau, centre + tau
        if a < 0:
            windows = [(0, b_), (a % q, q - 1)]
        elif b_ >= q:
            windows = [(a, q - 1), (0, b_ % q)]
        else:
            windows = [(a, b_)]
        for wa, wb in windows:
            i0 = int(np.searchsorted(v0_sorted, wa, side="left"))
            i1 = int(np.searchsorted(v0_sorted, wb, side="right"))
            if i1 > i0:
                rj_parts.append(order[i0:i1])
                li_parts.append(np.full(i1 - i0, lo + row, dtype=np.int64))
    if not li_parts:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(li_parts), np.concatenate(rj_parts)
