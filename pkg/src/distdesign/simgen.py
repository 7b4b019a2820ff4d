"""Synthetic study generator: iid standard-normal covariates, a randomized
treatment-assignment logit built from powered main effects and two-way
interactions, Bernoulli treatment draws, and the two covariate-to-designer
assignment settings."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import CONTINUOUS, ColumnMeta, DataError, Dataset, PartitionSpec
from .propensity import ScoreVector

N_ACTIVE_MAIN = 15
N_INTERACTIONS = 5
MAIN_MAGNITUDES = (0.3, 0.6, 0.9)
INTERACTION_MAGNITUDE = 0.6
INTERCEPT = math.log(0.2 / 0.8)

SETTING_ONE = "one"     # interaction parents co-assigned to one designer
SETTING_TWO = "two"     # parents may land with distinct designers

# sub-seed tags keep the generator components independent
_TAG_COVARIATES = 1
_TAG_MECHANISM = 2
_TAG_TREATMENT = 3
_TAG_PARTITION = 4


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), tag)))


@dataclass(frozen=True)
class MainTerm:
    column: int             # 0-based
    power: int              # 1, 2, or 3; powered terms are re-standardized
    coefficient: float


@dataclass(frozen=True)
class InteractionTerm:
    column_a: int
    column_b: int
    coefficient: float


@dataclass(frozen=True)
class MechanismSpec:
    """Treatment-assignment logit specification."""

    mains: tuple[MainTerm, ...]
    interactions: tuple[InteractionTerm, ...]
    intercept: float = INTERCEPT
    seed: int | None = None

    def __post_init__(self):
        if len(self.mains) != N_ACTIVE_MAIN:
            raise DataError(f"expected {N_ACTIVE_MAIN} active main effects")
        cols = [t.column for t in self.mains]
        if len(set(cols)) != len(cols):
            raise DataError("duplicate active main columns")
        for t in self.mains:
            if t.power not in (1, 2, 3):
                raise DataError(f"main power {t.power} outside 1..3")
        counts = {m: 0 for m in MAIN_MAGNITUDES}
        for t in self.mains:
            mag = round(abs(t.coefficient), 12)
            if mag not in counts:
                raise DataError(f"main coefficient magnitude {mag} not in {MAIN_MAGNITUDES}")
            counts[mag] += 1
        if any(c != N_ACTIVE_MAIN // len(MAIN_MAGNITUDES) for c in counts.values()):
            raise DataError(f"main magnitudes must split evenly, got {counts}")
        if len(self.interactions) != N_INTERACTIONS:
            raise DataError(f"expected {N_INTERACTIONS} interaction terms")
        active = set(cols)
        seen_pairs = set()
        for t in self.interactions:
            if t.column_a == t.column_b:
                raise DataError("interaction parents must differ")
            if round(abs(t.coefficient), 12) != INTERACTION_MAGNITUDE:
                raise DataError("interaction coefficients must be +-0.6")
            pair = frozenset((t.column_a, t.column_b))
            if pair in seen_pairs:
                raise DataError("duplicate interaction pair")
            seen_pairs.add(pair)
            if t.column_a not in active and t.column_b not in active:
                raise DataError("interaction lacks an active parent (weak heredity)")

    @property
    def active_columns(self) -> set[int]:
        return {t.column for t in self.mains}

    def max_column(self) -> int:
        cols = [t.column for t in self.mains]
        cols += [t.column_a for t in self.interactions]
        cols += [t.column_b for t in self.interactions]
        return max(cols)

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "seed": self.seed,
            "mains": [
                {"column": t.column, "power": t.power, "coefficient": t.coefficient}
                for t in self.mains
            ],
            "interactions": [
                {"column_a": t.column_a, "column_b": t.column_b, "coefficient": t.coefficient}
                for t in self.interactions
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MechanismSpec":
        return cls(
            mains=tuple(MainTerm(t["column"], t["power"], t["coefficient"]) for t in d["mains"]),
            interactions=tuple(
                InteractionTerm(t["column_a"], t["column_b"], t["coefficient"])
                for t in d["interactions"]
            ),
            intercept=d.get("intercept", INTERCEPT),
            seed=d.get("seed"),
        )


def save_mechanism(spec: MechanismSpec, path, extra: dict | None = None) -> None:
    payload = spec.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_mechanism(path) -> MechanismSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return MechanismSpec.from_dict(json.load(fh))


def generate_covariates(n: int, p: int, seed: int) -> np.ndarray:
    """iid standard-normal covariate matrix, deterministic given the seed."""
    if n < 1 or p < 1:
        raise DataError("n and p must be positive")
    return _rng(seed, _TAG_COVARIATES).standard_normal((n, p))


def sample_mechanism(p: int, seed: int) -> MechanismSpec:
    """Draw a treatment-assignment specification: 15 active mains (powered with
    probability 0.5, the power split evenly between 2 and 3), coefficient
    magnitudes 0.3/0.6/0.9 five apiece with random signs, and five two-way
    interactions each anchored on at least one active main."""
    if p < N_ACTIVE_MAIN:
        raise DataError(f"need at least {N_ACTIVE_MAIN} covariates, got {p}")
    rng = _rng(seed, _TAG_MECHANISM)
    active = np.sort(rng.choice(p, size=N_ACTIVE_MAIN, replace=False))
    powers = np.where(
        rng.random(N_ACTIVE_MAIN) < 0.5,
        1,
        np.where(rng.random(N_ACTIVE_MAIN) < 0.5, 2, 3),
    )
    group_of = rng.permutation(np.repeat(np.arange(3), N_ACTIVE_MAIN // 3))
    signs = rng.choice((-1.0, 1.0), size=N_ACTIVE_MAIN)
    mains = tuple(
        MainTerm(int(c), int(powers[i]), float(signs[i] * MAIN_MAGNITUDES[group_of[i]]))
        for i, c in enumerate(active)
    )
    pairs: set[frozenset] = set()
    interactions = []
    while len(interactions) < N_INTERACTIONS:
        a = int(active[rng.integers(N_ACTIVE_MAIN)])
        b = int(rng.integers(p))
        if b == a:
            continue
        key = frozenset((a, b))
        if key in pairs:
            continue
        pairs.add(key)
        sign = float(rng.choice((-1.0, 1.0)))
        interactions.append(InteractionTerm(a, b, sign * INTERACTION_MAGNITUDE))
    return MechanismSpec(
        mains=mains, interactions=tuple(interactions), intercept=INTERCEPT, seed=int(seed)
    )


def _standardize_term(values: np.ndarray) -> np.ndarray:
    sd = values.std(ddof=1)
    if sd == 0.0:
        return values - values.mean()
    return (values - values.mean()) / sd


def true_propensity(spec: MechanismSpec, x: np.ndarray) -> ScoreVector:
    """Assignment probabilities from the logit specification. Powered main
    terms are standardized to sample mean 0 and sd 1 before weighting; linear
    mains and interaction products enter raw."""
    x = np.asarray(x, dtype=np.float64)
    if spec.max_column() >= x.shape[1]:
        raise DataError("specification references a column beyond the matrix width")
    logit = np.full(x.shape[0], spec.intercept)
    for t in spec.mains:
        col = x[:, t.column]
        term = col if t.power == 1 else _standardize_term(col ** t.power)
        logit += t.coefficient * term
    for t in spec.interactions:
        logit += t.coefficient * x[:, t.column_a] * x[:, t.column_b]
    return ScoreVector(
        values=1.0 / (1.0 + np.exp(-logit)), designer_id="oracle", stage="true",
        model_kind="true",
    )


def assign_treatments(true_scores: ScoreVector | np.ndarray, seed: int) -> np.ndarray:
    """Independent Bernoulli draws at each subject's assignment probability."""
    v = true_scores.values if isinstance(true_scores, ScoreVector) else np.asarray(true_scores)
    draws = _rng(seed, _TAG_TREATMENT).random(v.shape[0])
    return (draws < v).astype(np.int8)


def make_dataset(x: np.ndarray, w: np.ndarray) -> Dataset:
    meta = tuple(ColumnMeta(f"x{j + 1}", CONTINUOUS) for j in range(x.shape[1]))
    return Dataset(covariates=x, treatment=w, covariate_meta=meta)


def make_partition(
    spec: MechanismSpec, p: int, m: int, setting: str, seed: int
) -> PartitionSpec:
    """Split columns 0..p-1 into m equal blocks. Under setting one every
    interaction's parents are co-assigned to a single block; under setting two
    the balanced partition is unconstrained."""
    if p % m != 0:
        raise DataError(f"p={p} not divisible into {m} equal blocks")
    size = p // m
    rng = _rng(seed, _TAG_PARTITION)
    if setting == SETTING_TWO:
        perm = rng.permutation(p)
        blocks = tuple(tuple(sorted(int(c) for c in perm[i * size:(i + 1) * size]))
                       for i in range(m))
        return PartitionSpec(blocks=blocks)
    if setting != SETTING_ONE:
        raise DataError(f"unknown setting {setting!r}")

    # union interaction parents into components that must stay together
    parent = list(range(p))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for t in spec.interactions:
        ra, rb = find(t.column_a), find(t.column_b)
        if ra != rb:
            parent[ra] = rb
    comp: dict[int, list[int]] = {}
    for c in range(p):
        comp.setdefault(find(c), []).append(c)
    groups = sorted(comp.values(), key=lambda g: (-len(g), g[0]))
    if groups and len(groups[0]) > size:
        raise DataError(
            f"interaction component of {len(groups[0])} columns exceeds block size {size}"
        )
    capacity = [size] * m
    blocks: list[list[int]] = [[] for _ in range(m)]
    multi = [g for g in groups if len(g) > 1]
    singles = [g[0] for g in groups if len(g) == 1]
    rng.shuffle(multi)
    for g in multi:
        fits = [b for b in range(m) if capacity[b] >= len(g)]
        if not fits:
            raise DataError("cannot co-assign interaction parents into equal blocks")
        b = int(fits[rng.integers(len(fits))])
        blocks[b].extend(g)
        capacity[b] -= len(g)
    singles = list(rng.permutation(singles))
    for b in range(m):
        while capacity[b] > 0:
            blocks[b].append(int(singles.pop()))
            capacity[b] -= 1
    return PartitionSpec(blocks=tuple(tuple(sorted(b)) for b in blocks))
