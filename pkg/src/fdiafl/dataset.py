"""Labeled measurement corpus: generation, splitting, normalization, serialization.

Scenarios draw per-bus load factors uniformly from [1-variation, 1+variation],
solve the DC power flow for the true angles, and measurements add Gaussian
noise (and optionally an attack vector) on top of H v. Attacked and normal
samples are balanced by construction. Files are CSV with an exact header
(f1..fI, l1..lI, attacked) plus a key=value metadata sidecar; features are
persisted raw and standardized downstream with the scaler recorded in the
sidecar.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from .grid import BusSystem, HMatrix, PowerProfile, build_b_reduced
from .rng import substream

GEN_BLOCK = 1024  # samples per RNG block; independent of thread count


class DatasetFormatError(ValueError):
    """Raised for malformed corpus files or metadata mismatches."""


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    labels: np.ndarray
    scenario_id: int
    attacked: bool


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    val_subsets: int
    attack_fraction: float

    def __post_init__(self):
        if self.n_train < 0 or self.n_val < 0 or self.val_subsets < 1:
            raise ValueError("sample counts must be non-negative, subsets >= 1")
        if self.n_val % self.val_subsets != 0:
            raise ValueError(
                f"n_val={self.n_val} not divisible by val_subsets={self.val_subsets}"
            )
        if not 0.0 <= self.attack_fraction <= 1.0:
            raise ValueError(f"attack_fraction must be in [0,1], got {self.attack_fraction}")


@dataclass
class Dataset:
    features: np.ndarray  # N x I float64
    labels: np.ndarray  # N x I uint8
    attacked: np.ndarray  # N uint8
    scenario_ids: np.ndarray  # N int64
    scaler: Scaler | None = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(
            features=self.features[i],
            labels=self.labels[i],
            scenario_id=int(self.scenario_ids[i]),
            attacked=bool(self.attacked[i]),
        )

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            attacked=self.attacked[idx],
            scenario_ids=self.scenario_ids[idx],
            scaler=self.scaler,
        )


@dataclass(frozen=True)
class AttackRecipe:
    """How attacked samples are perturbed when building a corpus."""

    magnitude: float = 0.2
    sparsity_choices: tuple[int, ...] = (1, 2, 3)
    label_eps: float = attack_mod.LABEL_EPS
    unstructured_fraction: float = 0.0  # fraction of attacked samples left unstructured
    gross_sigma_mult: float = 50.0


class ScenarioGenerator:
    """DC power-flow scenarios around a base power profile."""

    def __init__(self, system: BusSystem, profile: PowerProfile, variation: float):
        if not 0.0 <= variation < 1.0:
            raise ValueError(f"variation must be in [0,1), got {variation}")
        self.system = system
        self.profile = profile
        self.variation = variation
        b_red = build_b_reduced(system)
        self._b_inv = np.linalg.inv(b_red)
        self._state_idx = np.array([b - 1 for b in system.state_buses()])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """True non-slack angles for one load draw (slack balances)."""
        return self.sample_with_injection(rng)[0]

    def sample_with_injection(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """(angles, non-slack injection vector) for one load draw."""
        factors = rng.uniform(1.0 - self.variation, 1.0 + self.variation, self.system.n_bus)
        injection = (self.profile.gen - factors * self.profile.load)[self._state_idx]
        return self._b_inv @ injection, injection


def gen_scenario(
    rng: np.random.Generator, system: BusSystem, profile: PowerProfile, variation: float
) -> np.ndarray:
    return ScenarioGenerator(system, profile, variation).sample(rng)


def gen_sample(
    rng: np.random.Generator,
    h: HMatrix,
    v_true: np.ndarray,
    sigma: float,
    attack: np.ndarray | None = None,
    scenario_id: int = 0,
    label_eps: float = attack_mod.LABEL_EPS,
) -> Sample:
    """One measurement vector: H v + noise (+ attack), with per-meter labels."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {sigma}")
    features = h.values @ v_true
    if sigma > 0:
        features = features + rng.normal(0.0, sigma, h.n_measurements)
    if attack is None:
        labels = np.zeros(h.n_measurements, dtype=np.uint8)
    else:
        features = features + attack
        labels = attack_mod.label_of(attack, label_eps)
    return Sample(
        features=features,
        labels=labels,
        scenario_id=scenario_id,
        attacked=bool(labels.any()),
    )


def _attack_layout(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    """Exactly round(n * fraction) attacked flags in shuffled order."""
    n_attacked = int(round(n * fraction))
    flags = np.zeros(n, dtype=np.uint8)
    flags[:n_attacked] = 1
    rng.shuffle(flags)
    return flags


def _generate_block(
    seed: int,
    block_idx: int,
    flags: np.ndarray,
    ids: np.ndarray,
    scen: ScenarioGenerator,
    h: HMatrix,
    sigma: float,
    recipe: AttackRecipe,
) -> tuple[np.ndarray, np.ndarray]:
    rng = substream(seed, "corpus", block_idx)
    feats = np.empty((len(flags), h.n_measurements))
    labels = np.empty((len(flags), h.n_measurements), dtype=np.uint8)
    for i, flagged in enumerate(flags):
        vec = None
        if flagged:
            if recipe.unstructured_fraction > 0 and rng.random() < recipe.unstructured_fraction:
                vec = attack_mod.make_unstructured(
                    rng, h.n_measurements, recipe.gross_sigma_mult, sigma
                )
            else:
                sparsity = int(rng.choice(recipe.sparsity_choices))
                err = attack_mod.sample_state_error(rng, h.n_state, sparsity, recipe.magnitude)
                vec = attack_mod.make_stealthy(h, err)
        s = gen_sample(
            rng, h, scen.sample(rng), sigma, vec,
            scenario_id=int(ids[i]), label_eps=recipe.label_eps,
        )
        feats[i] = s.features
        labels[i] = s.labels
    return feats, labels


def _generate(
    seed: int,
    start_block: int,
    flags: np.ndarray,
    id_start: int,
    scen: ScenarioGenerator,
    h: HMatrix,
    sigma: float,
    recipe: AttackRecipe,
    threads: int,
) -> tuple[Dataset, int]:
    n = len(flags)
    ids = np.arange(id_start, id_start + n, dtype=np.int64)
    blocks = [
        (start_block + bi, slice(off, min(off + GEN_BLOCK, n)))
        for bi, off in enumerate(range(0, n, GEN_BLOCK))
    ]
    feats = np.empty((n, h.n_measurements))
    labels = np.empty((n, h.n_measurements), dtype=np.uint8)

    def run(block):
        bidx, sl = block
        return sl, _generate_block(seed, bidx, flags[sl], ids[sl], scen, h, sigma, recipe)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    for sl, (f, l) in results:
        feats[sl] = f
        labels[sl] = l
    ds = Dataset(
        features=feats,
        labels=labels,
        attacked=labels.any(axis=1).astype(np.uint8),
        scenario_ids=ids,
    )
    return ds, start_block + len(blocks)


def build_corpus(
    seed: int,
    spec: SplitSpec,
    system: BusSystem,
    h: HMatrix,
    profile: PowerProfile,
    sigma: float = 0.2,
    variation: float = 0.2,
    recipe: AttackRecipe = AttackRecipe(),
    threads: int = 1,
) -> tuple[Dataset, list[Dataset]]:
    """Training set plus equal validation subsets, all freshly generated.

    The attacked fraction is exact by construction in the training set and in
    every validation subset. Sample identities (scenario ids) are globally
    unique, so train and validation are disjoint by construction.
    """
    scen = ScenarioGenerator(system, profile, variation)
    layout_rng = substream(seed, "corpus-layout")
    train_flags = _attack_layout(layout_rng, spec.n_train, spec.attack_fraction)
    per_subset = spec.n_val // spec.val_subsets
    subset_flags = [
        _attack_layout(layout_rng, per_subset, spec.attack_fraction)
        for _ in range(spec.val_subsets)
    ]
    train, next_block = _generate(
        seed, 0, train_flags, 0, scen, h, sigma, recipe, threads
    )
    val_subsets = []
    next_id = spec.n_train
    for flags in subset_flags:
        ds, next_block = _generate(
            seed, next_block, flags, next_id, scen, h, sigma, recipe, threads
        )
        val_subsets.append(ds)
        next_id += per_subset
    return train, val_subsets


def fit_scaler(train: Dataset, std_floor: float = 1e-8) -> Scaler:
    """Per-feature mean/std from the training split only."""
    if train.n == 0:
        raise ValueError("cannot fit a scaler on an empty dataset")
    mean = train.features.mean(axis=0)
    std = np.maximum(train.features.std(axis=0), std_floor)
    return Scaler(mean=mean, std=std)


def apply_scaler(ds: Dataset, scaler: Scaler) -> Dataset:
    return replace(ds, features=scaler.transform(ds.features), scaler=scaler)


def grid_fingerprint(h: HMatrix, profile: PowerProfile) -> str:
    """Stable hash of the measurement model the corpus was generated from."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(h.values).tobytes())
    digest.update(profile.load.tobytes())
    digest.update(profile.gen.tobytes())
    return digest.hexdigest()


def format_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_dataset(ds: Dataset, path, meta: dict | None = None) -> None:
    """Write <path> CSV and a <path stem>.meta sidecar; exact round trip."""
    path = Path(path)
    i = ds.n_features
    header = (
        [f"f{k}" for k in range(1, i + 1)]
        + [f"l{k}" for k in range(1, i + 1)]
        + ["attacked"]
    )
    lines = [",".join(header)]
    for r in range(ds.n):
        row = [repr(float(v)) for v in ds.features[r]]
        row += [str(int(v)) for v in ds.labels[r]]
        row.append(str(int(ds.attacked[r])))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")

    meta = dict(meta or {})
    meta.setdefault("format", "1")
    meta["n"] = str(ds.n)
    meta["n_features"] = str(i)
    meta["id_offset"] = str(int(ds.scenario_ids[0]) if ds.n else 0)
    if ds.scaler is not None:
        meta["scaler_mean"] = format_floats(ds.scaler.mean)
        meta["scaler_std"] = format_floats(ds.scaler.std)
    meta_lines = [f"{k}={v}" for k, v in meta.items()]
    path.with_suffix(".meta").write_text("\n".join(meta_lines) + "\n")


def load_metadata(path) -> dict:
    path = Path(path)
    meta = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetFormatError(f"{path}: malformed metadata line {raw!r}")
        key, value = line.split("=", 1)
        meta[key] = value
    return meta


def parse_scaler(meta: dict) -> Scaler | None:
    if "scaler_mean" not in meta or "scaler_std" not in meta:
        return None
    mean = np.array([float(v) for v in meta["scaler_mean"].split(",")])
    std = np.array([float(v) for v in meta["scaler_std"].split(",")])
    return Scaler(mean=mean, std=std)


def load_dataset(path) -> tuple[Dataset, dict]:
    path = Path(path)
    meta = load_metadata(path.with_suffix(".meta"))
    i = int(meta["n_features"])
    expected_header = (
        [f"f{k}" for k in range(1, i + 1)]
        + [f"l{k}" for k in range(1, i + 1)]
        + ["attacked"]
    )
    lines = path.read_text().splitlines()
    if not lines or lines[0].split(",") != expected_header:
        raise DatasetFormatError(
            f"{path}: header does not match the {i}-feature corpus schema"
        )
    n = len(lines) - 1
    if n != int(meta["n"]):
        raise DatasetFormatError(
            f"{path}: {n} rows but metadata declares n={meta['n']}"
        )
    features = np.empty((n, i))
    labels = np.empty((n, i), dtype=np.uint8)
    attacked = np.empty(n, dtype=np.uint8)
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != 2 * i + 1:
            raise DatasetFormatError(f"{path}: row {r + 2} has {len(cells)} cells")
        features[r] = [float(c) for c in cells[:i]]
        labels[r] = [int(c) for c in cells[i : 2 * i]]
        attacked[r] = int(cells[2 * i])
    id_offset = int(meta.get("id_offset", "0"))
    ds = Dataset(
        features=features,
        labels=labels,
        attacked=attacked,
        scenario_ids=np.arange(id_offset, id_offset + n, dtype=np.int64),
        scaler=parse_scaler(meta),
    )
    return ds, meta
