"""Synthetic benchmarks: data generator, constant baselines, budget sweeps,
and distribution-shift scenarios.

The generator samples a mixture of domains, each with its own instruct /
reasoning accuracy, log-normal cost-ratio distribution, and Gaussian feature
signature. Cost ratios are parameterized by their median so generated splits
can be calibrated to reported corpus statistics (e.g. medians 11.2 / 3.4 /
4.7 for the three reference subsets).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .core import ConstantPolicy, Dataset, Instance, Metrics, ValidationError, evaluate_policy
from .reweight import RobustConfig
from .trainer import TrainConfig, TrainingDivergenceError, train

LEARNABLE_METHODS = ("racer", "racer-r", "racer-c", "acer")
CONSTANT_METHODS = ("all-instruct", "all-reasoning", "random")
DEFAULT_BUDGETS = (2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0, 7.0, 10.0)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """One mixture component of a synthetic scenario.

    instruct_cost_median scales the domain's base (instruct-mode) cost:
    domains with longer prompts are costlier in both modes.
    """

    name: str
    weight: float
    p_instruct: float
    p_reasoning: float
    cost_ratio_median: float
    cost_ratio_sigma: float = 0.5
    feature_mean: tuple[float, ...] = (0.0,)
    feature_noise: float = 0.25
    instruct_cost_median: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_instruct <= 1.0 or not 0.0 <= self.p_reasoning <= 1.0:
            raise ValidationError(f"domain {self.name!r}: accuracies must lie in [0, 1]")
        if not self.cost_ratio_median > 1.0:
            raise ValidationError(f"domain {self.name!r}: cost-ratio median must exceed 1")
        if self.weight < 0:
            raise ValidationError(f"domain {self.name!r}: negative mixture weight")
        if not self.instruct_cost_median > 0:
            raise ValidationError(f"domain {self.name!r}: instruct cost median must be positive")
        object.__setattr__(self, "feature_mean", tuple(float(v) for v in self.feature_mean))


@dataclass(frozen=True)
class ScenarioConfig:
    """Mixture-of-domains generator configuration."""

    domains: tuple[DomainSpec, ...]
    n: int
    seed: int
    shift: Mapping[str, float] | None = None
    agreement: float = 0.0
    instruct_cost_sigma: float = 0.25

    def __post_init__(self):
        if not self.domains:
            raise ValidationError("scenario needs at least one domain")
        total = sum(d.weight for d in self.domains)
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"mixture weights must sum to 1, got {total}")
        dims = {len(d.feature_mean) for d in self.domains}
        if len(dims) != 1:
            raise ValidationError("all domains must share one feature dimension")
        if self.n < 1:
            raise ValidationError("n must be positive")
        if not 0.0 <= self.agreement <= 1.0:
            raise ValidationError("agreement must lie in [0, 1]")
        object.__setattr__(self, "domains", tuple(self.domains))

    def weights(self) -> np.ndarray:
        return np.array([d.weight for d in self.domains])

    def with_weights(self, mapping: Mapping[str, float]) -> "ScenarioConfig":
        """New scenario with reassigned mixture weights (must cover all domains)."""
        domains = tuple(replace(d, weight=float(mapping[d.name])) for d in self.domains)
        return replace(self, domains=domains, shift=None)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "agreement": self.agreement,
            "instruct_cost_sigma": self.instruct_cost_sigma,
            "shift": dict(self.shift) if self.shift else None,
            "domains": [
                {
                    "name": d.name,
                    "weight": d.weight,
                    "p_instruct": d.p_instruct,
                    "p_reasoning": d.p_reasoning,
                    "cost_ratio_median": d.cost_ratio_median,
                    "cost_ratio_sigma": d.cost_ratio_sigma,
                    "feature_mean": list(d.feature_mean),
                    "feature_noise": d.feature_noise,
                    "instruct_cost_median": d.instruct_cost_median,
                }
                for d in self.domains
            ],
        }


def scenario_from_dict(payload: dict) -> ScenarioConfig:
    domains = tuple(
        DomainSpec(
            name=d["name"],
            weight=d["weight"],
            p_instruct=d["p_instruct"],
            p_reasoning=d["p_reasoning"],
            cost_ratio_median=d["cost_ratio_median"],
            cost_ratio_sigma=d.get("cost_ratio_sigma", 0.5),
            feature_mean=tuple(d.get("feature_mean", (0.0,))),
            feature_noise=d.get("feature_noise", 0.25),
            instruct_cost_median=d.get("instruct_cost_median", 1.0),
        )
        for d in payload["domains"]
    )
    return ScenarioConfig(
        domains=domains,
        n=payload["n"],
        seed=payload.get("seed", 0),
        shift=payload.get("shift"),
        agreement=payload.get("agreement", 0.0),
        instruct_cost_sigma=payload.get("instruct_cost_sigma", 0.25),
    )


def load_scenario(path) -> ScenarioConfig:
    from .core import ParseError

    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from None
    try:
        return scenario_from_dict(payload)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed scenario ({exc!r})") from None


def save_scenario(config: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=1)
        fh.write("\n")


# Reference generator regimes. Cost-ratio medians follow the reported corpus
# statistics (11.2 / 3.4 / 4.7); accuracy endpoints follow the reported
# 1.7B-scale judge pair (70.04% instruct, 78.35% reasoning).
PRESET_SCENARIOS: dict[str, ScenarioConfig] = {
    "magpie-ultra": ScenarioConfig(
        domains=(DomainSpec("magpie-ultra", 1.0, 0.7004, 0.7835, 11.2,
                            feature_mean=(1.0, 0.0, 0.0, 0.5)),),
        n=10_000, seed=0,
    ),
    "wildguardmix": ScenarioConfig(
        domains=(DomainSpec("wildguardmix", 1.0, 0.7004, 0.7835, 3.4,
                            feature_mean=(0.0, 1.0, 0.0, -0.5)),),
        n=10_000, seed=0,
    ),
    "offsetbias": ScenarioConfig(
        domains=(DomainSpec("offsetbias", 1.0, 0.7004, 0.7835, 4.7,
                            feature_mean=(0.0, 0.0, 1.0, 0.0)),),
        n=10_000, seed=0,
    ),
    # Three-domain separable mixture: reasoning is decisive on "math",
    # neutral on "chat", harmful on "safety". Used by the frontier and
    # budget-control benchmarks.
    "separable3": ScenarioConfig(
        domains=(
            DomainSpec("math", 0.35, 0.35, 0.92, 3.0, 0.3,
                       (1.5, -0.5, 0.0, 0.6), 0.45),
            DomainSpec("chat", 0.40, 0.80, 0.80, 4.5, 0.3,
                       (-1.0, 1.0, 0.4, -0.2), 0.45),
            DomainSpec("safety", 0.25, 0.85, 0.72, 5.5, 0.3,
                       (0.0, -1.2, -1.0, 0.3), 0.45),
        ),
        n=2000, seed=100, instruct_cost_sigma=0.15,
    ),
    # Upward cost shift: training is dominated by a cheap domain with a
    # marginal reasoning gain; the expensive minority domain is the best
    # accuracy-per-cost deal, so a non-robust router spends there and
    # blows the budget when the mixture inverts.
    "shift-up": ScenarioConfig(
        domains=(
            DomainSpec("light", 0.8, 0.80, 0.82, 1.6, 0.3,
                       (1.2, 0.3, -0.5), 0.45, 1.0),
            DomainSpec("heavy", 0.2, 0.35, 0.95, 6.0, 0.3,
                       (-1.0, 0.8, 0.9), 0.45, 1.5),
        ),
        n=1500, seed=500, instruct_cost_sigma=0.15,
    ),
    # Downward cost shift: the cheap minority domain is reward-poor (a
    # worse raw deal, so a non-robust router skips it) but has the lowest
    # expected reward, so the worst-case reward tilt funds it; the OOD
    # mixture concentrates exactly there.
    "shift-down": ScenarioConfig(
        domains=(
            DomainSpec("light", 0.2, 0.20, 0.38, 2.2, 0.3,
                       (0.9, 0.2, -0.4), 0.9, 1.0),
            DomainSpec("heavy", 0.8, 0.50, 0.97, 3.2, 0.3,
                       (-0.6, 0.5, 0.6), 0.9, 1.2),
        ),
        n=1500, seed=600, agreement=1.0, instruct_cost_sigma=0.15,
    ),
}


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _gen_instances(config: ScenarioConfig, weights: np.ndarray, seed: int,
                   n: int) -> list[Instance]:
    rng = np.random.default_rng(seed)
    k = len(config.domains)
    dom_idx = rng.choice(k, size=n, p=weights / weights.sum())
    p0 = np.array([d.p_instruct for d in config.domains])[dom_idx]
    p1 = np.array([d.p_reasoning for d in config.domains])[dom_idx]
    if config.agreement > 0.0:
        shared = rng.random(n)
        u0, u1 = rng.random(n), rng.random(n)
        tie = rng.random(n) < config.agreement
        u0 = np.where(tie, shared, u0)
        u1 = np.where(tie, shared, u1)
    else:
        u0, u1 = rng.random(n), rng.random(n)
    correct0 = (u0 < p0).astype(np.int64)
    correct1 = (u1 < p1).astype(np.int64)

    base_medians = np.array([d.instruct_cost_median for d in config.domains])[dom_idx]
    cost0 = base_medians * np.exp(rng.normal(0.0, config.instruct_cost_sigma, size=n))
    medians = np.array([d.cost_ratio_median for d in config.domains])[dom_idx]
    sigmas = np.array([d.cost_ratio_sigma for d in config.domains])[dom_idx]
    ratio = medians * np.exp(sigmas * rng.standard_normal(n))
    cost1 = cost0 * ratio

    means = np.array([d.feature_mean for d in config.domains])[dom_idx]
    noise = np.array([d.feature_noise for d in config.domains])[dom_idx]
    features = means + noise[:, None] * rng.standard_normal(means.shape)

    return [
        Instance(
            id=f"syn-{seed}-{i:06d}",
            features=features[i],
            correct=(int(correct0[i]), int(correct1[i])),
            cost_raw=(float(cost0[i]), float(cost1[i])),
            tag=config.domains[dom_idx[i]].name,
        )
        for i in range(n)
    ]


def gen_synthetic(config: ScenarioConfig, apply_shift: bool = False) -> Dataset:
    """Sample a normalized dataset from the scenario mixture.

    Deterministic in config.seed. With apply_shift=True the scenario's
    shift map replaces the mixture weights.
    """
    cfg = config.with_weights(config.shift) if (apply_shift and config.shift) else config
    instances = _gen_instances(cfg, cfg.weights(), cfg.seed, cfg.n)
    return Dataset(instances)


def shift_scenarios(base: ScenarioConfig, concentration: float = 0.8,
                    n_test: int | None = None):
    """Training split plus OOD splits shifted toward the cheap / expensive domain.

    The OOD splits put `concentration` mass on the domain with the lowest
    (resp. highest) cost-ratio median, scale the remaining domains
    proportionally, and reuse the training normalization constant so the
    budget means the same absolute compute on every split.
    """
    if len(base.domains) < 2:
        raise ValidationError("shift scenarios need at least two domains")
    medians = [d.cost_ratio_median for d in base.domains]
    if len(set(medians)) < 2:
        raise ValidationError("shift scenarios need distinct cost-ratio medians")
    if not 0.0 < concentration < 1.0:
        raise ValidationError("concentration must lie in (0, 1)")
    train_split = gen_synthetic(base)
    n_test = base.n if n_test is None else n_test

    def shifted(target: int, seed: int) -> Dataset:
        weights = np.array([d.weight for d in base.domains])
        others = weights.sum() - weights[target]
        new = weights * (1.0 - concentration) / others if others > 0 else weights * 0.0
        new[target] = concentration
        instances = _gen_instances(base, new, seed, n_test)
        return Dataset(instances, instruct_cost_mean=train_split.instruct_cost_mean)

    low = int(np.argmin(medians))
    high = int(np.argmax(medians))
    ood_low = shifted(low, base.seed + 1)
    ood_high = shifted(high, base.seed + 2)
    return train_split, ood_low, ood_high


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def baseline_policy(kind: str, p: float | None = None) -> ConstantPolicy:
    """Constant baselines: never reason, always reason, or reason at rate p."""
    if kind == "all-instruct":
        return ConstantPolicy(0.0)
    if kind == "all-reasoning":
        return ConstantPolicy(1.0)
    if kind == "random":
        if p is None or not 0.0 <= p <= 1.0:
            raise ValidationError(f"random baseline needs p in [0, 1], got {p}")
        return ConstantPolicy(float(p))
    raise ValidationError(f"unknown baseline {kind!r}")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    method: str
    budget: float
    seed: int
    split: str
    metrics: Metrics


@dataclass(frozen=True)
class SweepFailure:
    method: str
    budget: float
    seed: int
    error: str


@dataclass(frozen=True)
class AggregateRow:
    method: str
    budget: float
    split: str
    n: int
    accuracy_mean: float
    accuracy_std: float
    cost_mean: float
    cost_std: float
    reasoning_mean: float
    reasoning_std: float


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[SweepCell, ...]
    failures: tuple[SweepFailure, ...]

    def aggregate(self) -> list[AggregateRow]:
        groups: dict[tuple[str, float, str], list[Metrics]] = {}
        for cell in self.cells:
            groups.setdefault((cell.method, cell.budget, cell.split), []).append(cell.metrics)
        rows = []
        for (method, budget, split), ms in sorted(groups.items()):
            acc = np.array([m.accuracy for m in ms])
            cost = np.array([m.realized_cost for m in ms])
            rf = np.array([m.reasoning_fraction for m in ms])
            rows.append(AggregateRow(
                method, budget, split, len(ms),
                float(acc.mean()), float(acc.std()),
                float(cost.mean()), float(cost.std()),
                float(rf.mean()), float(rf.std()),
            ))
        return rows

    def to_csv(self, path) -> None:
        cells = sorted(self.cells, key=lambda c: (c.method, c.budget, c.seed, c.split))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method,budget,seed,split,accuracy,cost,reasoning_frac\n")
            for c in cells:
                m = c.metrics
                fh.write(f"{c.method},{c.budget!r},{c.seed},{c.split},"
                         f"{m.accuracy!r},{m.realized_cost!r},{m.reasoning_fraction!r}\n")

    def aggregate_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method,budget,split,n,accuracy_mean,accuracy_std,"
                     "cost_mean,cost_std,reasoning_mean,reasoning_std\n")
            for r in self.aggregate():
                fh.write(f"{r.method},{r.budget!r},{r.split},{r.n},"
                         f"{r.accuracy_mean!r},{r.accuracy_std!r},"
                         f"{r.cost_mean!r},{r.cost_std!r},"
                         f"{r.reasoning_mean!r},{r.reasoning_std!r}\n")


def _mode_for_method(method: str) -> str:
    return {"racer": "racer", "racer-r": "racer-r",
            "racer-c": "racer-c", "acer": "acer"}[method]


def _run_sweep_cell(args):
    """One (budget, seed) unit: train learnable methods, evaluate everything."""
    train_data, splits, budget, seed, methods, template = args
    cells: list[SweepCell] = []
    failures: list[SweepFailure] = []
    trained: dict[str, object] = {}
    for method in methods:
        if method not in LEARNABLE_METHODS:
            continue
        config = replace(
            template, budget=float(budget), seed=int(seed),
            robust=replace(template.robust, mode=_mode_for_method(method)),
        )
        try:
            trained[method] = train(train_data, config).best.policy
        except (TrainingDivergenceError, ValidationError, ValueError) as exc:
            failures.append(SweepFailure(method, budget, seed, str(exc)))
    for method in methods:
        if method in LEARNABLE_METHODS:
            if method not in trained:
                continue
            policy = trained[method]
            for split_name, split in splits.items():
                cells.append(SweepCell(method, budget, seed, split_name,
                                       evaluate_policy(policy, split, mode="expected")))
        elif method == "random":
            if "racer" not in trained:
                failures.append(SweepFailure(method, budget, seed,
                                             "random baseline needs a paired racer run"))
                continue
            for split_name, split in splits.items():
                rate = evaluate_policy(trained["racer"], split, mode="expected").reasoning_fraction
                policy = baseline_policy("random", rate)
                cells.append(SweepCell(method, budget, seed, split_name,
                                       evaluate_policy(policy, split, mode="expected")))
        else:
            policy = baseline_policy(method)
            for split_name, split in splits.items():
                cells.append(SweepCell(method, budget, seed, split_name,
                                       evaluate_policy(policy, split, mode="expected")))
    return cells, failures


def run_sweep(train_data: Dataset, tests: Mapping[str, Dataset],
              budgets: Sequence[float], methods: Sequence[str], repeats: int,
              base_seed: int, template: TrainConfig | None = None,
              workers: int = 1) -> SweepResult:
    """Train and evaluate every (budget, seed, method) cell.

    Learnable methods share the template hyperparameters and differ only in
    ablation mode; each random-baseline evaluation is paired to the racer
    run of the same (budget, seed) via its per-split reasoning rate.
    Cells are independent; failures are recorded and the sweep continues.
    """
    if not budgets or not methods:
        raise ValidationError("budgets and methods must be non-empty")
    for method in methods:
        if method not in LEARNABLE_METHODS + CONSTANT_METHODS:
            raise ValidationError(f"unknown method {method!r}")
    if template is None:
        template = TrainConfig(budget=float(budgets[0]),
                               robust=RobustConfig(tau_reward=1.0, mode="racer"))
    splits = {"train": train_data, **dict(tests)}
    units = [
        (train_data, splits, float(budget), base_seed + rep, tuple(methods), template)
        for budget in budgets
        for rep in range(repeats)
    ]
    cells: list[SweepCell] = []
    failures: list[SweepFailure] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_cell, units))
    else:
        results = [_run_sweep_cell(unit) for unit in units]
    for got_cells, got_failures in results:
        cells.extend(got_cells)
        failures.extend(got_failures)
    cells.sort(key=lambda c: (c.method, c.budget, c.seed, c.split))
    failures.sort(key=lambda f: (f.method, f.budget, f.seed))
    return SweepResult(tuple(cells), tuple(failures))
