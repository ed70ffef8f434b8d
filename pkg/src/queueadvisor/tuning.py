"""Hyperparameter fitting for the estimators.

Three routes: a genetic algorithm over (k, kernel width, window size,
feature weights), a cheap correlation-based weighting with a small
deterministic grid for the remaining knobs, and exhaustive best-subset
selection over the feature pool.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .estimator import EstimatorParams
from .features import FeatureSchema, FeatureVector

Example = tuple[FeatureVector, float]

DEFAULT_K_GRID = (8, 16, 32)
DEFAULT_OMEGA_GRID = (0.25, 0.5, 1.0, 2.0)


class FitnessEvaluator:
    """Scores EstimatorParams by validation RMSE against a training window.

    The knowledge base is rebuilt per call from the most recent
    ``window_size`` training examples; every validation example is then
    predicted without further insertions. Train/validate matrices are
    prepared once so repeated calls (GA generations, subset sweeps) stay
    cheap.
    """

    def __init__(self, train: Sequence[Example], validate: Sequence[Example],
                 schema: FeatureSchema):
        if not train:
            raise ValueError("training set must be non-empty")
        if not validate:
            raise ValueError("validation set must be non-empty")
        self.schema = schema
        self.n_train = len(train)
        self._numeric = schema.numeric
        self._categorical = schema.categorical

        def matrices(examples, tokens, intern):
            num = np.full((len(examples), len(self._numeric)), np.nan)
            cat = np.full((len(examples), len(self._categorical)), -1, dtype=np.int64)
            labels = np.empty(len(examples))
            for i, (fv, label) in enumerate(examples):
                labels[i] = float(label)
                for j, name in enumerate(self._numeric):
                    v = fv.get(name)
                    if v is not None:
                        num[i, j] = float(v)
                for j, name in enumerate(self._categorical):
                    v = fv.get(name)
                    if v is None:
                        continue
                    tid = tokens[j].get(v)
                    if tid is None:
                        if intern:
                            tid = len(tokens[j])
                            tokens[j][v] = tid
                        else:
                            tid = -2  # unseen query token differs from all stored
                    cat[i, j] = tid
            return num, cat, labels

        tokens: list[dict] = [dict() for _ in self._categorical]
        self._train_num, self._train_cat, self._train_labels = matrices(train, tokens, True)
        self._val_num, self._val_cat, self._val_labels = matrices(validate, tokens, False)

    def _window(self, window_size: int) -> slice:
        w = min(window_size, self.n_train)
        return slice(self.n_train - w, self.n_train)

    def _distance_sq(self, weights: Mapping[str, float], rows: slice) -> np.ndarray:
        """(n_validate, window) matrix of squared weighted distances."""
        tn = self._train_num[rows]
        d2 = np.zeros((self._val_num.shape[0], tn.shape[0]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
            mins = np.nanmin(tn, axis=0)
            maxs = np.nanmax(tn, axis=0)
        for j, name in enumerate(self._numeric):
            w = weights.get(name, 0.0)
            rng = maxs[j] - mins[j]
            if w == 0.0 or not rng > 0:
                continue
            diff = (tn[None, :, j] - self._val_num[:, None, j]) / rng
            d2 += np.nan_to_num(np.square(w * diff), nan=0.0)
        tc = self._train_cat[rows]
        for j, name in enumerate(self._categorical):
            w = weights.get(name, 0.0)
            if w == 0.0:
                continue
            unequal = (
                (tc[None, :, j] != self._val_cat[:, None, j])
                & (tc[None, :, j] != -1)
                & (self._val_cat[:, None, j] != -1)
            )
            d2 += (w * w) * unequal
        return d2

    def rmse(self, params: EstimatorParams) -> float:
        rows = self._window(params.window_size)
        d2 = self._distance_sq(params.feature_weights, rows)
        estimates = _batch_estimates(
            d2, self._train_labels[rows], min(params.k, d2.shape[1]), params.omega
        )
        return float(np.sqrt(np.mean(np.square(estimates - self._val_labels))))

    __call__ = rmse


def _batch_estimates(d2: np.ndarray, labels: np.ndarray, k: int, omega: float) -> np.ndarray:
    """Row-wise k-NN kernel estimates from a squared-distance matrix.

    Ties at the k-th distance prefer the most recent training row, matching
    the online predictor: a stable sort over reversed rows realizes the
    (distance, recency) ordering without per-row Python work.
    """
    n = d2.shape[1]
    rev = np.argsort(d2[:, ::-1], axis=1, kind="stable")[:, :k]
    idx = n - 1 - rev
    dk2 = np.take_along_axis(d2, idx, axis=1)
    lk = labels[idx]
    u = dk2 / (omega * omega)
    e = np.exp(u.min(axis=1, keepdims=True) - u)
    v = e / e.sum(axis=1, keepdims=True)
    estimates = np.einsum("ij,ij->i", v, lk)
    equal = lk.min(axis=1) == lk.max(axis=1)
    return np.where(equal, lk[:, 0], estimates)


def fitness(params: EstimatorParams, train: Sequence[Example],
            validate: Sequence[Example], schema: FeatureSchema) -> float:
    """Validation RMSE (seconds) of ``params`` trained on ``train``."""
    return FitnessEvaluator(train, validate, schema)(params)


# -- correlation weights ----------------------------------------------------


def _pearson_magnitude(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 2:
        return 0.0
    xd = x - x.mean()
    yd = y - y.mean()
    sx = float(np.sqrt(np.dot(xd, xd)))
    sy = float(np.sqrt(np.dot(yd, yd)))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return abs(float(np.dot(xd, yd)) / (sx * sy))


def _correlation_ratio(labels_by_group: dict, labels: np.ndarray) -> float:
    if labels.size < 2:
        return 0.0
    grand = labels.mean()
    ss_total = float(np.square(labels - grand).sum())
    if ss_total == 0.0:
        return 0.0
    ss_between = 0.0
    for group_labels in labels_by_group.values():
        arr = np.asarray(group_labels)
        ss_between += arr.size * (arr.mean() - grand) ** 2
    return math.sqrt(min(ss_between / ss_total, 1.0))


def correlation_weights(train: Sequence[Example], schema: FeatureSchema) -> dict[str, float]:
    """Per-feature weight = strength of association with the label.

    Numeric features use |Pearson correlation|; categorical features use the
    correlation ratio (the square root of the label-variance share explained
    by the grouping), which lives on the same [0, 1] scale. Constant or
    all-missing features weigh 0. No rescaling is applied.
    """
    if len(train) < 2:
        raise ValueError("need at least two training examples")
    weights: dict[str, float] = {}
    for name in schema.active:
        pairs = [
            (fv.get(name), float(label))
            for fv, label in train
            if fv.get(name) is not None
        ]
        if len(pairs) < 2:
            weights[name] = 0.0
            continue
        labels = np.array([lbl for _, lbl in pairs])
        if name in schema.categorical:
            by_group: dict[object, list[float]] = {}
            for value, lbl in pairs:
                by_group.setdefault(value, []).append(lbl)
            weights[name] = _correlation_ratio(by_group, labels)
        else:
            values = np.array([float(v) for v, _ in pairs])
            weights[name] = _pearson_magnitude(values, labels)
    return weights


@dataclass(frozen=True)
class CorrelationTuneResult:
    params: EstimatorParams
    rmse: float
    grid_trace: tuple[tuple[int, float, float], ...]  # (k, omega, rmse)


def tune_correlation(
    train: Sequence[Example],
    validate: Sequence[Example],
    schema: FeatureSchema,
    *,
    k_grid: Sequence[int] = DEFAULT_K_GRID,
    omega_grid: Sequence[float] = DEFAULT_OMEGA_GRID,
    window_size: int | None = None,
) -> CorrelationTuneResult:
    """Correlation weights plus a small deterministic grid over k and omega.

    The weights come straight from feature-label association; only the two
    scalar knobs the correlation method leaves open are picked, by validation
    RMSE over a fixed grid. The window spans the whole training set unless
    narrowed.
    """
    weights = correlation_weights(train, schema)
    if not any(w > 0 for w in weights.values()):
        # degenerate association (e.g. constant labels): fall back to uniform
        weights = {name: 1.0 for name in schema.active}
    evaluator = FitnessEvaluator(train, validate, schema)
    window = min(window_size or len(train), len(train))
    best: tuple[float, EstimatorParams] | None = None
    trace = []
    for omega in omega_grid:
        for k in k_grid:
            params = EstimatorParams(
                k=min(k, window), omega=omega, window_size=window, feature_weights=weights
            )
            score = evaluator(params)
            trace.append((params.k, omega, score))
            if best is None or score < best[0]:
                best = (score, params)
    assert best is not None
    return CorrelationTuneResult(best[1], best[0], tuple(trace))


# -- genetic algorithm ------------------------------------------------------


@dataclass(frozen=True)
class GAConfig:
    population: int = 50
    generations: int = 100
    crossover_prob: float = 0.8
    mutation_prob: float = 0.1
    elitism_frac: float = 0.05
    k_bounds: tuple[int, int] = (6, 33)
    omega_bounds: tuple[float, float] = (0.01, 5.0)
    window_min: int = 100


@dataclass(frozen=True)
class Chromosome:
    """[k, omega, window, per-feature weights]; bounds enforced on mutation."""

    k: int
    omega: float
    window: int
    weights: tuple[float, ...]


@dataclass(frozen=True)
class GAResult:
    params: EstimatorParams
    rmse: float
    initial_best: float
    history: tuple[tuple[int, float, float], ...]  # (generation, best, mean)


def _decode(chromosome: Chromosome, schema: FeatureSchema) -> EstimatorParams | None:
    if not any(w > 0 for w in chromosome.weights):
        return None
    return EstimatorParams(
        k=chromosome.k,
        omega=chromosome.omega,
        window_size=max(chromosome.window, chromosome.k),
        feature_weights=dict(zip(schema.active, chromosome.weights)),
    )


def ga_optimize(
    train: Sequence[Example],
    validate: Sequence[Example],
    schema: FeatureSchema,
    seed: int,
    config: GAConfig = GAConfig(),
    initial_population: Sequence[Chromosome] | None = None,
) -> GAResult:
    """Generational GA over estimator hyperparameters, seeded and reproducible.

    Tournament selection (size 2), uniform per-gene crossover, per-gene
    mutation (Gaussian for reals, re-draw for integers, clipped to bounds),
    and elitism keeping ceil(elitism_frac * population) individuals, so the
    best fitness never worsens across generations.
    """
    rng = np.random.default_rng(seed)
    evaluator = FitnessEvaluator(train, validate, schema)
    n_genes = 3 + len(schema.active)
    k_lo, k_hi = config.k_bounds
    w_lo, w_hi = min(config.window_min, len(train)), len(train)
    o_lo, o_hi = config.omega_bounds
    o_sigma = 0.1 * (o_hi - o_lo)

    def random_chromosome() -> Chromosome:
        return Chromosome(
            k=int(rng.integers(k_lo, k_hi + 1)),
            omega=float(rng.uniform(o_lo, o_hi)),
            window=int(rng.integers(w_lo, w_hi + 1)),
            weights=tuple(float(w) for w in rng.uniform(0.0, 1.0, len(schema.active))),
        )

    def mutate(c: Chromosome) -> Chromosome:
        k, omega, window = c.k, c.omega, c.window
        weights = list(c.weights)
        if rng.random() < config.mutation_prob:
            k = int(rng.integers(k_lo, k_hi + 1))
        if rng.random() < config.mutation_prob:
            omega = float(np.clip(omega + rng.normal(0.0, o_sigma), o_lo, o_hi))
        if rng.random() < config.mutation_prob:
            window = int(rng.integers(w_lo, w_hi + 1))
        for i in range(len(weights)):
            if rng.random() < config.mutation_prob:
                weights[i] = float(np.clip(weights[i] + rng.normal(0.0, 0.1), 0.0, 1.0))
        return Chromosome(k, omega, window, tuple(weights))

    def crossover(a: Chromosome, b: Chromosome) -> tuple[Chromosome, Chromosome]:
        ga, gb = list(_genes(a)), list(_genes(b))
        mask = rng.random(n_genes) < 0.5
        for i, swap in enumerate(mask):
            if swap:
                ga[i], gb[i] = gb[i], ga[i]
        return _from_genes(ga), _from_genes(gb)

    def _genes(c: Chromosome) -> list:
        return [c.k, c.omega, c.window, *c.weights]

    def _from_genes(genes: list) -> Chromosome:
        return Chromosome(int(genes[0]), float(genes[1]), int(genes[2]),
                          tuple(float(g) for g in genes[3:]))

    cache: dict[tuple, float] = {}

    def fitness_of(c: Chromosome) -> float:
        key = (c.k, c.omega, c.window, c.weights)
        if key not in cache:
            params = _decode(c, schema)
            cache[key] = math.inf if params is None else evaluator(params)
        return cache[key]

    if initial_population is not None:
        population = list(initial_population)
        if len(population) != config.population:
            raise ValueError("initial population size mismatch")
    else:
        population = [random_chromosome() for _ in range(config.population)]
    scores = [fitness_of(c) for c in population]
    initial_best = min(scores)
    n_elite = math.ceil(config.elitism_frac * config.population)
    history: list[tuple[int, float, float]] = []

    def tournament() -> Chromosome:
        i = int(rng.integers(0, config.population))
        j = int(rng.integers(0, config.population))
        return population[i] if (scores[i], i) <= (scores[j], j) else population[j]

    for generation in range(1, config.generations + 1):
        order = sorted(range(config.population), key=lambda i: (scores[i], i))
        next_pop = [population[i] for i in order[:n_elite]]
        while len(next_pop) < config.population:
            a, b = tournament(), tournament()
            if rng.random() < config.crossover_prob:
                a, b = crossover(a, b)
            next_pop.append(mutate(a))
            if len(next_pop) < config.population:
                next_pop.append(mutate(b))
        population = next_pop
        scores = [fitness_of(c) for c in population]
        finite = [s for s in scores if math.isfinite(s)]
        mean = float(np.mean(finite)) if finite else math.inf
        history.append((generation, min(scores), mean))

    best_idx = min(range(config.population), key=lambda i: (scores[i], i))
    best = population[best_idx]
    params = _decode(best, schema)
    assert params is not None, "GA converged on an all-zero weight vector"
    return GAResult(params, scores[best_idx], initial_best, tuple(history))


# -- best subset selection --------------------------------------------------


@dataclass(frozen=True)
class SubsetResult:
    size: int
    features: tuple[str, ...]
    weights: dict[str, float]
    rmse: float


@dataclass(frozen=True)
class SubsetSweep:
    per_size: tuple[SubsetResult, ...]
    best: SubsetResult
    models_evaluated: int


def best_subset(
    train: Sequence[Example],
    validate: Sequence[Example],
    schema: FeatureSchema,
    *,
    k: int,
    omega: float,
    window_size: int | None = None,
    weights: Mapping[str, float] | None = None,
) -> SubsetSweep:
    """Evaluate every feature subset; report the best model per subset size.

    Weights come from the correlation method (computed once; a subset simply
    masks features out). Ties prefer fewer features, and within a size the
    first subset in lexicographic order wins.
    """
    evaluator = FitnessEvaluator(train, validate, schema)
    window = min(window_size or len(train), len(train))
    rows = evaluator._window(window)
    k_eff = min(k, rows.stop - rows.start)
    if weights is None:
        weights = correlation_weights(train, schema)
    names = schema.active
    # per-feature squared-delta planes; a subset's distance matrix is just a
    # weighted sum over its planes
    planes = np.stack(
        [evaluator._distance_sq({name: 1.0}, rows) for name in names]
    )
    labels = evaluator._train_labels[rows]
    w2 = np.array([weights.get(name, 0.0) ** 2 for name in names])

    per_size: list[SubsetResult] = []
    best: SubsetResult | None = None
    evaluated = 0
    indices = range(len(names))
    for size in range(1, len(names) + 1):
        size_best: SubsetResult | None = None
        for combo in itertools.combinations(indices, size):
            sel = np.array(combo)
            d2 = np.einsum("f,fij->ij", w2[sel], planes[sel])
            estimates = _batch_estimates(d2, labels, k_eff, omega)
            rmse = float(np.sqrt(np.mean(np.square(estimates - evaluator._val_labels))))
            evaluated += 1
            if size_best is None or rmse < size_best.rmse:
                size_best = SubsetResult(
                    size=size,
                    features=tuple(names[i] for i in combo),
                    weights={names[i]: float(weights.get(names[i], 0.0)) for i in combo},
                    rmse=rmse,
                )
        assert size_best is not None
        per_size.append(size_best)
        if best is None or size_best.rmse < best.rmse:
            best = size_best
    assert best is not None
    return SubsetSweep(tuple(per_size), best, evaluated)
