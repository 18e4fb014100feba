"""Problem definition for the communication-vs-accuracy search.

A genome fixes the number of participating clients, the communication
interval, and a per-layer (drop percent, bit width) pair. The first objective
is the closed-form fraction of baseline traffic the configuration moves; the
second is the final test accuracy of the simulated federated run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import LayerCompressionSpec
from .data import ClientPartition, LabeledDataset
from .federation import FLRunConfig, run_federated_training
from .nn import ModelSpec, NumericError, TrainConfig


@dataclass(frozen=True)
class Bounds:
    """Closed per-coordinate ranges for genomes over a model with n_layers arrays."""

    n_clients: int
    n_layers: int
    interval_max: int = 1000
    drop_max: int = 50
    bits_max: int = 32

    @property
    def dimension(self) -> int:
        return 2 * self.n_layers + 2

    def coordinate_ranges(self) -> list[tuple[int, int]]:
        return (
            [(1, self.n_clients), (1, self.interval_max)]
            + [(0, self.drop_max)] * self.n_layers
            + [(1, self.bits_max)] * self.n_layers
        )

    def coordinate_names(self) -> list[str]:
        return (
            ["m", "E"]
            + [f"mu_{i + 1}" for i in range(self.n_layers)]
            + [f"b_{i + 1}" for i in range(self.n_layers)]
        )


def default_bounds(n_clients: int, n_layers: int) -> Bounds:
    return Bounds(n_clients, n_layers)


def mutation_narrow_bounds(n_clients: int, n_layers: int) -> Bounds:
    """Narrower interval range exposed as a preset rather than silently chosen."""
    return Bounds(n_clients, n_layers, interval_max=100)


BOUNDS_PRESETS = {"default": default_bounds, "mutation-narrow": mutation_narrow_bounds}


@dataclass(frozen=True)
class Genome:
    """Decision vector: participants, interval, per-layer drops and bit widths."""

    participants: int
    interval: int
    drop_percents: tuple[int, ...]
    bit_widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.drop_percents) != len(self.bit_widths):
            raise ValueError("drop_percents and bit_widths must have equal length")

    @property
    def n_layers(self) -> int:
        return len(self.drop_percents)

    def to_vector(self) -> tuple[int, ...]:
        return (self.participants, self.interval, *self.drop_percents, *self.bit_widths)

    @classmethod
    def from_vector(cls, vec) -> "Genome":
        vec = [int(v) for v in vec]
        if len(vec) < 4 or len(vec) % 2:
            raise ValueError(f"genome length must be even and at least 4, got {len(vec)}")
        n_layers = (len(vec) - 2) // 2
        return cls(vec[0], vec[1], tuple(vec[2 : 2 + n_layers]), tuple(vec[2 + n_layers :]))

    def validate(self, bounds: Bounds) -> None:
        if self.n_layers != bounds.n_layers:
            raise ValueError(f"genome has {self.n_layers} layers, bounds expect {bounds.n_layers}")
        for value, (lo, hi), name in zip(
            self.to_vector(), bounds.coordinate_ranges(), bounds.coordinate_names()
        ):
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ObjectiveVector:
    """Both objective values plus their raw ingredients."""

    comm_fraction: float  # f1, minimized
    accuracy: float  # f2, maximized
    alpha: float
    beta: float
    n_correct: int
    n_test: int
    failed: bool = False
    note: str = ""

    def as_pair(self) -> tuple[float, float]:
        return (self.comm_fraction, self.accuracy)


def comm_fraction(genome: Genome, layer_sizes, n_clients: int) -> tuple[float, float, float]:
    """Closed-form (alpha, beta, f1): downlink and uplink fractions of the
    no-reduction baseline and their mean. Exact integer core, no simulation."""
    if len(layer_sizes) != genome.n_layers:
        raise ValueError("genome does not match the layer layout")
    total = sum(layer_sizes)
    alpha = genome.participants / (n_clients * genome.interval)
    numerator = sum(
        b * (100 - mu) * n
        for b, mu, n in zip(genome.bit_widths, genome.drop_percents, layer_sizes)
    )
    beta = (genome.participants * numerator) / (n_clients * genome.interval * 3200 * total)
    return alpha, beta, (alpha + beta) / 2


def random_genome(bounds: Bounds, rng: np.random.Generator) -> Genome:
    """Uniform integer draw within every coordinate's closed range."""
    ranges = bounds.coordinate_ranges()
    lows = np.array([lo for lo, _ in ranges])
    highs = np.array([hi for _, hi in ranges])
    return Genome.from_vector(rng.integers(lows, highs + 1))


def clamp(genome: Genome, bounds: Bounds) -> Genome:
    """Project every coordinate onto its closed range."""
    vec = [
        min(max(v, lo), hi)
        for v, (lo, hi) in zip(genome.to_vector(), bounds.coordinate_ranges())
    ]
    return Genome.from_vector(vec)


@dataclass
class EvalEnv:
    """Everything a genome evaluation needs besides the genome itself.

    Per-evaluation randomness is derived from (seed, generation, index), so
    results do not depend on how evaluations are scheduled across workers.
    """

    spec: ModelSpec
    partition: ClientPartition
    test: LabeledDataset
    train: TrainConfig
    epochs: int
    seed: int
    init_seed: int = 0

    @property
    def n_clients(self) -> int:
        return self.partition.n_clients

    def bounds(self, preset: str = "default") -> Bounds:
        return BOUNDS_PRESETS[preset](self.n_clients, self.spec.n_arrays)


def build_run_config(genome: Genome, env: EvalEnv) -> FLRunConfig:
    """Decode a genome into the federated-run configuration it describes."""
    return FLRunConfig(
        model_spec=env.spec,
        n_clients=env.n_clients,
        participants=genome.participants,
        interval=genome.interval,
        layer_specs=tuple(
            LayerCompressionSpec(b, mu) for b, mu in zip(genome.bit_widths, genome.drop_percents)
        ),
        train=env.train,
        epochs=env.epochs,
        init_seed=env.init_seed,
    )


def simulate_genome(
    genome: Genome,
    env: EvalEnv,
    generation: int = 0,
    index: int = 0,
    trace=None,
    trace_accuracy: bool = False,
):
    """Simulate one genome; returns (ObjectiveVector, FLOutcome or None).

    A numeric failure during training does not abort the search: the result
    is marked failed with accuracy 0, a diagnostic note, and no outcome.
    """
    alpha, beta, f1 = comm_fraction(genome, env.spec.param_shapes, env.n_clients)
    cfg = build_run_config(genome, env)
    try:
        outcome = run_federated_training(
            cfg, env.partition, env.test, [env.seed, generation, index],
            trace=trace, trace_accuracy=trace_accuracy,
        )
    except NumericError as exc:
        vector = ObjectiveVector(
            f1, 0.0, alpha, beta, 0, env.test.count,
            failed=True, note=f"training failed: {exc} (array {exc.layer_index})",
        )
        return vector, None
    vector = ObjectiveVector(f1, outcome.accuracy, alpha, beta, outcome.n_correct, env.test.count)
    return vector, outcome


def evaluate_genome(genome: Genome, env: EvalEnv, generation: int = 0, index: int = 0) -> ObjectiveVector:
    """Both objectives for one genome, deterministic given (env.seed, generation, index)."""
    vector, _ = simulate_genome(genome, env, generation, index)
    return vector
