"""Samplers that draw fiber elements from the CNF encoding.

The walker asks a sampler for batches of proposal tables.  Three
implementations are provided:

* :class:`ExternalSampler` shells out to an off-the-shelf CNF sampler
  (one solution per line of output), for running against tools like
  uniform-ish hashing samplers.
* :class:`InternalUniformSampler` enumerates the fiber once and draws
  exactly uniformly.  This is the reference sampler for tests and for
  instances small enough to enumerate.
* :class:`InternalBiasedSampler` draws from an exponentially tilted
  distribution, used to demonstrate what a non-uniform sampler does to
  the walk.

All samplers return tables validated against the fiber; an external
tool whose output is mostly garbage is reported as an error rather
than silently thinned.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .dpll import Solver
from .encode import CNFEncoding
from .enumeration import FiberTooLarge, enumerate_fiber
from .models import FiberSpec, Table

__all__ = [
    "make_rng",
    "FiberSampler",
    "SamplerConfig",
    "SampleBatch",
    "build_sampler",
    "ExternalSampler",
    "InternalUniformSampler",
    "InternalBiasedSampler",
    "SamplerError",
    "SamplerLaunchError",
    "SamplerExitError",
    "SamplerTimeoutError",
    "SamplerOutputError",
    "SamplerValidityError",
    "sample_external",
    "sample_internal_uniform",
    "sample_internal_biased",
    "tv_distance_to_uniform",
    "enumerate_cnf_tables",
    "tv_distance_uniform",
    "l1_deviation",
    "SEED_ENV_VAR",
]

SEED_ENV_VAR = "FIBERWALK_SEED"


def make_rng(*entropy: int) -> np.random.Generator:
    """Counter-based generator keyed on a tuple of integers, so every
    component of a run derives its stream from (seed, role) without
    coupling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class SamplerError(RuntimeError):
    """Base class for sampler failures."""


class SamplerLaunchError(SamplerError):
    """The sampler executable could not be started."""


class SamplerExitError(SamplerError):
    """The sampler exited with a nonzero status."""


class SamplerTimeoutError(SamplerError):
    """The sampler did not finish within the configured timeout."""


class SamplerOutputError(SamplerError):
    """The sampler's output contained no parsable solutions."""


class SamplerValidityError(SamplerError):
    """More than half of the returned solutions were not fiber elements."""


class FiberSampler(Protocol):
    def sample(self, encoding: CNFEncoding, count: int, seed: int) -> list[Table]:
        """Draw ``count`` (or fewer, if the tool under-delivers)
        validated fiber elements."""
        ...


KINDS = ("external", "internal-uniform", "internal-biased")


@dataclass(frozen=True)
class SamplerConfig:
    """Declarative description of a sample source.

    ``epsilon`` and ``eta`` record the tolerance the external tool
    advertises (per-solution multiplicative bound and total-variation
    budget respectively); they document the source and are not
    enforced, since a black-box sampler cannot be forced to honor them.
    ``eta`` follows the unnormalized L1 convention, so it lives in
    [0, 2]; halve it to compare against a TV distance.
    """

    kind: str = "internal-uniform"
    command_template: str | None = None
    timeout: float | None = None
    epsilon: float = 0.0
    eta: float = 0.0
    bias_strength: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "external" and not self.command_template:
            raise ValueError("external sampler needs a command_template")
        if self.epsilon < 0 or self.eta < 0:
            raise ValueError("epsilon and eta must be nonnegative")

    def summary(self) -> str:
        if self.kind == "external":
            return f"external({self.command_template})"
        if self.kind == "internal-biased":
            return f"internal-biased(strength={self.bias_strength})"
        return "internal-uniform"


@dataclass(frozen=True)
class SampleBatch:
    """A batch of validated fiber elements plus where they came from."""

    tables: tuple[Table, ...]
    source: str
    seed: int

    def __len__(self) -> int:
        return len(self.tables)

    def __iter__(self):
        return iter(self.tables)


def build_sampler(config: SamplerConfig, cap: int = 1_000_000) -> "FiberSampler":
    if config.kind == "external":
        return ExternalSampler(config.command_template, timeout=config.timeout)
    if config.kind == "internal-biased":
        return InternalBiasedSampler(strength=config.bias_strength, cap=cap)
    return InternalUniformSampler(cap=cap)


def _parse_solutions(text: str) -> list[list[int]]:
    """Solution literals from sampler output: lines of integers
    terminated by 0, with or without a leading ``v``; 0 splits
    solutions even across lines."""
    solutions: list[list[int]] = []
    pending: list[int] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line[0] in "vV" and (len(line) == 1 or line[1].isspace()):
            line = line[1:]
        elif not (line[0].isdigit() or line[0] == "-"):
            continue  # banner/comment line
        try:
            lits = [int(t) for t in line.split()]
        except ValueError:
            continue
        for lit in lits:
            if lit == 0:
                if pending:
                    solutions.append(pending)
                    pending = []
            else:
                pending.append(lit)
    if pending:
        solutions.append(pending)
    return solutions


@dataclass
class ExternalSampler:
    """Runs ``command`` with {cnf}, {count} and {seed} placeholders.

    A command without a {seed} placeholder gets the seed through the
    FIBERWALK_SEED environment variable instead.  Solutions failing the
    fiber membership check are dropped; more than 50% invalid is an
    error.
    """

    command: str
    timeout: float | None = None

    def sample(self, encoding: CNFEncoding, count: int, seed: int) -> list[Table]:
        if count <= 0:
            return []
        fd, path = tempfile.mkstemp(suffix=".cnf", prefix="fiber")
        try:
            with os.fdopen(fd, "w") as f:
                encoding.to_dimacs(f)
            return self.sample_file(encoding, path, count, seed)
        finally:
            os.unlink(path)

    def sample_file(
        self, encoding: CNFEncoding, cnf_path: str, count: int, seed: int
    ) -> list[Table]:
        """Like sample(), but against a CNF file already on disk."""
        cmd = self.command.format(cnf=cnf_path, count=count, seed=seed)
        env = None
        if "{seed}" not in self.command:
            env = dict(os.environ)
            env[SEED_ENV_VAR] = str(seed)
        try:
            proc = subprocess.run(
                shlex.split(cmd),
                capture_output=True,
                text=True,
                timeout=self.timeout,
                env=env,
            )
        except OSError as exc:
            raise SamplerLaunchError(f"could not launch sampler: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise SamplerTimeoutError(
                f"sampler timed out after {self.timeout}s"
            ) from exc
        if proc.returncode != 0:
            raise SamplerExitError(
                f"sampler exited with status {proc.returncode}: "
                f"{proc.stderr.strip()[:500]}"
            )
        solutions = _parse_solutions(proc.stdout)
        if not solutions:
            raise SamplerOutputError("no valid samples: output held no solutions")
        tables = []
        invalid = 0
        for lits in solutions:
            try:
                table = encoding.decode(lits)
            except ValueError:
                invalid += 1
                continue
            if encoding.spec.contains(table):
                tables.append(table)
            else:
                invalid += 1
        if not tables:
            raise SamplerValidityError(
                f"no valid samples: all {invalid} solutions failed fiber validation"
            )
        if invalid * 2 > len(solutions):
            raise SamplerValidityError(
                f"{invalid} of {len(solutions)} solutions are not fiber elements"
            )
        return tables


@dataclass
class InternalUniformSampler:
    """Exactly uniform over the fiber, by enumerate-then-draw.

    The enumeration is cached per fiber, and draws reference the cached
    tables rather than copying them.
    """

    cap: int = 1_000_000
    _cache: dict[FiberSpec, tuple[Table, ...]] = field(default_factory=dict, repr=False)

    def _elements(self, spec: FiberSpec) -> tuple[Table, ...]:
        if spec not in self._cache:
            enum = enumerate_fiber(spec, cap=self.cap).require_complete()
            self._cache[spec] = enum.elements
        return self._cache[spec]

    def sample(self, encoding: CNFEncoding, count: int, seed: int) -> list[Table]:
        elements = self._elements(encoding.spec)
        if not elements:
            raise SamplerOutputError("fiber is empty")
        rng = make_rng(seed)
        idx = rng.integers(len(elements), size=count)
        return [elements[int(i)] for i in idx]


@dataclass
class InternalBiasedSampler:
    """Exponentially tilted draw: weight exp(strength * u_first), where
    u_first is the first free cell.  strength = 0 recovers uniform."""

    strength: float = 1.0
    cap: int = 1_000_000
    _cache: dict[FiberSpec, tuple[tuple[Table, ...], np.ndarray]] = field(
        default_factory=dict, repr=False
    )

    def _dist(self, spec: FiberSpec) -> tuple[tuple[Table, ...], np.ndarray]:
        if spec not in self._cache:
            elements = enumerate_fiber(spec, cap=self.cap).require_complete().elements
            zeros = spec.zero_set()
            first = next((j for j in range(spec.d) if j not in zeros), None)
            if first is None:
                raise ValueError("every cell is a structural zero")
            logw = np.array(
                [self.strength * u.cells[first] for u in elements], dtype=float
            )
            logw -= logw.max() if len(logw) else 0.0
            w = np.exp(logw)
            self._cache[spec] = (elements, w / w.sum())
        return self._cache[spec]

    def sample(self, encoding: CNFEncoding, count: int, seed: int) -> list[Table]:
        elements, probs = self._dist(encoding.spec)
        if not len(elements):
            raise SamplerOutputError("fiber is empty")
        rng = make_rng(seed)
        idx = rng.choice(len(elements), size=count, p=probs)
        return [elements[int(i)] for i in idx]


def sample_external(
    encoding: CNFEncoding,
    config: SamplerConfig,
    count: int,
    seed: int,
    cnf_path: str | None = None,
) -> SampleBatch:
    """Batch from an external command-line sampler.

    When ``cnf_path`` is given the command runs against that file
    (which must encode the same fiber); otherwise the encoding is
    written to a temporary file first.
    """
    if config.kind != "external":
        raise ValueError(f"config kind is {config.kind!r}, not 'external'")
    sampler = ExternalSampler(config.command_template, timeout=config.timeout)
    if cnf_path is None:
        tables = sampler.sample(encoding, count, seed)
    else:
        tables = sampler.sample_file(encoding, cnf_path, count, seed)
    return SampleBatch(tuple(tables), config.summary(), seed)


def sample_internal_uniform(
    spec: FiberSpec, count: int, seed: int, cap: int = 1_000_000
) -> SampleBatch:
    """Exactly uniform batch via enumerate-then-draw."""
    elements = enumerate_fiber(spec, cap=cap).require_complete().elements
    if not elements:
        raise SamplerOutputError("fiber is empty")
    rng = make_rng(seed)
    idx = rng.integers(len(elements), size=count)
    return SampleBatch(tuple(elements[int(i)] for i in idx), "internal-uniform", seed)


def sample_internal_biased(
    spec: FiberSpec,
    count: int,
    seed: int,
    bias_strength: float = 1.0,
    cap: int = 1_000_000,
) -> SampleBatch:
    """Batch from the exponentially tilted distribution
    w(u) proportional to exp(bias_strength * u_first)."""
    sampler = InternalBiasedSampler(strength=bias_strength, cap=cap)
    elements, probs = sampler._dist(spec)
    if not len(elements):
        raise SamplerOutputError("fiber is empty")
    rng = make_rng(seed)
    idx = rng.choice(len(elements), size=count, p=probs)
    return SampleBatch(
        tuple(elements[int(i)] for i in idx),
        f"internal-biased(strength={bias_strength})",
        seed,
    )


def tv_distance_to_uniform(
    batch: SampleBatch, spec: FiberSpec, cap: int = 1_000_000
) -> float:
    """TV distance between the batch's empirical distribution and the
    uniform distribution on the (fully enumerated) fiber."""
    enum = enumerate_fiber(spec, cap=cap).require_complete()
    return tv_distance_uniform(batch.tables, enum.elements)


def enumerate_cnf_tables(encoding: CNFEncoding, cap: int = 10_000_000) -> list[Table]:
    """All fiber elements by CNF model enumeration with blocking
    clauses: the solver-side route, matched against direct enumeration
    in the bijection checks."""
    solver = Solver(
        encoding.num_vars, encoding.clauses, decision_vars=encoding.sampling_vars
    )
    tables: list[Table] = []
    while True:
        model = solver.next_model()
        if model is None:
            return tables
        table = encoding.decode(model)
        tables.append(table)
        if len(tables) > cap:
            raise FiberTooLarge(f"model count exceeds cap of {cap}")
        solver.add_clause(encoding.blocking_clause(table))


def tv_distance_uniform(samples: Sequence[Table], fiber: Sequence[Table]) -> float:
    """Total variation distance between the empirical distribution of
    the samples and the uniform distribution on the fiber."""
    if not samples or not fiber:
        raise ValueError("need at least one sample and a nonempty fiber")
    counts: dict[tuple[int, ...], int] = {}
    for u in samples:
        counts[u.cells] = counts.get(u.cells, 0) + 1
    size = len(fiber)
    n = len(samples)
    total = 0.0
    for v in fiber:
        total += abs(counts.get(v.cells, 0) / n - 1.0 / size)
    return 0.5 * total


def l1_deviation(samples: Sequence[Table], fiber: Sequence[Table]) -> float:
    """Unnormalized L1 deviation of the empirical distribution from
    uniform: sum over fiber elements of |p_hat - 1/|F||.  Ranges over
    [0, 2]; exactly twice the total variation distance."""
    if not samples or not fiber:
        raise ValueError("need at least one sample and a nonempty fiber")
    return 2.0 * tv_distance_uniform(samples, fiber)
