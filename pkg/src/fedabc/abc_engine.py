"""Likelihood-free rejection sampler.

Loops simulate -> summarize -> compare, keeping parameter draws whose
discrepancy from the observed summary falls strictly below the threshold.
Each trial consumes its own derived random stream, so a trial can be
replayed from its index alone and runs with different thresholds share
common random numbers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .rng import RngHandle

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 10_000
DEFAULT_MAX_TRIALS = 1_000_000


@dataclass
class AbcProblem:
    """Everything the rejection loop needs, as plain callables.

    prior_sample and simulate receive a per-trial numpy Generator and must
    consume it in a fixed order. discrepancy(simulated_summary,
    observed_summary) returns the scalar compared against epsilon.
    """

    prior_sample: Callable[[np.random.Generator], Any]
    simulate: Callable[[Any, np.random.Generator], Any]
    summarize: Callable[[Any], Any]
    discrepancy: Callable[[Any, Any], float]
    observed_summary: Any
    epsilon: float
    target_accepted: int
    max_trials: int = DEFAULT_MAX_TRIALS

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.target_accepted < 1:
            raise ValueError("target accepted count must be >= 1")
        if self.max_trials < self.target_accepted:
            raise ValueError("max trials must cover the target accepted count")


@dataclass
class AbcResult:
    """Accepted draws plus the full per-trial discrepancy trace."""

    accepted: list = field(default_factory=list)
    accepted_trials: list[int] = field(default_factory=list)
    trials: int = 0
    epsilon: float = float("nan")
    discrepancy_trace: list[float] = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return len(self.accepted) / self.trials if self.trials else 0.0

    @property
    def completed(self) -> bool:
        """False when max trials ran out before the target count."""
        return bool(self._target_met)

    _target_met: bool = False

    def to_json(self, encode_theta: Callable[[Any], Any] = lambda t: t) -> dict:
        return {
            "epsilon": self.epsilon,
            "trials": self.trials,
            "acceptance_rate": self.acceptance_rate,
            "completed": self.completed,
            "accepted_trials": list(self.accepted_trials),
            "accepted": [encode_theta(t) for t in self.accepted],
            "discrepancy_trace": list(self.discrepancy_trace),
        }


def run_trial(problem: AbcProblem, rng: RngHandle, trial: int) -> tuple[Any, float]:
    """Replay a single trial from its index; returns (theta, discrepancy)."""
    gen = rng.child(trial).generator()
    theta = problem.prior_sample(gen)
    data = problem.simulate(theta, gen)
    stat = problem.summarize(data)
    return theta, float(problem.discrepancy(stat, problem.observed_summary))


def abc_rejection(problem: AbcProblem, rng: RngHandle) -> AbcResult:
    """Run rejection sampling until the target count or max trials.

    Acceptance is strict (discrepancy < epsilon). Exhausting max trials
    returns a partial result rather than raising.
    """
    result = AbcResult(epsilon=problem.epsilon)
    for trial in range(problem.max_trials):
        theta, dist = run_trial(problem, rng, trial)
        result.discrepancy_trace.append(dist)
        result.trials = trial + 1
        if dist < problem.epsilon:
            result.accepted.append(theta)
            result.accepted_trials.append(trial)
            if len(result.accepted) >= problem.target_accepted:
                result._target_met = True
                break
        if result.trials % PROGRESS_EVERY == 0:
            logger.info(
                "abc: %d trials, %d accepted (rate %.4f)",
                result.trials, len(result.accepted), result.acceptance_rate,
            )
    return result
