"""Analysis helpers: per-token score, rank correlation, and the
noise-corrected loss with its sample-budget estimates.

The noise model covers binary relevance labels (Relevant / Irrelevant)
produced by a self-annotating encoder: ``rho_minus`` is the probability
of labeling Relevant when the truth is Irrelevant, ``rho_plus`` the
reverse flip. The corrected loss reweights the observed-label loss so
that its expectation over label flips equals the clean-label loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Literal, Sequence

from .errors import InvalidInputError

Label = Literal["R", "I"]


def _exact(x: float) -> Fraction:
    """The rational value of x's shortest decimal representation.

    Computing in rationals and rounding once at the end keeps results
    like 0.875 or 640.0 exact instead of off by one ulp.
    """
    return Fraction(Decimal(str(x)))


@dataclass(frozen=True)
class NoiseModel:
    """Class-conditional flip rates for binary relevance labels."""

    rho_minus: float  # Pr(labeled R | truth I)
    rho_plus: float   # Pr(labeled I | truth R)

    def __post_init__(self):
        if self.rho_minus < 0 or self.rho_plus < 0:
            raise InvalidInputError("noise rates must be nonnegative")
        if self.rho_minus + self.rho_plus >= 1:
            raise InvalidInputError(
                f"rho_minus + rho_plus must be < 1, got {self.rho_minus + self.rho_plus}"
            )


def per_token_score(overall_pct: float, avg_tokens: float) -> float:
    """Benchmark credit earned per generated token: overall% / avg tokens."""
    if avg_tokens <= 0:
        raise InvalidInputError(f"avg_tokens must be positive, got {avg_tokens!r}")
    return overall_pct / avg_tokens


def _check_permutation(ranks: Sequence[int]) -> None:
    n = len(ranks)
    if sorted(ranks) != list(range(1, n + 1)):
        raise InvalidInputError(f"not a permutation of 1..{n}: {list(ranks)!r}")


def spearman(a: Sequence[int], b: Sequence[int]) -> float:
    """Spearman rank correlation for two tied-free rank vectors.

    rho = 1 - 6 * sum(d_i^2) / (n * (n^2 - 1))
    """
    if len(a) != len(b):
        raise InvalidInputError(f"rank vectors differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise InvalidInputError("need at least 2 ranks")
    _check_permutation(a)
    _check_permutation(b)
    d2 = sum((x - y) ** 2 for x, y in zip(a, b))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def corrected_loss(
    loss_as_labeled: float,
    loss_as_flipped: float,
    observed_label: Label,
    noise: NoiseModel,
) -> float:
    """Unbiased noise-corrected loss for one observed binary label.

    For an observed label R:
        ((1 - rho_minus) * loss(., R) - rho_plus * loss(., I)) / (1 - rho_minus - rho_plus)
    and symmetrically for an observed I. Taking the expectation over the
    label-flip process recovers the clean-label loss exactly.
    """
    if observed_label not in ("R", "I"):
        raise InvalidInputError(f"observed_label must be 'R' or 'I', got {observed_label!r}")
    rho_minus, rho_plus = _exact(noise.rho_minus), _exact(noise.rho_plus)
    labeled, flipped = _exact(loss_as_labeled), _exact(loss_as_flipped)
    denom = 1 - rho_minus - rho_plus
    if observed_label == "R":
        num = (1 - rho_minus) * labeled - rho_plus * flipped
    else:
        num = (1 - rho_plus) * labeled - rho_minus * flipped
    return float(num / denom)


def effective_samples(n: int, eps_v: float) -> float:
    """Clean-label equivalent of n self-generated labels: (1 - 2*eps_v)^2 * n."""
    if not 0.0 <= eps_v < 0.5:
        raise InvalidInputError(f"eps_v must be in [0, 0.5), got {eps_v!r}")
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    return float((1 - 2 * _exact(eps_v)) ** 2 * n)


def sample_budget(
    log_covering: float,
    eps_v: float,
    eps: float,
    constant: float = 1.0,
) -> float:
    """Order-of-magnitude trajectory count to reach excess risk eps.

    constant * log_covering / ((1 - 2*eps_v)^2 * eps^2). The hidden
    constants and log factors of the underlying bound are exposed via
    ``constant`` rather than pretending precision; the covering-number
    log is an input, never estimated internally.
    """
    if log_covering <= 0:
        raise InvalidInputError(f"log_covering must be positive, got {log_covering!r}")
    if not 0.0 <= eps_v < 0.5:
        raise InvalidInputError(f"eps_v must be in [0, 0.5), got {eps_v!r}")
    if eps <= 0:
        raise InvalidInputError(f"eps must be positive, got {eps!r}")
    return float(
        _exact(constant) * _exact(log_covering)
        / ((1 - 2 * _exact(eps_v)) ** 2 * _exact(eps) ** 2)
    )
