"""The closed-form analysis helpers, each with a worked example.

These utilities quantify three things about an evaluation or a
synthesized dataset: how much benchmark credit a model earns per
generated token, how strongly two judges agree on model orderings, and
how many noisy self-annotated labels a training run effectively buys.
"""

from streamharness import (
    NoiseModel,
    corrected_loss,
    effective_samples,
    per_token_score,
    sample_budget,
    spearman,
)

# 1. Score per token: a verbose model and a terse one can share an
# overall score while differing wildly in cost.
print("per-token score")
for overall, tokens in ((38.5, 283.47), (43.0, 63.78), (54.6, 8.45)):
    eta = per_token_score(overall, tokens)
    print(f"  overall {overall:>5} / {tokens:>7} tokens per turn -> {eta:.2f}")

# 2. Rank agreement between judges. Swapping one adjacent pair in a
# 5-model ordering costs exactly 0.1 of correlation.
print()
print("judge rank agreement")
reference = (1, 2, 4, 3, 5)
for name, ranks in (
    ("identical ordering", (1, 2, 4, 3, 5)),
    ("one adjacent swap", (1, 2, 3, 4, 5)),
    ("full reversal", (5, 3, 4, 2, 1)),
):
    print(f"  {name:<20} rho = {spearman(reference, ranks):.3f}")

# 3. Label-noise correction. With symmetric 10% flip rates, the
# corrected loss of an observed Relevant label is 0.875; averaging over
# the flip process recovers the clean loss of 0.8 exactly.
print()
print("noise-corrected loss")
noise = NoiseModel(rho_minus=0.1, rho_plus=0.1)
as_r = corrected_loss(0.8, 0.2, "R", noise)
as_i = corrected_loss(0.2, 0.8, "I", noise)
print(f"  observed R -> {as_r}")
print(f"  observed I -> {as_i}")
print(f"  expectation -> {0.9 * as_r + 0.1 * as_i:.3f} (clean loss was 0.8)")

# 4. What noisy labels are worth. 1000 samples at a 10% annotation
# error rate carry the information of 640 clean ones, and the number of
# trajectories needed to hit a target excess risk grows like
# 1 / (1 - 2 * eps_v)^2 as annotation noise approaches coin-flipping.
print()
print("sample economics")
print(f"  effective_samples(1000, 0.10) = {effective_samples(1000, 0.10):.0f}")
print(f"  effective_samples(1000, 0.25) = {effective_samples(1000, 0.25):.0f}")
for eps_v in (0.0, 0.1, 0.3, 0.45):
    budget = sample_budget(log_covering=10.0, eps_v=eps_v, eps=0.05)
    print(f"  budget at eps_v={eps_v:<4} -> {budget:,.0f}")
