"""The published seed behind the pinned-seed acceptance checks.

Ordering and threshold checks on trained models are asserted for this
seed only; small stochastic runs cannot promise them for every seed.
"""

PINNED_SEED = 7
PRETRAIN_STEPS = 1500
