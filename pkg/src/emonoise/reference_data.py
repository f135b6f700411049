"""
Published reference values for the IEMOCAP + CNN-GRU setup.

These are reported numbers, kept as metadata for comparison in reports.
They cannot be reproduced without that corpus and model, and nothing in the
package treats them as targets.
"""

from __future__ import annotations

CLEAN_BASELINE_UAR = {"activation": 0.67, "valence": 0.59}
CHANCE_UAR = 0.33
ANNOTATOR_AGREEMENT = 0.79
DENOISE_GAIN_CO20 = (0.23, 0.03)  # mean, +/- across environmental categories
REVERB_DENOISE_GAP = -0.28

# (group, variant, d_act, d_val, aug_act, aug_val): change in UAR for a
# clean-trained model, then the gain from leave-one-noise-out augmentation.
NOISE_DEGRADATION = (
    ("Nat", "NatSt", -0.25, -0.24, 0.22, 0.18),
    ("Nat", "NatCo20", -0.33, -0.34, 0.22, 0.13),
    ("Nat", "NatCo10", -0.37, -0.41, 0.33, 0.31),
    ("Nat", "NatCo0", -0.40, -0.41, 0.27, 0.26),
    ("Hum", "HumSt", -0.22, -0.24, 0.15, 0.13),
    ("Hum", "HumCo20", -0.33, -0.37, 0.16, 0.16),
    ("Hum", "HumCo10", -0.37, -0.42, 0.21, 0.26),
    ("Hum", "HumCo0", -0.40, -0.42, 0.25, 0.21),
    ("Int", "IntSt", -0.21, -0.25, 0.15, 0.18),
    ("Int", "IntCo20", -0.31, -0.39, 0.20, 0.22),
    ("Int", "IntCo10", -0.34, -0.39, 0.23, 0.19),
    ("Int", "IntCo0", -0.40, -0.41, 0.30, 0.26),
    ("SpeedSeg", "SpeedSeg", -0.09, -0.12, 0.03, 0.02),
    ("FadeIn", "FadeIn", -0.07, -0.10, 0.05, 0.04),
    ("FadeOut", "FadeOut", -0.09, -0.14, 0.02, 0.06),
    ("DropW", "DropW", -0.04, -0.05, 0.02, 0.00),
    ("DropLt", "DropLt", -0.03, -0.02, 0.06, 0.03),
    ("Reverb", "Reverb", -0.36, -0.37, 0.05, 0.04),
)

# P_IF by (corr, eval) and query budget k
ATTACK_PIF = {
    (False, False): {5: 0.22, 15: 0.29, 25: 0.39},
    (True, False): {5: 0.32, 15: 0.38, 25: 0.53},
    (False, True): {5: 0.31, 15: 0.36, 25: 0.45},
    (True, True): {5: 0.34, 15: 0.43, 25: 0.58},
}


def mean_degradation_by_group() -> dict[str, float]:
    """Mean |change in UAR| over both axes and all rows of each noise group."""
    acc: dict[str, list[float]] = {}
    for group, _, d_act, d_val, _, _ in NOISE_DEGRADATION:
        acc.setdefault(group, []).extend([abs(d_act), abs(d_val)])
    return {g: sum(v) / len(v) for g, v in acc.items()}
