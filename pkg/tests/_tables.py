"""Published cohort summary rows used by the stats and acceptance tests.

Three clinical groups per metric row: counts, mean, and sample std of the
percent change vs paired normal skin. p-values are the printed ones; rows
printed as "<0.001" carry None and are checked as bounds.
"""

from octapws.stats import GroupSummary

GROUP_NAMES = ("PI", "PR", "TH")
GROUP_N = (190, 285, 50)

# metric -> ((mean, std) per group, printed ANOVA p or None for "<0.001")
ANOVA_TABLE = {
    "VD": (((3.97, 4.21), (2.90, 3.44), (3.06, 5.40)), 0.014),
    "VC": (((23.95, 13.72), (28.78, 12.44), (30.13, 15.27)), None),
    "VX": (((-21.41, 15.12), (-24.60, 18.76), (-23.88, 16.65)), 0.143),
    "ST": (((8.60, 13.18), (9.52, 15.56), (69.41, 21.70)), None),
    "MDV": (((3.09, 4.08), (2.52, 3.02), (3.22, 2.06)), 0.127),
    "DVG": (((-6.23, 5.50), (-6.86, 6.02), (-5.36, 5.47)), 0.179),
}

# metric -> printed pairwise p (PI-PR, PI-TH, PR-TH); None for "<0.001"
TUKEY_TABLE = {
    "VD": (0.011, 0.316, 0.962),
    "VC": (None, 0.009, 0.783),
    "VX": (0.122, 0.643, 0.960),
    "ST": (0.801, None, None),
    "MDV": (0.169, 0.968, 0.367),
    "DVG": (0.476, 0.611, 0.210),
}

# metric -> printed significance stars in the same pair order
TUKEY_STARS = {
    "VD": (True, False, False),
    "VC": (True, True, False),
    "VX": (False, False, False),
    "ST": (False, True, True),
    "MDV": (False, False, False),
    "DVG": (False, False, False),
}


def metric_groups(metric: str) -> list[GroupSummary]:
    rows, _ = ANOVA_TABLE[metric]
    return [GroupSummary(n, m, s) for n, (m, s) in zip(GROUP_N, rows)]
