"""Bundled traffic rules.

The rule file below covers the two statute clauses the library ships
with: intersection behaviour under a red light (article 38 clause 3)
and fog-light duty in low visibility (article 58 clause 3).  Distances
are meters, speeds m/s.
"""

from .dsl import Specification, parse_spec

RULES_SOURCE = """\
// red light: unless turning right, come to a stop within 3 s of the line
law38_sub3_1 = ((TL(color) == red)
                && ((D(stopline) < 2) || (D(junction) < 2))
                && !(direction == right))
               -> (F[0,3] (speed < 0.5));

// red light, turning right: keep moving when nobody has priority
law38_sub3_2 = ((TL(color) == red)
                && ((D(stopline) < 2) || (D(junction) < 2))
                && (direction == right)
                && !PriorityV(20) && !PriorityP(20))
               -> (F[0,2] (speed > 0.5));

law38_sub3 = G(law38_sub3_1 && law38_sub3_2);

// fog lights and hazards whenever visibility is badly degraded
law58_sub3 = G((fog >= 0.5) -> (fogLight && warningFlash));

laws = law38_sub3 && law58_sub3;
"""


def load() -> Specification:
    """Parse the bundled rule file."""
    return parse_spec(RULES_SOURCE)


def traffic_light_law():
    """The red-light formula on its own (top of article 38 clause 3)."""
    return load().formula("law38_sub3")


def fog_light_law():
    return load().formula("law58_sub3")
