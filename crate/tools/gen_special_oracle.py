"""Reference values for digamma and ln_gamma at 50 significant digits.

Writes `x,digamma(x),ln_gamma(x)` rows for 10^4 log-uniform points in
[1e-3, 1e6]. The abscissae are binary64 values and are evaluated exactly.
"""
import random
import sys

import mpmath

mpmath.mp.dps = 50


def main(path):
    rng = random.Random(20161019)
    lo, hi = mpmath.log(mpmath.mpf("1e-3")), mpmath.log(mpmath.mpf("1e6"))
    xs = [1e-3, 1e6, 0.5, 1.0, 1.4616321449683622, 2.0, 6.0, 10.0]
    while len(xs) < 10_000:
        u = rng.random()
        xs.append(float(mpmath.exp(lo + (hi - lo) * u)))
    with open(path, "w") as f:
        f.write("x,digamma,ln_gamma\n")
        for x in xs:
            m = mpmath.mpf(x)
            psi = mpmath.digamma(m)
            lg = mpmath.loggamma(m)
            f.write(f"{x!r},{mpmath.nstr(psi, 25)},{mpmath.nstr(lg, 25)}\n")


if __name__ == "__main__":
    main(sys.argv[1])
