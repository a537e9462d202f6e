"""
Clipping, Gaussian noise and the error they cause
=================================================

An update is clipped to norm S and then receives per-agent noise with
variance S^2 sigma^2 / |cohort|. The mean squared error of the released
update splits into a clipping part and a noise part; small S trades the
first for the second.
"""

import numpy as np

from fedblur.mechanism import add_gaussian_noise, clip, mse_bound
from fedblur.params import ParamVector

rng = np.random.default_rng(1)
update = ParamVector.from_layers([("w", rng.normal(size=50) * 0.2)])
print(f"raw norm {update.norm():.3f}")

for S in (0.3, 1.0, 3.0):
    clipped, factor = clip(update, S)
    print(f"S={S}: clipped norm {clipped.norm():.3f}, factor {factor:.3f}")

S, sigma, cohort = 0.5, 1.0, 10
clipped, _ = clip(update, S)
noisy = add_gaussian_noise(clipped, S, sigma, cohort, rng)
print(f"noise std per coordinate {S * sigma / np.sqrt(cohort):.4f}")
print(f"observed error per coordinate {np.sqrt(np.mean((noisy.values - clipped.values) ** 2)):.4f}")

# Monte-Carlo error against the bound
d = update.total_dim
errs = [np.sum((add_gaussian_noise(clipped, S, sigma, cohort, rng).values - update.values) ** 2) / d
        for _ in range(2000)]
print(f"MC mse {np.mean(errs):.5f}  bound {mse_bound(update.norm(), S, sigma, cohort, d):.5f}")

# the bound against S has an interior minimum
grid = np.linspace(0.05, 3, 60)
bounds = [mse_bound(update.norm(), s, sigma, cohort, d) for s in grid]
print(f"best S on the grid {grid[int(np.argmin(bounds))]:.2f}")
