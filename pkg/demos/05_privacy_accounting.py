"""
Privacy accounting and noise calibration
========================================

Subsampled-Gaussian RDP at integer orders, composed over rounds and turned
into (epsilon, delta). Calibration bisects for the smallest noise multiplier
meeting a target.
"""

from fedblur.accountant import PrivacyLedger, calibrate_sigma, epsilon_for, rdp_subsampled_gaussian

print("order-2 RDP, sigma=1:", {p: round(rdp_subsampled_gaussian(p, 1.0, 2), 5) for p in (0.01, 0.1, 1.0)})

ledger = PrivacyLedger(delta=1e-2)
ledger.record(0.1, 1.2, rounds=50)
print(f"50 rounds at p=0.1, sigma=1.2: epsilon {ledger.epsilon():.3f}")
ledger.record(0.1, 1.2, rounds=50)
print(f"after 100 rounds: epsilon {ledger.epsilon():.3f}")

for eps in (1.0, 2.0, 4.0, 8.0):
    res = calibrate_sigma(eps, 1e-2, 100, 0.1)
    print(f"target {eps}: sigma {res.sigma:.4f} achieves {res.achieved_epsilon:.4f} ({res.iterations} steps)")

# more rounds need more noise; roughly sqrt(T) once sigma is large
for T in (100, 400, 1600):
    s = calibrate_sigma(1.0, 1e-5, T, 0.04).sigma
    print(f"T={T}: sigma {s:.3f}, check {epsilon_for(s, 1e-5, T, 0.04):.4f}")
