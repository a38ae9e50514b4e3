"""Tour of the sharp inequalities the verifier checks: the weighted
Poincare bound with its Gaussian equality case, the two closed-form sup
constants, and the norm-equivalence caps for the corrected fields.
"""

import math

import numpy as np

from mhdbl import (GridSpec, Params, initial_data_standard, make_state,
                   poincare_check, sup_constants, gh_equivalence_check)


def main():
    half_root_pi = 0.5 * math.sqrt(math.pi)

    # Gaussian equality case: lhs and both bounds collapse to sqrt(pi)/2
    f = lambda y: np.exp(-y ** 2 / 4.0)
    lhs, rhs1, rhs2, ok = poincare_check(f, t=0.0, kappa=1.0)
    print("weighted Poincare, Gaussian equality case:")
    print(f"  lhs  = {lhs:.9f}")
    print(f"  rhs1 = {rhs1:.9f}   (sqrt(pi)/2 = {half_root_pi:.9f})")
    print(f"  rhs2 = {rhs2:.9f}   pass: {ok}")

    sup1, arg1, sup2 = sup_constants()
    print("sup constants:")
    print(f"  sup_z 2z e^(z^2) integral_z^inf e^(-s^2) ds = {sup1:.6f} "
          f"at z = {arg1:.6f}")
    print(f"  sup_z e^(z^2/4) integral_z^inf e^(-s^2/2) ds = {sup2:.6f}")

    grid = GridSpec(2.0 * np.pi, 32, 16.0, 513)
    params = Params(kappa=1.0, epsilon=1e-3)
    u0, b0, _ = initial_data_standard(grid, params)
    state = make_state(grid, params, u0, b0)
    caps = gh_equivalence_check(state, gamma=0.5)
    print("norm-equivalence caps for the corrected pair (gamma = 1/2):")
    for key in sorted(caps["caps"]):
        print(f"  {key:<14s} {caps['caps'][key]:.4f}")
    print(f"  all ratios finite: {caps['passed']}")


if __name__ == "__main__":
    main()
