"""Malliavin matrices of two coordinates along truncated paths.

The linearised flow is integrated backwards once per path, so a full matrix
costs about one extra trajectory.  With injective noise every matrix is well
conditioned.  Switching the noise off on one observed mode keeps the matrices
invertible, since the nonlinearity feeds noise from the other modes into it,
but the condition numbers grow by more than an order of magnitude.
"""
import numpy as np

from snslab.integrator import DynamicsSpec, Truncated, run_ensemble
from snslab.malliavin import assemble_matrices, coordinate_functional, nondegeneracy_report
from snslab.noise import explicit_list, power_law
from snslab.spectral import build_basis, random_state

F = (0, 1)


def report(spec, x, label, n_paths=100, t=0.5, dt=1e-2):
    res = run_ensemble(x, spec, t, dt, n_paths, 7, keep_path=True, keep_states=False)
    mats = assemble_matrices(spec, res.path, dt, t, coordinate_functional(F))
    print(f"--- {label}")
    print(nondegeneracy_report(mats).to_text())


def main():
    basis = build_basis(2)
    x = random_state(basis, np.random.default_rng(0), 0.5)
    cov = power_law(basis, 3.0)
    report(DynamicsSpec(1.0, cov, Truncated(50.0)), x, "injective noise")
    v = cov.variances.copy()
    v[1] = 0.0
    report(DynamicsSpec(1.0, explicit_list(basis, v), Truncated(50.0)), x, "mode 1 unforced")


if __name__ == "__main__":
    main()
