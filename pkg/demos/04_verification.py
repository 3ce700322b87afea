"""Independent checks of the scheme on tiny instances.

Every property the convergence theory relies on is probed directly:

* monotonicity of the discrete residual in neighbouring values (randomized),
* comparison: ordered data give ordered solutions,
* the a priori sup-norm bound at every time step,
* policy iteration against a node-by-node fixed-point solver,
* the slant-derivative identity of both model drivers,
* continuous dependence on a model coefficient.

Runtime: about 20 seconds.  Equivalent to ``hjbvi verify``.
"""
from hjbvi.verify import run_suite

reports = run_suite(out=None, trials=1000, seed=0)
failed = [r for r in reports if not r.passed]
print(f"\n{len(reports) - len(failed)}/{len(reports)} checks passed")
