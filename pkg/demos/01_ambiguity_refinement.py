"""Optimal investment under ambiguity: spatial refinement of the worst-case value.

The worst-case value u_* of the investment problem is an obstacle problem:
the investor may stop at any time and collect g(x).  We solve the penalized
equation on (0, 2) for a short ladder of mesh sizes and watch the probe value
U(T, 1) converge monotonically at first order (increment ratios near 2).

Runtime: about 10 seconds.
"""
from hjbvi import InvestmentAmbiguityModel, SchemeConfig, increments, run

model = InvestmentAmbiguityModel(scenario="worst")
ladder = [1 / 20, 1 / 40, 1 / 80, 1 / 160]
values, iters = [], []
for h in ladder:
    # dt = lam * h with lam = theta = 1/5 keeps the scheme monotone (CFL certified)
    cfg = SchemeConfig(h=h, lam=0.2, theta=0.2, rho=16e3, h_eps=0.1, tol=1e-10)
    problem = model.build(cfg)
    sol = run(problem, cfg)
    values.append(float(sol.u[problem.grid.node_at((1.0,))]))
    iters.append(sol.max_iterations)
    print(f"h=1/{round(1 / h):<4d} steps={sol.disc.partition.N:<4d} U(T,1)={values[-1]:.9f} "
          f"max PI iterations={sol.max_iterations} CFL margin={sol.cfl.worst_margin:.3f}")

inc, ratio = increments(values)
print("\nincrements:", ["-" if i is None else f"{i:.3e}" for i in inc])
print("ratios:    ", ["-" if r is None else f"{r:.3f}" for r in ratio])
print("\nPolicy iteration needs only a handful of iterations per step, and the "
      "ratios approach 2: first-order convergence in h.")
