"""
ODE Solver Benchmark

Compare the latent ODE solvers: observed convergence order on dh/dt = -h,
work against tolerance for the adaptive methods, and wall time on a
randomly initialised dynamics network.
"""

import sys
import os
import time
import pandas as pd
import numpy as np
from tabulate import tabulate

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.autodiff.tensor import value_of  # noqa: E402
from src.models.layers import as_nodes  # noqa: E402
from src.models.ode import (  # noqa: E402
    EMBEDDED_METHODS, ORDERS, DynamicsNet, SolverConfig, convergence_order, frame_times, integrate,
    linear_decay,
)

ORDER_METHODS = ("euler", "rk4", "adams_explicit", "adams_implicit", "fehlberg2", "bosh3", "dopri5")


class SolverBenchmark:
    """Benchmark ODE solvers."""

    def __init__(self, seed: int = 42):
        print("=" * 70)
        print("ODE SOLVER BENCHMARK")
        print("=" * 70)
        self.seed = seed
        self.results = []

    def measure_orders(self):
        """Observed convergence slope for every method (embedded methods on fixed steps)."""
        print("\n[1/3] Convergence Order...")
        print("-" * 70)
        rows = []
        for method in ORDER_METHODS:
            slope = convergence_order(method)
            rows.append({"method": method, "expected": ORDERS[method], "observed": slope})
        print(tabulate(rows, headers="keys", floatfmt=".3f"))
        return pd.DataFrame(rows)

    def measure_adaptive_work(self, tolerances=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6)):
        """Function evaluations, rejected steps and max error against tolerance."""
        print("\n[2/3] Adaptive Work vs Tolerance...")
        print("-" * 70)
        times = np.linspace(0.05, 2.0, 40)
        exact = np.exp(-times)
        rows = []
        for method in EMBEDDED_METHODS:
            for tol in tolerances:
                sol = integrate(linear_decay, np.array([1.0]), times, SolverConfig(method=method, rtol=tol, atol=tol))
                error = float(np.max(np.abs(sol.values()[:, 0] - exact)))
                rows.append({
                    "method": method, "tol": tol, "steps": sol.n_steps,
                    "rejected": sol.n_rejected, "fevals": sol.n_fevals, "max_error": error,
                })
        print(tabulate(rows, headers="keys", floatfmt=".3g"))
        return pd.DataFrame(rows)

    def measure_learned_dynamics(self, latent_dim: int = 32, batch: int = 16, horizon: int = 100,
                                 frame_rate: float = 50.0, repeats: int = 3):
        """Wall time of one latent trajectory through a random dynamics network."""
        print("\n[3/3] Learned Dynamics Wall Time...")
        print("-" * 70)
        rng = np.random.default_rng(self.seed)
        net = DynamicsNet("dyn", latent_dim, hidden=64)
        f = net.bind(as_nodes(net.init(rng)))
        h0 = rng.normal(size=(batch, latent_dim))
        ts = frame_times(horizon, frame_rate)
        rows = []
        for method in ORDER_METHODS + ("discrete",):
            config = SolverConfig(method=method, step_size=1.0 / frame_rate)
            elapsed = []
            for _ in range(repeats):
                start = time.perf_counter()
                sol = integrate(f, h0, ts, config)
                elapsed.append(time.perf_counter() - start)
            final = value_of(sol.states[-1])
            rows.append({
                "method": method, "seconds": float(np.median(elapsed)), "fevals": sol.n_fevals,
                "final_norm": float(np.linalg.norm(final)),
            })
        print(tabulate(rows, headers="keys", floatfmt=".4f"))
        return pd.DataFrame(rows)

    def save_results(self, tables):
        """Save benchmark results."""
        os.makedirs("results", exist_ok=True)
        stamp = time.strftime('%Y%m%d_%H%M%S')
        for name, df in tables.items():
            output_file = f"results/solver_{name}_{stamp}.csv"
            df.to_csv(output_file, index=False)
            print(f"[SAVED] {name} saved to: {output_file}")

    def run_full_benchmark(self):
        """Run complete solver benchmark."""
        tables = {
            "order": self.measure_orders(),
            "adaptive": self.measure_adaptive_work(),
            "learned": self.measure_learned_dynamics(),
        }
        self.save_results(tables)

        order = tables["order"]
        worst = order.loc[(order["observed"] - order["expected"]).abs().idxmax()]
        print("\n" + "=" * 70)
        print("BENCHMARK SUMMARY")
        print("=" * 70)
        print(f">> Largest order deviation: {worst['method']} "
              f"(expected {worst['expected']}, observed {worst['observed']:.2f})")
        fastest = tables["learned"].sort_values("seconds").iloc[0]
        print(f">> Fastest on learned dynamics: {fastest['method']} ({fastest['seconds']:.4f}s)")
        print("=" * 70)
        return tables


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description='Benchmark ODE solvers')
    parser.add_argument('--seed', type=int, default=42, help='Random seed')

    args = parser.parse_args()

    benchmark = SolverBenchmark(seed=args.seed)
    results = benchmark.run_full_benchmark()

    if results is not None:
        print("\n[SUCCESS] Solver Benchmark completed successfully!")
    else:
        print("\n[FAILED] Solver Benchmark failed")
