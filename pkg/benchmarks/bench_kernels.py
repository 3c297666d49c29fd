"""Compare the compiled forward-backward kernel with the numpy fallback.

Run: python3 benchmarks/bench_kernels.py [--patients 200] [--repeat 50]
"""
import argparse
import time

import numpy as np

from comorbid_hmm import kernels
from comorbid_hmm.data import DEMO_COVARIATES, demo_simulation_config, simulate_dataset
from comorbid_hmm.likelihood import LogPosterior, ModelConfig
from comorbid_hmm.sampler import ChainConfig, nuts_sample


def timeit(fn, repeat):
    fn()
    best = np.inf
    for _ in range(3):
        t = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t) / repeat)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patients", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--share-iterations", type=int, default=150,
                    help="NUTS iterations used to measure the likelihood share of sampler time")
    args = ap.parse_args()

    cfg = demo_simulation_config(n_patients=args.patients)
    data = simulate_dataset(cfg).select(DEMO_COVARIATES)
    model = ModelConfig.for_data(data)
    theta = model.transform().unconstrain(cfg.true_params)
    print(f"{data.n_patients} patients, {data.n_rows} rows, dim {model.transform().dim}")
    print(f"default backend: {kernels.BACKEND}")

    results = {}
    for backend in ("cython", "python"):
        if backend == "cython" and kernels.BACKEND != "cython":
            print("cython: extension not built, skipped")
            continue
        lp = LogPosterior(data, model, backend=backend)
        results[backend] = (lp(theta), timeit(lambda: lp(theta), args.repeat),
                            timeit(lambda: lp.value(theta), args.repeat))
        _, grad_t, val_t = results[backend]
        print(f"{backend:>7s}: value+gradient {grad_t * 1e3:8.3f} ms   value only {val_t * 1e3:8.3f} ms")
    if len(results) == 2:
        (v1, g1), t1, _ = results["cython"]
        (v2, g2), t2, _ = results["python"]
        print(f"speed-up {t2 / t1:.1f}x; |dvalue| {abs(v1 - v2):.2e}; max |dgrad| {np.max(np.abs(g1 - g2)):.2e}")

    if args.share_iterations > 0:
        lp = LogPosterior(data, model)
        spent = [0.0]

        def timed(q):
            t = time.perf_counter()
            out = lp(q)
            spent[0] += time.perf_counter() - t
            return out

        n = args.share_iterations
        t = time.perf_counter()
        nuts_sample(timed, ChainConfig(n_chains=1, n_warmup=n // 2, n_sampling=n - n // 2, seed=1),
                    init=[theta])
        total = time.perf_counter() - t
        print(f"NUTS ({kernels.BACKEND}, {n} iterations): {total:.1f}s, "
              f"likelihood+gradient {100 * spent[0] / total:.1f}% of sampler time")


if __name__ == "__main__":
    main()
