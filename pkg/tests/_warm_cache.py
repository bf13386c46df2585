"""Warm the heavy test cache and print the desk-scale trend numbers.

Run from the repo root: python tests/_warm_cache.py
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np

import cachelib
from ddta.evaluation import accuracy, confidence, sensitivity_profile


def main():
    t0 = time.time()
    corpus = cachelib.desk_corpus()
    print(f"corpus: {corpus.source} train={corpus.train.n} test={corpus.test.n}",
          flush=True)
    chains = cachelib.desk_chains(corpus)
    print(f"chains done at {time.time()-t0:.0f}s", flush=True)
    for temp, models in sorted(chains.items()):
        for step, m in enumerate(models, 1):
            acc = accuracy(m, corpus.test)
            conf = confidence(m, corpus.test)
            print(f"  T={temp:g} step{step} {m.provenance:12s} "
                  f"acc={acc:.4f} conf={conf:.4f}", flush=True)
    for temp in (1.0, 10.0, 40.0):
        teacher = chains[temp][0]
        prof = sensitivity_profile(teacher, corpus.test, temp,
                                   threshold=1e-10, sample_count=500)
        print(f"sensitivity teacher T={temp:g}: near-zero={prof.near_zero_proportion:.4f} "
              f"mean|J| median={np.median(prof.per_sample_mean_abs):.3e}", flush=True)
    print(f"starting robustness campaigns at {time.time()-t0:.0f}s", flush=True)
    reports = cachelib.desk_robustness(chains, corpus)
    for (temp, step), rep in sorted(reports.items()):
        print(f"  T={temp:g} step{step}: success={rep.success_rate:.2f} "
              f"mean={rep.mean_pert} max={rep.max_pert}", flush=True)
    print(f"total {time.time()-t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
