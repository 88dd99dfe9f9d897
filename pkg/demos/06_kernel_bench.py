"""Time the fused-bias attention against the unbiased baseline.

The bias never materializes an S x S matrix; it is folded into the softmax
as a per-row scalar on a key-column prefix, so the overhead should stay
within a few percent. Agreement with the dense naive path is checked
before timing.
"""

from i2vlab import benchmark_attend

for size in (128, 512):
    report = benchmark_attend(size=size, heads=4, iters=30, seed=0)
    print(report.summary())
    print(f"  fused median {report.median_fused_s * 1e3:.3f} ms vs "
          f"unbiased {report.median_unbiased_s * 1e3:.3f} ms "
          f"({report.overhead_pct:+.1f}%)")
