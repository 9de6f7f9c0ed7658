"""PA against Horn-Schunck optical flow and raw frame differences.

Times all three motion cues on the same 224x224 frame pairs on one thread
and prints the table (with the PA/Horn-Schunck ratio), then the extra
cost of the E2 encoding over E1.

    python3 demos/flow_benchmark.py [pairs]
"""
import sys

from pan import bench

pairs = int(sys.argv[1]) if len(sys.argv) > 1 else 32
report = bench.run_benchmark(size=224, pairs=pairs, reps=3, threads=1)
print(report.to_table())

t = bench.time_encodings(size=224)
print(f"E1 {t['e1_ms_per_pair']:.2f} ms/pair, E2 {t['e2_ms_per_pair']:.2f} ms/pair "
      f"(E2 adds the sigmoid gate and appearance product)")
