"""Baseline vs GearNet vs the beta=0 ablation over a few seeds, written to CSV."""
from gearnet.harness import emit_csv, format_summary, parse_config, run_experiment

cfg = parse_config("""
[data]
classes = 4
rotation = 40

[noise]
kind = uniform
rate = 0.2

[experiment]
preset = quick
repeats = 3
baseline = true
ablation = true
""")

result = run_experiment(cfg)
print(format_summary(result.summary))
emit_csv(result.records, "ablation_metrics.csv")  # one row per (run, seed, step)
print("rows", len(result.records))
