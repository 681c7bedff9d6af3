"""A normal model with bounded per-observation offsets, fitted three ways.

Each observation is a shared level plus an offset kappa_j whose magnitude is
capped by a latent psi_j < 2. MCMC and MC-CAVI handle the constraint inside a
Metropolis-within-Gibbs chain; BBVI uses truncated-normal variational factors
and noisy score-function gradients. The harness writes traces, a summary table
and SVG fit plots for all three.

    python demos/constrained_model_engines.py [OUTDIR]
"""
import json
import sys

from mccavi.harness import report
from mccavi.harness.config import ExperimentConfig
from mccavi.harness.experiments import run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "runs/demo-constrained"
bundle = run_experiment(ExperimentConfig("example2", out=out))

print("posterior summaries after burn-in, mean (sd) of each trace:\n")
with open(bundle.out + "/table.txt") as fh:
    print(fh.read())

manifest = json.load(open(bundle.manifest))
for label, info in manifest["runs"].items():
    print(f"{label:8s} {info['sweeps']:5d} sweeps, burn-in {info['burn_in']:5d}, {info['elapsed_secs']:.2f}s")
print(f"MCMC states outside |kappa| < psi < 2: {manifest['runs']['mcmc']['constraint_violations']}")

# the band of fitted curves against the noise-free generating curve
for label in ("mcmc", "mc-cavi"):
    band = report.read_trace_csv(f"{bundle.out}/bands/{label}.csv")
    print(f"{label}: 95% band covers {report.band_coverage(band['lo'], band['hi'], band['truth']):.0%} "
          "of the true curve")
print("The MC-CAVI band only tracks sweep-to-sweep noise in the fitted mean, hence the low coverage.")
print(f"\nplots: {', '.join(bundle.plots)}")
