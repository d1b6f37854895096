"""Kriging intervals for the mean delay in a four-node ring network.

The simulator tracks the first 30 messages through the ring and reports
their average delay. We sweep the mean message length, fit stochastic
kriging on 41 lengths with 5 replications, and run a short benchmark
to print a results table.

    python demos/network_delays.py
"""
import numpy as np

from simpi import ExperimentConfig, fit_sk, generate_design, run_experiment, sk_interval_model
from simpi.bench import report_markdown
from simpi.simulators import ring_routes

print("routes (0-based nodes -> edges):")
for (o, d), path in sorted(ring_routes().items()):
    print(f"  {o}->{d}: {path}")

lengths = np.arange(200.0, 601.0, 10.0)
train = generate_design("network", lengths, 5, seed=4)
model = sk_interval_model(fit_sk(train, seed=4), 0.05)
print("\nlength   mean delay   95% interval")
for x in (200.0, 400.0, 600.0):
    L, U = model.eval(x)
    print(f"{x:6.0f}   {train.ybar[lengths == x][0]:.5f}     [{L:.5f}, {U:.5f}]")

report = run_experiment(ExperimentConfig(preset="net-design2", methods=["SK", "QRF"], repetitions=5, seed=0))
print()
print(report_markdown(report))
