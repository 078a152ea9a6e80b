"""
Rate curves from the command line
=================================

Write a small config, run it through the ``dpsco`` entry point and turn the
per-trial CSV into an aggregated table.
"""

import tempfile
from pathlib import Path

from dpsco.cli import main

work = Path(tempfile.mkdtemp())
(work / "sweep.cfg").write_text("""\
algo = nsgd
distribution = ball_uniform_mean_estimation
n = 250, 500, 1000, 2000
d = 10
epsilon = 1
delta = 1e-7
trials = 5
seed = 7
""")

# equivalent shell call: dpsco --config sweep.cfg --out sweep.csv --emit-table
status = main(["--config", str(work / "sweep.cfg"), "--out", str(work / "sweep.csv"), "--emit-table"])
print("exit status", status)
print("files:", sorted(p.name for p in work.iterdir()))
