"""
End-to-end run through the command-line entry point
===================================================

Writes a config with a synthetic corpus, runs every stage and lists the
output bundle.
"""

# %%
import json
import tempfile
from pathlib import Path

from darkprobe.cli import main

work = Path(tempfile.mkdtemp())
(work / "run.toml").write_text(
    f'out = "{work / "out"}"\n'
    'resolutions = ["6h", "24h"]\nseries_ports = 5\nforecast_ports = 2\np_max = 2\n'
    '[[synth]]\nkind = "zipf_traffic"\nports = [23, 22, 80, 443, 2323]\nn_events = 40000\n'
)
code = main(["run", "--config", str(work / "run.toml")])
print("exit code", code)

# %%
manifest = json.loads((work / "out" / "manifest.json").read_text())
print(manifest["stages"], manifest["warnings"])
for name in manifest["files"]:
    print(name)
print((work / "out" / "forecast" / "summary_table.csv").read_text())
