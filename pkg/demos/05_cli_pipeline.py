"""
End-to-end pipeline from the command line
=========================================

Run the full distillation pipeline through the CLI entry point, then check
the manifest and read the text report.
"""

import json
import tempfile
from pathlib import Path

from protoflow.cli import main, verify_manifest

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "run"
    cfg = Path(tmp) / "config.json"
    cfg.write_text(json.dumps({"scenario": "desk8", "ipc": 8, "seed": 3, "output_dir": str(out)}))

    code = main(["pipeline", "--config", str(cfg), "--workers", "2"])
    print("exit code:", code)
    print("files:", sorted(p.name for p in out.iterdir()))
    print("manifest verifies:", verify_manifest(out))
    print((out / "report.txt").read_text())

    # a bad value is a configuration error, exit code 2
    print("bad config exit code:", main(["pipeline", "--config", str(cfg), "--lambda", "-1"]))
