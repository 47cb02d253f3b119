"""Run the bundled demo pipeline and record sha256 hashes of its stage outputs.

Usage: python tools/record_demo_hashes.py  (rewrites tests/golden/demo_hashes.json)
"""

import hashlib
import json
import sys
import tempfile
from pathlib import Path

from ctikg.cli import main

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "src" / "ctikg" / "data" / "demo" / "config.toml"
GOLDEN = ROOT / "tests" / "golden" / "demo_hashes.json"
# manifests name library versions; the extract checkpoint is a resume journal in completion order
SKIP = {"manifest.json", "checkpoint.jsonl"}


def output_hashes(out: Path) -> dict[str, str]:
    """Hashes of stage outputs other than the files in SKIP."""
    return {
        p.relative_to(out).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name not in SKIP
    }


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["run-all", "--config", str(CONFIG), "--out", tmp])
        if code:
            sys.exit(code)
        GOLDEN.write_text(json.dumps(output_hashes(Path(tmp)), indent=2, sort_keys=True) + "\n")
    print(f"wrote {GOLDEN}")
