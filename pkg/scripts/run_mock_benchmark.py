#!/usr/bin/env python3
"""Run the four-group ablation benchmark end to end against the mock
backend and print the score table.

Usage: python3 scripts/run_mock_benchmark.py [out_dir]   (default: ./bench-out)

Builds a demo knowledge base first (via build_demo_kb), writes a 10-item
exam fixture, then runs `tosrr bench`. Report files land in out_dir.
"""

import json
import sys
from pathlib import Path

from tosrr.cli import run

sys.path.insert(0, str(Path(__file__).parent))
import build_demo_kb  # noqa: E402


def main() -> int:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "bench-out")
    out.mkdir(parents=True, exist_ok=True)
    demo = out / "demo"
    sys.argv = ["build_demo_kb.py", str(demo)]
    code = build_demo_kb.main()
    if code:
        return code

    items = []
    for i in range(10):
        items.append({
            "id": f"q{i}",
            "stem": f"Question {i}: which formula applies?",
            "options": {"A": "the indicated decoction", "B": "none"},
            "key": "A" if i % 2 == 0 else "B",
            "category": "factual" if i < 7 else "case_analysis",
        })
    items_path = out / "items.jsonl"
    items_path.write_text("\n".join(json.dumps(i) for i in items) + "\n",
                          encoding="utf-8")

    # The chat script must answer with a standalone choice letter so the
    # exam scorer can extract it; items keyed "A" (the even ones) score.
    bench_script = out / "bench-script.jsonl"
    records = [json.loads(line) for line in
               (demo / "script.jsonl").read_text(encoding="utf-8").splitlines()]
    records = [r for r in records if r["tag"] != "answer"]
    records.append({"tag": "answer", "default": "The answer is A"})
    bench_script.write_text("\n".join(json.dumps(r) for r in records) + "\n",
                            encoding="utf-8")

    return run(["bench",
                "--kb", str(demo / "kb.jsonl"),
                "--index", str(demo / "demo.idx"),
                "--script", str(bench_script),
                "--items", str(items_path),
                "--out", str(out / "reports")])


if __name__ == "__main__":
    sys.exit(main())
