#!/usr/bin/env python3
"""Build a small offline demo workspace: a markup corpus, a scripted mock
gateway, the ingested knowledge base, and both retrieval indices.

Usage: python3 scripts/build_demo_kb.py [out_dir]   (default: ./demo)

Everything runs against the mock backend, so no network or API key is
needed. The printed commands show how to query the result.
"""

import json
import sys
from pathlib import Path

from tosrr.cli import run

CORPUS = """\
# Foundations
## Taiyang patterns
### Headache point
Taiyang disease brings headache fever chills and a floating pulse that \
signals an exterior condition needing warm acrid release.

Mahuang decoction treats asthma with no sweating and body aches by opening \
the exterior and diffusing the lung.
## Guizhi patterns
Guizhi decoction treats sweating with aversion to wind and a weak floating \
pulse by harmonizing nutritive and defensive qi.
# Formulas
Baizhu herb strengthens the spleen against dampness and loose stools.

Jiegeng decoction treats pulmonary abscess by draining pus and detoxifying.
"""

SCRIPT = [
    {"tag": "qa_generate",
     "default": "Q: What does taiyang disease include?\nA: Headache and fever."},
    {"tag": "summary_generate",
     "default": "Taiyang disease presents with headache, fever and chills."},
    {"tag": "version_judge", "default": "A"},
    {"tag": "triple_extract",
     "default": "taiyang disease | include | headache\n"
                "mahuang decoction | treat | asthma"},
    {"tag": "relevance_judge", "default": "keep all"},
    {"tag": "support_judge", "default": "YES"},
    {"tag": "helpful_judge", "default": "YES"},
    {"tag": "answer",
     "default": "Based on the knowledge base, use the indicated decoction."},
    {"tag": "reformulate", "default": "rewritten question"},
]


def main() -> int:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo")
    out.mkdir(parents=True, exist_ok=True)
    corpus = out / "corpus.md"
    corpus.write_text(CORPUS, encoding="utf-8")
    script = out / "script.jsonl"
    script.write_text("\n".join(json.dumps(r) for r in SCRIPT) + "\n", encoding="utf-8")
    kb = out / "kb.jsonl"
    idx = out / "demo.idx"
    code = run(["ingest", "--kb", str(kb), "--input", str(corpus),
                "--script", str(script), "--book", "Demo Book"])
    if code:
        return code
    code = run(["index", "--kb", str(kb), "--out", str(idx)])
    if code:
        return code
    print("\ntry:")
    print(f"  tosrr recall --kb {kb} --index {idx} "
          f"--question 'taiyang disease headache'")
    print(f"  tosrr query --kb {kb} --index {idx} --script {script} "
          f"--question 'what does taiyang disease include?'")
    print(f"  tosrr serve --kb {kb} --index {idx} --script {script}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
