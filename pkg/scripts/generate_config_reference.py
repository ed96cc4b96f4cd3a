#!/usr/bin/env python3
"""Regenerate docs/config_reference.md from the experiment config schema."""

import sys
from pathlib import Path

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT))

from tcla.schemas.reference import render_config_reference  # noqa: E402

OUTPUT_PATH = ROOT / "docs" / "config_reference.md"


def main():
    OUTPUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    OUTPUT_PATH.write_text(render_config_reference(), encoding="utf-8")
    print(f"Wrote {OUTPUT_PATH}")


if __name__ == "__main__":
    main()
