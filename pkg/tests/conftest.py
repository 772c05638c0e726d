import json
from pathlib import Path

import pytest
from PIL import Image


def write_png(path: Path, width: int = 4, height: int = 4, colour=(120, 30, 200)) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (width, height), colour).save(path, format="PNG")
    return path


def png_bytes(width: int = 2, height: int = 2, colour=(0, 0, 0)) -> bytes:
    import io

    buf = io.BytesIO()
    Image.new("RGB", (width, height), colour).save(buf, format="PNG")
    return buf.getvalue()


def write_manifest(root: Path, items: list[dict], score_range=(0, 100), dataset="toy", sizes=None) -> Path:
    """Create PNGs for every item and a manifest referencing them."""
    sizes = sizes or {}
    entries = []
    for item in items:
        rel = item.get("path", f"img/{item['id']}.png")
        w, h = sizes.get(item["id"], (4, 4))
        if not (root / rel).exists():
            write_png(root / rel, w, h)
        entry = {k: v for k, v in item.items() if k != "path"}
        entry["path"] = rel
        entries.append(entry)
    path = root / "manifest.json"
    path.write_text(json.dumps({"dataset": dataset, "score_range": list(score_range), "items": entries}))
    return path


@pytest.fixture
def toy_manifest(tmp_path):
    items = [
        {"id": "a1", "category": "ads", "score": 10},
        {"id": "a2", "category": "ads", "score": 55},
        {"id": "a3", "category": "ads", "score": 90},
        {"id": "s1", "category": "scenes", "score": 20},
        {"id": "s2", "category": "scenes", "score": 80},
    ]
    return write_manifest(tmp_path, items)


ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
