import csv
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

Meta = Mapping[str, Any]


def write_json(path: Path, data: Any, meta: Meta | None = None) -> Path:
    """Write ``data`` as sorted, indented JSON; ``meta`` keys are merged into the top-level object."""
    if meta:
        data = {**data, **meta}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def meta_comment(meta: Meta) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items()))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], meta: Meta | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        if meta:
            f.write(meta_comment(meta) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return path


def check_line(name: str, passed: bool, note: str = "") -> str:
    mark = "✓" if passed else "✗"
    return f"  {name}: {mark}" + (f" ({note})" if note else "")
