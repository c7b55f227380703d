"""Built-in example programs shipped as assembly sources.

`install` assembles them into `.ifn` package files inside a library
directory, which is how the benchmark harness and tests provision a
package search path.
"""

from __future__ import annotations

import os
from importlib import resources

from ..asm import assemble


def names() -> list[str]:
    out = []
    for entry in resources.files(__package__).iterdir():
        if entry.name.endswith(".ifasm"):
            out.append(entry.name[: -len(".ifasm")])
    return sorted(out)


def source(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.ifasm").read_text()


def install(dest_dir, only: list[str] | None = None) -> list[str]:
    """Assemble built-ins into `<dest_dir>/<name>.ifn`; returns the paths."""
    os.makedirs(dest_dir, exist_ok=True)
    paths = []
    for name in only if only is not None else names():
        data = assemble(source(name))
        path = os.path.join(dest_dir, f"{name}.ifn")
        with open(path, "wb") as fh:
            fh.write(data)
        paths.append(path)
    return paths
