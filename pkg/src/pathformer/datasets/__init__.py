"""Small triple files shipped with the package (regenerate with ``scripts/make_toy.py``)."""

from pathlib import Path

ROOT = Path(__file__).resolve().parent


def fixture_paths(name: str) -> tuple[Path, Path, Path]:
    """``(train, valid, test)`` TSV paths of a shipped fixture (``toy30`` or ``tiny6``)."""
    base = ROOT / name
    if not base.is_dir():
        raise FileNotFoundError(f"no shipped fixture named {name!r}")
    return base / "train.tsv", base / "valid.tsv", base / "test.tsv"


def load_fixture(name: str):
    from ..kg import load_split

    return load_split(*fixture_paths(name))
