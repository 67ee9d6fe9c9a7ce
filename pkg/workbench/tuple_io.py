"""
Tuple file format (TSV):

    #relation<TAB>R
    #attrs<TAB>A<TAB>B
    a1<TAB>b1
    ...
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from joins.join_model import JoinSpec, TupleStore
from utils.error_handler import DataFormatError, UnknownRelationError
from utils.log_setup import setup_logger

RELATION_HEADER = "#relation"
ATTRIBUTES_HEADER = "#attrs"
SUFFIX = ".tsv"
FORBIDDEN = ("\t", "\n", "\r")

logger = setup_logger("TupleIO")


def relation_path(data_dir: Path, relation: str) -> Path:
    return Path(data_dir) / f"{relation}{SUFFIX}"


def _check_token(token: str, relation: str, row: int) -> str:
    if any(c in token for c in FORBIDDEN):
        raise DataFormatError(
            f"Value {token!r} of {relation} (row {row}) contains a tab or line break",
            context={"relation": relation, "row": row},
        )
    return token


def write_relation(path: Path, relation: str, attributes: Sequence[str], frame: pd.DataFrame) -> Path:
    """Write tokens verbatim, one tab-separated line per tuple."""
    path = Path(path)
    lines = [f"{RELATION_HEADER}\t{relation}", "\t".join([ATTRIBUTES_HEADER, *attributes])]
    for row, values in enumerate(frame[list(attributes)].itertuples(index=False, name=None)):
        lines.append("\t".join(_check_token(str(v), relation, row) for v in values))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")
    return path


def read_relation(path: Path) -> Tuple[str, Tuple[str, ...], pd.DataFrame]:
    """Parse one relation file; arity errors name the offending line."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            text = handle.read()
    except OSError as e:
        raise DataFormatError(f"Cannot read {path}: {e}", context={"path": str(path)}) from e

    lines = [line[:-1] if line.endswith("\r") else line for line in text.split("\n")]
    if text.endswith("\n"):
        lines.pop()
    relation_line = lines[0].split("\t") if lines else []
    attrs_line = lines[1].split("\t") if len(lines) > 1 else []
    if len(relation_line) != 2 or relation_line[0] != RELATION_HEADER or not attrs_line \
            or attrs_line[0] != ATTRIBUTES_HEADER:
        raise DataFormatError(f"{path}: missing '{RELATION_HEADER}' / '{ATTRIBUTES_HEADER}' header lines",
                              context={"path": str(path)})
    relation = relation_line[1].strip()
    attributes = tuple(attrs_line[1:])
    if not relation or not attributes:
        raise DataFormatError(f"{path}: empty relation name or attribute list", context={"path": str(path)})

    # every remaining line is a tuple; an empty line is the empty token of a unary relation
    rows: List[List[str]] = []
    for number, line in enumerate(lines[2:], start=3):
        values = line.split("\t")
        if len(values) != len(attributes):
            raise DataFormatError(
                f"{path}:{number}: expected {len(attributes)} values, found {len(values)}",
                context={"path": str(path), "line": number, "relation": relation},
            )
        rows.append(values)

    if rows:
        frame = pd.DataFrame(rows, columns=list(attributes), dtype=object)
    else:
        frame = pd.DataFrame({a: pd.Series([], dtype=object) for a in attributes})
    return relation, attributes, frame


def load(path: Path, spec: JoinSpec, store: Optional[TupleStore] = None) -> TupleStore:
    """Load one relation file into a store, checking header and declared size against the spec."""
    relation, attributes, frame = read_relation(path)
    if relation not in spec.relation_names:
        raise UnknownRelationError(f"{path}: relation '{relation}' is not in the join spec",
                                   context={"path": str(path), "relation": relation})
    schema = spec.relation(relation)
    if attributes != schema.attributes:
        raise DataFormatError(
            f"{path}: header {list(attributes)} does not match spec attributes {list(schema.attributes)}",
            context={"path": str(path), "relation": relation},
        )
    if schema.declared_size is not None and schema.declared_size != len(frame):
        raise DataFormatError(
            f"{path}: {len(frame)} tuples loaded but the spec declares {schema.declared_size}",
            context={"path": str(path), "relation": relation, "declared": schema.declared_size, "loaded": len(frame)},
        )
    store = store or TupleStore(spec)
    store.add_relation(relation, frame)
    logger.debug(f"Loaded {len(frame)} tuple(s) of {relation} from {path}")
    return store


def load_store(spec: JoinSpec, data_dir: Path) -> TupleStore:
    """Load every relation of the spec from ``<data_dir>/<relation>.tsv``."""
    store = TupleStore(spec)
    for relation in spec.relations:
        path = relation_path(data_dir, relation.name)
        if not path.exists():
            raise DataFormatError(f"No data file for relation {relation.name}: {path}",
                                  context={"relation": relation.name, "path": str(path)})
        load(path, spec, store)
    logger.info(f"Loaded {sum(store.sizes().values())} tuple(s) from {data_dir}")
    return store


def save_store(store: TupleStore, data_dir: Path) -> Dict[str, Path]:
    return {
        r.name: write_relation(relation_path(data_dir, r.name), r.name, r.attributes, store.frame(r.name))
        for r in store.spec.relations
    }
