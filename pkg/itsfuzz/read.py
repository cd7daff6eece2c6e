from pathlib import Path

import numpy as np
import pandas as pd
from yaml import safe_load as read_yaml

from itsfuzz.errors import ConfigError
from itsfuzz.tsmodel import build_model
from itsfuzz.types import Complement
from itsfuzz.types import Gaussian
from itsfuzz.types import LineIntegralCertificate
from itsfuzz.types import MembershipFamily
from itsfuzz.types import QuadraticCertificate
from itsfuzz.types import TSModel


def _matrix(value, rows: int, cols: int | None, where: str) -> np.ndarray:
    """A `rows` x `cols` float matrix from nested lists, with located errors."""
    if not isinstance(value, list) or len(value) != rows:
        raise ConfigError(where, f"expected {rows} rows.")
    out = []
    for r, row in enumerate(value):
        if not isinstance(row, list) or (cols is not None and len(row) != cols):
            expected = "a list" if cols is None else f"{cols} entries"
            raise ConfigError(f"{where} row {r + 1}", f"expected {expected}.")
        try:
            out.append([float(e) for e in row])
        except (TypeError, ValueError):
            raise ConfigError(f"{where} row {r + 1}", "entries must be numbers.")
    if len({len(row) for row in out}) > 1:
        raise ConfigError(where, "rows have different lengths.")
    return np.array(out, dtype=float).reshape(rows, -1)


def _grade(value, where: str) -> Gaussian | Complement:
    match value:
        case "complement":
            return Complement()
        case {"c": c, "a": a, **rest}:
            try:
                return Gaussian(float(c), float(a), float(rest.get("m", 0.0)))
            except (TypeError, ValueError):
                raise ConfigError(where, "`c`, `a`, `m` must be numbers.")
        case _:
            raise ConfigError(where, "a grade is either `complement` or a mapping with `c` and `a`.")


def family_from_config(grades: list, dimension: int) -> MembershipFamily:
    """A membership family from its list of grade entries."""
    where = f"memberships[{dimension + 1}]"
    if not isinstance(grades, list) or not grades:
        raise ConfigError(where, "expected a non-empty list of grades.")
    return MembershipFamily(
        dimension,
        tuple(_grade(g, f"{where}[{rho + 1}]") for rho, g in enumerate(grades)),
    )


def model_from_config(section: dict) -> TSModel:
    """Builds a model from the `model` section of a run configuration.
    Locations in errors are 1-based, e.g. `rules[2].A row 1`."""
    families = tuple(
        family_from_config(grades, j)
        for j, grades in enumerate(section.get("memberships", []))
    )
    n = len(families)
    rules = section.get("rules", [])
    if not rules:
        raise ConfigError("rules", "at least one rule is needed.")
    has_input = "B" in rules[0]
    p = None
    ordinals, As, Bs, Cs = [], [], [], []
    for i, rule in enumerate(rules):
        where = f"rules[{i + 1}]"
        alpha = rule.get("ordinals")
        if not isinstance(alpha, list) or len(alpha) != n:
            raise ConfigError(f"{where}.ordinals", f"expected {n} fuzzy set indexes.")
        ordinals.append(alpha)
        As.append(_matrix(rule.get("A"), n, n, f"{where}.A"))
        Cs.append(
            _matrix(rule["C"], n, n, f"{where}.C") if "C" in rule else np.zeros((n, n))
        )
        if ("B" in rule) != has_input:
            raise ConfigError(f"{where}.B", "either every rule has `B` or none does.")
        if has_input:
            b = _matrix(rule["B"], n, p, f"{where}.B")
            p = b.shape[1]
            Bs.append(b)
    return build_model(
        ordinals,
        As,
        families,
        B=Bs if has_input else None,
        C=Cs,
        box=float(section.get("box", 50.0)),
    )


def read_config(path: str | Path) -> dict:
    """Loads a YAML document."""
    with open(path, "r") as stream:
        return read_yaml(stream)


def read_model(path: str | Path) -> TSModel:
    """A model from a YAML file, either a run configuration or a bare model section."""
    document = read_config(path)
    return model_from_config(document.get("model", document))


def _label(key: str) -> tuple[int, ...]:
    return tuple(int(e) - 1 for e in str(key).split(","))


def certificate_from_dict(
    document: dict,
) -> LineIntegralCertificate | QuadraticCertificate:
    """Rebuilds a certificate. Off-diagonal slack blocks are stored once and
    shared by both index orders."""
    if document["kind"] == "corollary1":
        q = document["Q"]
        return QuadraticCertificate(
            P=np.array(document["P"], dtype=float),
            q=tuple(np.array(q[k], dtype=float) for k in sorted(q, key=int)),
        )
    blocks = {}
    for key, value in document["Q"].items():
        index = _label(key)
        blocks[index] = np.array(value, dtype=float)
        blocks[(index[1], index[0], *index[2:])] = blocks[index]
    gains = document.get("gains")
    return LineIntegralCertificate(
        kind=document["kind"],
        ordinals=np.array(document["ordinals"], dtype=int),
        pbar=np.array(document["Pbar"], dtype=float),
        pool=tuple(np.array(d, dtype=float) for d in document["d"]),
        D=np.array(document["D"], dtype=float),
        q=blocks,
        beta=float(document["beta"]),
        gains=None if gains is None else np.array(gains, dtype=float),
    )


def read_certificate(path: str | Path) -> LineIntegralCertificate | QuadraticCertificate:
    """Returns a certificate from a YAML file."""
    return certificate_from_dict(read_config(path))


def read_gains(path: str | Path) -> np.ndarray:
    """Returns the gains (s, p, n) of a gains or a synthesis file."""
    document = read_config(path)
    if document.get("gains") is None:
        raise ConfigError(str(path), "no `gains` found.")
    return np.array(document["gains"], dtype=float)


def read_region(path: str | Path) -> pd.DataFrame:
    """Returns a region sweep table."""
    return pd.read_csv(path, comment="#", dtype={"theorem1": str, "corollary1": str})


def read_trace(path: str | Path) -> pd.DataFrame:
    """Returns a CCL iteration trace."""
    return pd.read_csv(path, comment="#")


def read_samples(path: str | Path) -> pd.DataFrame:
    """Returns a sampling report."""
    return pd.read_csv(path, comment="#")


def read_ensemble(path: str | Path) -> pd.DataFrame:
    """Returns a Monte Carlo ensemble, skipping the metadata header."""
    return pd.read_csv(path, comment="#", dtype={"path": str})
