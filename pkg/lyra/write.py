from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from itsfuzz import __version__
from itsfuzz.sdesim import ensemble_table
from itsfuzz.sdesim import final_norms
from itsfuzz.sdesim import path_means
from itsfuzz.sdesim import survival_fraction
from itsfuzz.sdesim import surviving_paths
from itsfuzz.stability import region_table
from itsfuzz.types import AnalysisResult
from itsfuzz.types import LineIntegralCertificate
from itsfuzz.types import QuadraticCertificate
from itsfuzz.types import RegionSweep
from itsfuzz.types import SimEnsemble
from itsfuzz.types import SynthesisResult


def _tag(document: dict) -> dict:
    """Stamps a document with the producing version. No timestamps, so that
    repeated runs give identical files."""
    return {"creator": f"itsfuzz v.{__version__}", **document}


def _flat(matrix) -> list:
    return np.asarray(matrix, dtype=float).tolist()


def _dump(document: dict, filepath: Path | str):
    with open(filepath, "w") as f:
        yaml.dump(document, f, sort_keys=False, default_flow_style=None)


def certificate_document(
    certificate: LineIntegralCertificate | QuadraticCertificate,
) -> dict:
    """A YAML-ready mapping of named matrices. Slack blocks Q are keyed by
    their 1-based indexes, each symmetric pair stored once."""
    if isinstance(certificate, QuadraticCertificate):
        return {
            "kind": "corollary1",
            "P": _flat(certificate.P),
            "Q": {str(i + 1): _flat(q) for i, q in enumerate(certificate.q)},
        }
    blocks = {
        ",".join(str(e + 1) for e in key): _flat(q)
        for key, q in sorted(certificate.q.items())
        if key[0] <= key[1]
    }
    document = {
        "kind": certificate.kind,
        "beta": float(certificate.beta),
        "ordinals": np.asarray(certificate.ordinals).tolist(),
        "Pbar": _flat(certificate.pbar),
        "d": [_flat(d) for d in certificate.pool],
        "D": _flat(certificate.D),
        "Q": blocks,
    }
    if certificate.gains is not None:
        document["gains"] = _flat(certificate.gains)
    return document


def write_certificate(
    certificate: LineIntegralCertificate | QuadraticCertificate,
    filepath: Path | str,
):
    """Writes a certificate to a YAML file."""
    _dump(_tag(certificate_document(certificate)), filepath)


def write_infeasibility(result: AnalysisResult, beta: float, filepath: Path | str):
    """Writes why an analysis found no certificate: the solver status and
    the certificate checks that failed, if any."""
    document = {
        "method": result.method,
        "status": result.status.value,
        "beta": float(beta),
        "violation": float(result.solution.violation),
        "message": result.solution.message,
        "failures": list(result.failures),
    }
    _dump(_tag(document), filepath)


def write_synthesis(result: SynthesisResult, beta: float, filepath: Path | str):
    """
    Writes the outcome of a gain design: its status, the gains and every
    decision matrix at the last iterate.

    :param result: the synthesis result.
    :param beta: the derivative bound the design used.
    :param filepath:
    """
    document = {
        "status": result.status.value,
        "message": result.message,
        "beta": float(beta),
        "iterations": len(result.trace) - 1 if result.trace else 0,
        "gains": None if result.gains is None else _flat(result.gains),
        "matrices": {name: _flat(m) for name, m in result.matrices.items()},
    }
    _dump(_tag(document), filepath)


def write_gains(gains: np.ndarray, filepath: Path | str, status: str, beta: float):
    """Writes feedback gains, shape (s, p, n), to a YAML file."""
    _dump(_tag({"status": status, "beta": float(beta), "gains": _flat(gains)}), filepath)


def write_trace(result: SynthesisResult, filepath: Path | str):
    """Writes the iteration trace as `iter,objective,error`."""
    pd.DataFrame(
        [(row.iteration, row.objective, row.error) for row in result.trace],
        columns=["iter", "objective", "error"],
    ).to_csv(filepath, index=False)


def write_region(region: RegionSweep, filepath: Path | str):
    """Writes a region sweep as `a,b,theorem1,corollary1`."""
    region_table(region).to_csv(filepath, index=False)


def write_samples(table: pd.DataFrame, filepath: Path | str):
    table.to_csv(filepath, index=False)


def _metadata(ensemble: SimEnsemble) -> dict:
    config = ensemble.config
    norms = final_norms(ensemble)
    return {
        "creator": f"itsfuzz v.{__version__}",
        "mode": "open loop" if config.gains is None else "closed loop",
        "seed": config.seed,
        "horizon": config.horizon,
        "steps": config.steps,
        "coarsening": config.coarsening,
        "paths": config.paths,
        "initial_states": np.asarray(config.initial_states).tolist(),
        "survival": survival_fraction(ensemble),
        "surviving_paths": surviving_paths(ensemble).tolist(),
        "mean_final_norm": path_means(norms[:, :, None])[:, 0].tolist(),
    }


def write_ensemble(ensemble: SimEnsemble, filepath: Path | str):
    """Writes an ensemble as `state,path,t,x_1..x_n`, preceded by `#` metadata
    lines. Blown up samples are left empty."""
    with open(filepath, "w") as f:
        for key, value in _metadata(ensemble).items():
            f.write(f"# {key}: {value}\n")
        ensemble_table(ensemble).to_csv(f, index=False)
