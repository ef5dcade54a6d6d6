"""JSON serialization of market specs and reduction plans.

Every input and output artifact of the command line is a JSON document;
numbers are IEEE-754 doubles in decimal text.  Driver and Brownian
indices are 0-based everywhere.
"""

from __future__ import annotations

import json

from .densities import Density
from .model import ContinuousJumpSpec, DiscreteJumpSpec, MarketSpec
from .reduction import ContinuousPlan, DiscretePlan
from .timefns import TimeFunction

__all__ = [
    "market_to_json",
    "market_from_json",
    "plan_to_json",
    "plan_from_json",
    "dump_json",
    "load_json",
]


def _fn_doc(fn: TimeFunction):
    if fn.kind == "const":
        return fn.constant_value
    return fn.to_json()


def market_to_json(spec: MarketSpec) -> dict:
    doc = {
        "horizon": spec.horizon,
        "rate": _fn_doc(spec.rate),
        "brownians": spec.n_brownians,
        "stocks": [
            {
                "s0": spec.s0[i],
                "alpha": _fn_doc(spec.alpha[i]),
                "sigma": [_fn_doc(fn) for fn in spec.sigma[i]],
            }
            for i in range(spec.n)
        ],
    }
    jumps = spec.jumps
    if isinstance(jumps, DiscreteJumpSpec):
        doc["jumps"] = {
            "type": "discrete",
            "intensities": [_fn_doc(fn) for fn in jumps.intensities],
            "loadings": [
                [_fn_doc(fn) for fn in row] for row in jumps.loadings
            ],
        }
        if jumps.marks is not None:
            doc["jumps"]["marks"] = list(jumps.marks)
    elif isinstance(jumps, ContinuousJumpSpec):
        dens = jumps.density.to_json()
        doc["jumps"] = {
            "type": "density",
            "family": dens["family"],
            "params": dens["params"],
            "support": dens["support"],
            "total_intensity": _fn_doc(jumps.total_intensity),
        }
    else:
        doc["jumps"] = None
    return doc


def market_from_json(doc: dict) -> MarketSpec:
    stocks = doc["stocks"]
    jumps_doc = doc.get("jumps")
    jumps = None
    if jumps_doc:
        if jumps_doc["type"] == "discrete":
            jumps = DiscreteJumpSpec(
                intensities=tuple(
                    TimeFunction.coerce(x) for x in jumps_doc["intensities"]
                ),
                loadings=tuple(
                    tuple(TimeFunction.coerce(x) for x in row)
                    for row in jumps_doc["loadings"]
                ),
                marks=(
                    tuple(jumps_doc["marks"]) if "marks" in jumps_doc else None
                ),
            )
        elif jumps_doc["type"] == "density":
            jumps = ContinuousJumpSpec(
                density=Density(
                    family=jumps_doc["family"],
                    support=tuple(jumps_doc["support"]),
                    params=dict(jumps_doc.get("params", {})),
                ),
                total_intensity=TimeFunction.coerce(jumps_doc["total_intensity"]),
            )
        else:
            raise ValueError(f"unknown jumps type {jumps_doc['type']!r}")
    n_brownians = int(doc.get("brownians", len(stocks[0].get("sigma", []))))
    spec = MarketSpec(
        horizon=float(doc["horizon"]),
        s0=tuple(s["s0"] for s in stocks),
        alpha=tuple(TimeFunction.coerce(s["alpha"]) for s in stocks),
        rate=TimeFunction.coerce(doc["rate"]),
        sigma=tuple(
            tuple(TimeFunction.coerce(x) for x in s.get("sigma", []))
            for s in stocks
        ),
        jumps=jumps,
    )
    if spec.n_brownians != n_brownians:
        raise ValueError(
            f"stocks carry {spec.n_brownians} sigma columns but the document "
            f"declares {n_brownians} Brownian drivers"
        )
    return spec


def plan_to_json(plan) -> dict:
    return plan.to_json()


def plan_from_json(doc: dict):
    if "cells" in doc:
        return ContinuousPlan(
            cells=tuple(tuple(c) for c in doc["cells"]),
            neglect_remainder=bool(doc.get("neglect_remainder", False)),
            keep_brownians=(
                tuple(doc["keep_brownians"]) if "keep_brownians" in doc else None
            ),
        )
    return DiscretePlan(
        retain=tuple(doc.get("retain", ())),
        batches=tuple(tuple(b) for b in doc.get("batches", ())),
        neglect=tuple(doc.get("neglect", ())),
        keep_brownians=(
            tuple(doc["keep_brownians"]) if "keep_brownians" in doc else None
        ),
    )


def dump_json(doc, path=None, pretty: bool = True) -> str:
    """Canonical JSON text: sorted keys, no whitespace variance."""
    text = json.dumps(doc, sort_keys=True, indent=2 if pretty else None)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def load_json(path: str):
    with open(path) as fh:
        return json.load(fh)
