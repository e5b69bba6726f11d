"""Structural causal model over (sex, scanner, disease, severity, image)
and the three-step counterfactual procedure: abduct the exogenous noise
from an observation, force intervened variables, re-simulate descendants.

Two image mechanisms plug in: the learned HVAE (production path) and the
exact synthetic renderer keyed by stored anatomy (the oracle used to score
counterfactual quality)."""

from __future__ import annotations

from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

import numpy as np
import yaml

from . import hvae as hvae_mod
from . import synth_scm

IMAGE_VAR = "image"
ALLOWED_IMAGE_PARENTS = {"sex", "scanner", "disease", "severity"}
PSEUDO_HEALTHY = {"disease": 0, "severity": 0.0}


class IncompleteEvidenceError(ValueError):
    pass


@dataclass
class ExogenousPosterior:
    """Per-variable inferred exogenous noise; the image entry is a
    LatentStack (HVAE) or AnatomyParams (oracle)."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, var):
        return self.values[var]


class RootMechanism:
    """Independent root: the exogenous value is the observed value."""

    def abduct(self, observation, var):
        return observation[var]

    def predict(self, exogenous, parents):
        return exogenous


class SeverityMechanism:
    """severity := U_sev when disease=1, else 0. Abduction recovers U_sev
    from diseased observations; for healthy ones it is unidentified and
    recorded as 0 (only no-disease counterfactuals are evaluated)."""

    def abduct(self, observation, var):
        return float(observation["severity"]) if observation["disease"] == 1 else 0.0

    def predict(self, exogenous, parents):
        return float(exogenous) if parents["disease"] == 1 else 0.0


class HvaeImageMechanism:
    """Learned mechanism: abduction encodes to prior-standardized latents,
    prediction decodes them under the (possibly intervened) parents."""

    def __init__(self, model):
        self.model = model

    def abduct(self, observation, var):
        return hvae_mod.encode(self.model, observation[IMAGE_VAR], observation)

    def predict(self, exogenous, parents):
        return hvae_mod.decode(self.model, exogenous, parents)


class OracleImageMechanism:
    """Ground-truth mechanism of the synthetic benchmark: the exogenous
    noise is the stored AnatomyParams, prediction is an exact re-render."""

    def __init__(self, anatomy_by_id=None, size=64, render_cfg=None):
        self.anatomy_by_id = anatomy_by_id or {}
        self.size = size
        self.render_cfg = render_cfg

    def abduct(self, observation, var):
        anatomy = observation.get("anatomy")
        if anatomy is None:
            sid = observation.get("id")
            anatomy = self.anatomy_by_id.get(sid)
        if anatomy is None:
            raise IncompleteEvidenceError(
                "oracle abduction needs 'anatomy' in the observation or a known id"
            )
        return anatomy

    def predict(self, exogenous, parents):
        attrs = synth_scm.AttributeVector(
            sex=int(parents["sex"]),
            scanner=int(parents["scanner"]),
            disease=int(parents["disease"]),
            severity=float(parents["severity"]),
        )
        img, _ = synth_scm.render(attrs, exogenous, self.size, self.render_cfg)
        return img


@dataclass
class CausalGraph:
    parents: dict  # var -> tuple of parent names
    mechanisms: dict  # var -> mechanism object

    def __post_init__(self):
        for var, pas in self.parents.items():
            for p in pas:
                if p not in self.parents:
                    raise ValueError(f"variable {var!r} has unknown parent {p!r}")
            if var not in self.mechanisms:
                raise ValueError(f"variable {var!r} has no registered mechanism")
        try:
            self.order = tuple(TopologicalSorter(
                {v: set(ps) for v, ps in self.parents.items()}
            ).static_order())
        except CycleError as err:
            raise ValueError(f"causal graph contains a cycle: {err}") from err
        if IMAGE_VAR in self.parents:
            img_pa = set(self.parents[IMAGE_VAR])
            if "disease" not in img_pa or not img_pa <= ALLOWED_IMAGE_PARENTS:
                raise ValueError(
                    f"image parents must be a disease-containing subset of "
                    f"{sorted(ALLOWED_IMAGE_PARENTS)}, got {sorted(img_pa)}"
                )

    @property
    def variables(self):
        return tuple(self.order)


def default_graph(image_mechanism, include_scanner_sex: bool = True) -> CausalGraph:
    """The benchmark's graph: independent roots sex/scanner/disease,
    severity driven by disease, image driven by all of them. The
    disease-only variant drops scanner and sex from the image's parents."""
    parents = {
        "sex": (),
        "scanner": (),
        "disease": (),
        "severity": ("disease",),
    }
    img_parents = (
        ("sex", "scanner", "disease", "severity")
        if include_scanner_sex
        else ("disease", "severity")
    )
    parents[IMAGE_VAR] = img_parents
    mechanisms = {
        "sex": RootMechanism(),
        "scanner": RootMechanism(),
        "disease": RootMechanism(),
        "severity": SeverityMechanism(),
        IMAGE_VAR: image_mechanism,
    }
    return CausalGraph(parents=parents, mechanisms=mechanisms)


MECHANISM_IDS = ("root", "severity", "image")


def load_graph(path, image_mechanism) -> CausalGraph:
    """Build a graph from a declarative file: a list of variables with
    parents and mechanism identifiers (root | severity | image)."""
    with open(path, "r", encoding="utf-8") as f:
        spec = yaml.safe_load(f)
    parents = {}
    mechanisms = {}
    for entry in spec["variables"]:
        name = entry["name"]
        parents[name] = tuple(entry.get("parents", ()))
        mid = entry["mechanism"]
        if mid == "root":
            mechanisms[name] = RootMechanism()
        elif mid == "severity":
            mechanisms[name] = SeverityMechanism()
        elif mid == "image":
            mechanisms[name] = image_mechanism
        else:
            raise ValueError(f"unknown mechanism id {mid!r} (known: {MECHANISM_IDS})")
    return CausalGraph(parents=parents, mechanisms=mechanisms)


# ---------------------------------------------------------------------------
# abduction / action / prediction
# ---------------------------------------------------------------------------


def abduct(graph: CausalGraph, observation: dict) -> ExogenousPosterior:
    """Infer exogenous noise for every variable from a full observation."""
    missing = [v for v in graph.variables if v not in observation]
    if missing:
        raise IncompleteEvidenceError(f"observation missing variables: {missing}")
    values = {}
    for var in graph.variables:
        values[var] = graph.mechanisms[var].abduct(observation, var)
    return ExogenousPosterior(values=values)


def predict(graph: CausalGraph, posterior: ExogenousPosterior, intervention: dict) -> dict:
    """Action + prediction: force the intervened variables and re-simulate
    the modified model from the abducted noise, in topological order."""
    unknown = [v for v in intervention if v not in graph.parents]
    if unknown:
        raise ValueError(f"intervention on unknown variables: {unknown}")
    values = {}
    for var in graph.variables:
        if var in intervention:
            values[var] = intervention[var]
        else:
            pa = {p: values[p] for p in graph.parents[var]}
            values[var] = graph.mechanisms[var].predict(posterior[var], pa)
    return values


def counterfactual(graph: CausalGraph, observation: dict, intervention: dict) -> dict:
    """Abduct, force the intervened variables, re-simulate. Returns the
    full counterfactual record {var: value}."""
    unknown = [v for v in intervention if v not in graph.parents]
    if unknown:
        raise ValueError(f"intervention on unknown variables: {unknown}")
    return predict(graph, abduct(graph, observation), intervention)
