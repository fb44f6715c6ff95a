"""Cohort I/O, synthetic-cohort simulation, augmentation, and CV splitting.

The cohort file is a single JSON document; simulation draws two latent risk
groups with geometric discrete event-time distributions on annual bins and
calibrated uniform censoring, so recovery experiments have a known oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import (ANATOMICAL_KINDS, EDGE_ATTR_DIM, Edge, EdgeKind, Node, NodeKind,
                    PatientGraph, build_patient_graph, validate_graph)
from .metrics import harrell_cindex
from .objective import SurvivalLabel

SCHEMA_VERSION = 1

REGION_KEYS: dict[str, NodeKind] = {
    "liver": NodeKind.LIVER_PARENCHYMA,
    "remnant": NodeKind.FUTURE_LIVER_REMNANT,
    "hepatic_veins": NodeKind.HEPATIC_VEINS,
    "portal_veins": NodeKind.PORTAL_VEINS,
    "tumors": NodeKind.METASTATIC_TUMORS,
}
KIND_TO_KEY = {v: k for k, v in REGION_KEYS.items()}


class CohortError(ValueError):
    """Schema or invariant violation in a cohort file or record."""


@dataclass(frozen=True)
class RegionData:
    present: bool
    features: np.ndarray | None = None
    centroid: np.ndarray | None = None


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    regions: dict[NodeKind, RegionData]
    clinical: np.ndarray
    dfs: SurvivalLabel
    os: SurvivalLabel

    def __post_init__(self):
        if self.dfs.time > self.os.time:
            raise CohortError(f"patient {self.patient_id}: DFS time exceeds OS time")
        if self.clinical.size and (self.clinical.min() < -1e-9 or self.clinical.max() > 1 + 1e-9):
            raise CohortError(f"patient {self.patient_id}: clinical features outside [0, 1]")


def record_to_graph(record: PatientRecord, offset_scale: float = 100.0) -> PatientGraph:
    feats = {k: r.features for k, r in record.regions.items() if r.present}
    cents = {k: r.centroid for k, r in record.regions.items() if r.present}
    return build_patient_graph(feats, record.clinical, cents,
                               patient_id=record.patient_id, offset_scale=offset_scale)


def _require(cond: bool, msg: str):
    if not cond:
        raise CohortError(msg)


def _parse_label(obj, pid: str, field_name: str) -> SurvivalLabel:
    _require(isinstance(obj, dict) and set(obj) == {"time_years", "event"},
             f"patient {pid}: {field_name} must have exactly time_years and event")
    try:
        return SurvivalLabel(float(obj["time_years"]), int(obj["event"]))
    except ValueError as exc:
        raise CohortError(f"patient {pid}: {field_name}: {exc}") from exc


def load_cohort(path) -> list[PatientRecord]:
    """Parse and validate a cohort file; record order is preserved."""
    with open(path) as fh:
        doc = json.load(fh)
    _require(isinstance(doc, dict) and set(doc) == {"schema_version", "feature_schema", "patients"},
             "top level must have schema_version, feature_schema, patients")
    _require(doc["schema_version"] == SCHEMA_VERSION,
             f"unsupported schema_version {doc['schema_version']}")
    schema = doc["feature_schema"]
    _require(isinstance(schema, dict) and set(schema) == {"region_len", "clinical_len"},
             "feature_schema must have region_len and clinical_len")
    region_len = int(schema["region_len"])
    clinical_len = int(schema["clinical_len"])

    records: list[PatientRecord] = []
    for entry in doc["patients"]:
        _require(isinstance(entry, dict) and set(entry) == {"id", "regions", "clinical", "dfs", "os"},
                 "patient entries must have id, regions, clinical, dfs, os")
        pid = str(entry["id"])
        _require(set(entry["regions"]) == set(REGION_KEYS),
                 f"patient {pid}: regions must have exactly keys {sorted(REGION_KEYS)}")
        regions: dict[NodeKind, RegionData] = {}
        for key, kind in REGION_KEYS.items():
            robj = entry["regions"][key]
            _require(isinstance(robj, dict) and "present" in robj,
                     f"patient {pid}: region {key} missing present flag")
            if not robj["present"]:
                regions[kind] = RegionData(False)
                continue
            _require(set(robj) == {"present", "features", "centroid"},
                     f"patient {pid}: region {key} must have present, features, centroid")
            feats = np.asarray(robj["features"], dtype=np.float64)
            cent = np.asarray(robj["centroid"], dtype=np.float64)
            _require(feats.shape == (region_len,),
                     f"patient {pid}: region {key} features must have length {region_len}")
            _require(cent.shape == (EDGE_ATTR_DIM,),
                     f"patient {pid}: region {key} centroid must have length {EDGE_ATTR_DIM}")
            regions[kind] = RegionData(True, feats, cent)
        clinical = np.asarray(entry["clinical"], dtype=np.float64)
        _require(clinical.shape == (clinical_len,),
                 f"patient {pid}: clinical features must have length {clinical_len}")
        record = PatientRecord(pid, regions, clinical,
                               _parse_label(entry["dfs"], pid, "dfs"),
                               _parse_label(entry["os"], pid, "os"))
        violations = validate_graph(record_to_graph(record))
        _require(not violations, f"patient {pid}: invalid graph: {violations}")
        records.append(record)
    return records


def save_cohort(records: list[PatientRecord], path, region_len: int, clinical_len: int) -> None:
    patients = []
    for rec in records:
        regions = {}
        for key, kind in REGION_KEYS.items():
            r = rec.regions[kind]
            if r.present:
                regions[key] = {"present": True, "features": r.features.tolist(),
                                "centroid": r.centroid.tolist()}
            else:
                regions[key] = {"present": False}
        patients.append({
            "id": rec.patient_id,
            "regions": regions,
            "clinical": rec.clinical.tolist(),
            "dfs": {"time_years": rec.dfs.time, "event": rec.dfs.event},
            "os": {"time_years": rec.os.time, "event": rec.os.event},
        })
    doc = {"schema_version": SCHEMA_VERSION,
           "feature_schema": {"region_len": region_len, "clinical_len": clinical_len},
           "patients": patients}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic cohort with known latent risk groups.
# ---------------------------------------------------------------------------

# Nominal region centroids in millimetres; jitter is added per patient.
_REGION_CENTERS = {
    NodeKind.LIVER_PARENCHYMA: np.array([60.0, 50.0, 40.0]),
    NodeKind.FUTURE_LIVER_REMNANT: np.array([30.0, 62.0, 46.0]),
    NodeKind.HEPATIC_VEINS: np.array([72.0, 66.0, 54.0]),
    NodeKind.PORTAL_VEINS: np.array([46.0, 34.0, 52.0]),
    NodeKind.METASTATIC_TUMORS: np.array([56.0, 44.0, 34.0]),
}


@dataclass(frozen=True)
class Scenario:
    """Generating model of the two-group synthetic cohort.

    Event times are geometric on annual bins: per group g, the high-risk
    group's hazard is the base hazard times `hazard_ratio` (capped at 0.95).
    A shared uniform draw couples the two endpoints so DFS <= OS holds
    pointwise (the DFS hazard dominates the OS hazard in both groups).
    """

    signal_strength: float = 1.5
    censoring_rate: float = 0.3
    hazard_ratio: float = 3.0
    base_os_hazard: float = 0.24
    base_dfs_hazard: float = 0.32
    region_len: int = 8
    clinical_len: int = 6

    def __post_init__(self):
        if not (0.0 <= self.censoring_rate < 1.0):
            raise ValueError("censoring_rate must be in [0, 1)")
        if self.hazard_ratio <= 0 or self.base_os_hazard <= 0 or self.base_dfs_hazard <= 0:
            raise ValueError("hazards and ratio must be positive")
        if self.base_dfs_hazard < self.base_os_hazard:
            raise ValueError("base DFS hazard must be >= base OS hazard")

    def group_hazards(self, task: str) -> np.ndarray:
        base = self.base_os_hazard if task == "os" else self.base_dfs_hazard
        return np.array([base, min(base * self.hazard_ratio, 0.95)])


def _geometric_time(u: np.ndarray, hazard: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of the geometric bin index (support 0, 1, 2, ...)."""
    return np.ceil(np.log1p(-u) / np.log1p(-hazard)).astype(np.int64) - 1


def _mixture_pmf(hazards: np.ndarray, k_max: int = 400) -> np.ndarray:
    k = np.arange(k_max)
    pmf = np.zeros(k_max)
    for h in hazards:
        pmf += 0.5 * (1.0 - h) ** k * h
    return pmf


def _calibrate_censoring(scenario: Scenario) -> float:
    """Upper bound of the uniform censoring window hitting the target rate.

    A patient with integer event time T is censored with probability
    min(T / c_max, 1) under C ~ U(0, c_max); the expectation over the OS
    mixture is monotone in c_max, so bisection applies.
    """
    target = scenario.censoring_rate
    pmf = _mixture_pmf(scenario.group_hazards("os"))
    k = np.arange(pmf.shape[0])

    def expected(c_max: float) -> float:
        return float(pmf @ np.minimum(k / c_max, 1.0))

    lo, hi = 1e-6, 1e6
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def simulate_cohort(n: int, seed: int, scenario: Scenario = Scenario()
                    ) -> tuple[list[PatientRecord], np.ndarray]:
    """Two-group synthetic cohort; returns records plus the latent groups.

    Features are group-informative patterns scaled by signal strength plus
    unit Gaussian noise; clinical features are min-max normalized across the
    cohort after generation. Event times are integer years (annual bins).
    """
    if n < 10:
        raise ValueError("need at least 10 patients")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))

    region_patterns = {}
    for kind in ANATOMICAL_KINDS:
        p = rng.normal(size=scenario.region_len)
        region_patterns[kind] = p / np.linalg.norm(p)
    p = rng.normal(size=scenario.clinical_len)
    clinical_pattern = p / np.linalg.norm(p)

    groups = rng.integers(0, 2, size=n)
    u = rng.uniform(size=n)
    h_os = scenario.group_hazards("os")[groups]
    h_dfs = scenario.group_hazards("dfs")[groups]
    t_os = _geometric_time(u, h_os).astype(np.float64)
    t_dfs = _geometric_time(u, h_dfs).astype(np.float64)

    sign = 2.0 * groups - 1.0
    region_feats = {
        kind: sign[:, None] * scenario.signal_strength * region_patterns[kind]
        + rng.normal(size=(n, scenario.region_len))
        for kind in ANATOMICAL_KINDS
    }
    clinical_raw = (sign[:, None] * scenario.signal_strength * clinical_pattern
                    + rng.normal(size=(n, scenario.clinical_len)))
    span = clinical_raw.max(axis=0) - clinical_raw.min(axis=0)
    span[span < 1e-12] = 1.0
    clinical = (clinical_raw - clinical_raw.min(axis=0)) / span

    centroids = {
        kind: _REGION_CENTERS[kind] + rng.normal(0.0, 10.0, size=(n, 3))
        for kind in ANATOMICAL_KINDS
    }

    if scenario.censoring_rate > 0.0:
        c_max = _calibrate_censoring(scenario)
        censor = rng.uniform(0.0, c_max, size=n)
    else:
        censor = np.full(n, np.inf)

    records: list[PatientRecord] = []
    for i in range(n):
        regions = {
            kind: RegionData(True, region_feats[kind][i], centroids[kind][i])
            for kind in ANATOMICAL_KINDS
        }
        os_lab = (SurvivalLabel(t_os[i], 1) if t_os[i] <= censor[i]
                  else SurvivalLabel(censor[i], 0))
        dfs_lab = (SurvivalLabel(t_dfs[i], 1) if t_dfs[i] <= censor[i]
                   else SurvivalLabel(censor[i], 0))
        records.append(PatientRecord(f"sim{i:04d}", regions, clinical[i], dfs_lab, os_lab))
    return records, groups


def oracle_cindex(records: list[PatientRecord], groups: np.ndarray,
                  scenario: Scenario, task: str) -> float:
    """Concordance achieved by the true group hazard as the risk score."""
    risks = scenario.group_hazards(task)[groups]
    labels = [getattr(r, task) for r in records]
    return harrell_cindex(risks, labels)


# ---------------------------------------------------------------------------
# Repeated stratified k-fold splitting.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSpec:
    repeat: int
    fold: int
    test: list[int]
    train: list[int]
    val: list[int]


@dataclass(frozen=True)
class SplitPlan:
    k: int
    repeats: int
    folds: list[FoldSpec]


def _strata(indices: list[int], records: list[PatientRecord], k: int) -> list[list[int]]:
    """Joint event-indicator cells; sparse cells collapse to the OS margin."""
    cells: dict[tuple[int, int], list[int]] = {}
    for i in indices:
        key = (records[i].os.event, records[i].dfs.event)
        cells.setdefault(key, []).append(i)
    strata: dict[tuple[int, int], list[int]] = {}
    for os_event in (0, 1):
        children = {key: v for key, v in cells.items() if key[0] == os_event}
        if not children:
            continue
        if any(len(v) < k for v in children.values()):
            merged: list[int] = []
            for key in sorted(children):
                merged.extend(children[key])
            strata[(os_event, -1)] = merged
        else:
            strata.update(children)
    return [strata[key] for key in sorted(strata)]


def _deal(strata: list[list[int]], k: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle each stratum and deal round-robin, carrying the fold pointer
    across strata so overall fold sizes stay within one of each other."""
    folds: list[list[int]] = [[] for _ in range(k)]
    ptr = 0
    for members in strata:
        order = rng.permutation(len(members))
        for j in order:
            folds[ptr % k].append(members[j])
            ptr += 1
    return folds


def stratified_repeated_kfold(records: list[PatientRecord], k: int = 5, repeats: int = 3,
                              seed: int = 0) -> SplitPlan:
    """Repeated stratified k-fold plan with stratified 0.8/0.2 inner splits."""
    n = len(records)
    if n < k:
        raise ValueError(f"cohort of {n} patients cannot form {k} folds")
    all_idx = list(range(n))
    folds: list[FoldSpec] = []
    for rep in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, rep]))
        outer = _deal(_strata(all_idx, records, k), k, rng)
        for f in range(k):
            test = sorted(outer[f])
            rest = [i for i in all_idx if i not in set(test)]
            inner_rng = np.random.default_rng(np.random.SeedSequence([seed, rep, f]))
            buckets = _deal(_strata(rest, records, 5), 5, inner_rng)
            val = sorted(buckets[0])
            train = sorted(set(rest) - set(val))
            folds.append(FoldSpec(rep, f, test, train, val))
    return SplitPlan(k=k, repeats=repeats, folds=folds)


# ---------------------------------------------------------------------------
# Training-time augmentation.
# ---------------------------------------------------------------------------


def augment(graph: PatientGraph, seed: int, variants: int = 5,
            dropout_p: float = 0.05, sigma: float = 0.1) -> list[PatientGraph]:
    """Original graph plus `variants - 1` randomized copies.

    Each variant independently drops anatomical nodes with probability
    `dropout_p` (hubs are never dropped, nor the last remaining region) and
    adds Gaussian noise to every raw feature vector. Centroid-derived edge
    offsets are preserved for the surviving regions.
    """
    out = [graph]
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    present = [k for k in ANATOMICAL_KINDS if graph.is_present(k)]
    spatial_attr = {e.target: e.attr for e in graph.edges
                    if e.kind is EdgeKind.SPATIAL_TOPOLOGY}
    for _ in range(variants - 1):
        survivors = list(present)
        for kind in present:
            if len(survivors) > 1 and rng.random() < dropout_p:
                survivors.remove(kind)
        nodes: dict[NodeKind, Node] = {}
        for kind in ANATOMICAL_KINDS:
            if kind in survivors:
                src = graph.nodes[kind]
                noisy = src.features + rng.normal(0.0, sigma, size=src.features.shape)
                nodes[kind] = Node(kind, True, noisy, src.centroid)
            else:
                nodes[kind] = Node(kind, False)
        for kind in (NodeKind.GLOBAL_CT, NodeKind.CLINICAL):
            src = graph.nodes[kind]
            noisy = src.features + rng.normal(0.0, sigma, size=src.features.shape)
            nodes[kind] = Node(kind, True, noisy, src.centroid)
        edges = [Edge(NodeKind.GLOBAL_CT, kind, EdgeKind.SPATIAL_TOPOLOGY, spatial_attr[kind])
                 for kind in survivors]
        edges += [Edge(NodeKind.CLINICAL, kind, EdgeKind.CLINICAL_CONTEXT,
                       np.zeros(EDGE_ATTR_DIM)) for kind in survivors]
        out.append(PatientGraph(patient_id=graph.patient_id, nodes=nodes, edges=edges))
    return out
