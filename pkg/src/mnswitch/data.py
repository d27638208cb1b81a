"""Panel data structures, CSV ingestion and covariate construction.

External files are long-format CSVs:

  counts.csv      disease,area,time,count   complete K x N x T grid
  adjacency.csv   area_a,area_b             undirected edge list
  population.csv  area,pop
  covariates.csv  name,area,time,value      complete on times 2..T per name

Areas and diseases are arbitrary string labels; internally everything is
mapped to dense 0-based indices (baseline disease first) and the label
mapping is carried on the returned objects.  Times must be contiguous
integers; internally they become 1..T.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .model import CoefLayout, ModelData

BUILDER_KINDS = ("external", "neighbor_prevalence", "lagged_log_counts",
                 "cumulative_incidence_diff")


@dataclass
class DiseasePanel:
    """Observed counts for K diseases over N areas and T times."""

    counts: np.ndarray            # (K, N, T) int
    disease_names: tuple[str, ...]
    area_names: tuple[str, ...]

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3:
            raise ValueError("counts must have shape (diseases, areas, times)")
        if np.any(c < 0) or not np.issubdtype(c.dtype, np.integer):
            raise ValueError("counts must be non-negative integers")
        if len(self.disease_names) != c.shape[0]:
            raise ValueError("disease_names must match the count layers")
        if len(self.area_names) != c.shape[1]:
            raise ValueError("area_names must match the area axis")
        if len(set(self.disease_names)) != len(self.disease_names):
            raise ValueError("duplicate disease names")
        if len(set(self.area_names)) != len(self.area_names):
            raise ValueError("duplicate area names")
        self.counts = c.astype(np.int64)
        self.disease_names = tuple(self.disease_names)
        self.area_names = tuple(self.area_names)

    @property
    def n_diseases(self) -> int:
        return self.counts.shape[0]

    @property
    def n_areas(self) -> int:
        return self.counts.shape[1]

    @property
    def n_times(self) -> int:
        return self.counts.shape[2]

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def baseline(self) -> str:
        return self.disease_names[0]


@dataclass
class AreaMetadata:
    """Populations and the (symmetric, irreflexive) neighbourhood structure."""

    area_names: tuple[str, ...]
    population: np.ndarray                 # (N,)
    neighbors: tuple[tuple[int, ...], ...]  # sorted neighbour indices per area

    def __post_init__(self):
        pop = np.asarray(self.population, dtype=float)
        n = len(self.area_names)
        if pop.shape != (n,):
            raise ValueError("one population per area required")
        if np.any(pop <= 0) or not np.all(np.isfinite(pop)):
            raise ValueError("populations must be positive and finite")
        if len(self.neighbors) != n:
            raise ValueError("one neighbour tuple per area required")
        for i, nb in enumerate(self.neighbors):
            for j in nb:
                if not 0 <= j < n:
                    raise ValueError(f"neighbour index {j} out of range")
                if j == i:
                    raise ValueError(f"area {self.area_names[i]!r} neighbours itself")
                if i not in self.neighbors[j]:
                    raise ValueError("adjacency must be symmetric")
        self.population = pop
        self.area_names = tuple(self.area_names)
        self.neighbors = tuple(tuple(sorted(nb)) for nb in self.neighbors)

    @classmethod
    def from_edges(cls, area_names, population, edges) -> "AreaMetadata":
        index = {a: i for i, a in enumerate(area_names)}
        sets: list[set[int]] = [set() for _ in area_names]
        for a, b in edges:
            if a not in index or b not in index:
                missing = a if a not in index else b
                raise ValueError(f"adjacency references unknown area {missing!r}")
            if a == b:
                raise ValueError(f"self-loop on area {a!r}")
            sets[index[a]].add(index[b])
            sets[index[b]].add(index[a])
        return cls(tuple(area_names), population,
                   tuple(tuple(sorted(s)) for s in sets))


# ---------------------------------------------------------------------------
# CSV ingestion


def _require_columns(df: pd.DataFrame, cols, path) -> None:
    if list(df.columns) != list(cols):
        raise ValueError(f"{path}: expected columns {list(cols)}, got {list(df.columns)}")


def load_panel(path, diseases=None) -> DiseasePanel:
    """Read a complete long-format counts grid.

    diseases: optional ordering (baseline first); defaults to first
    appearance order in the file.
    """
    df = pd.read_csv(path)
    _require_columns(df, ("disease", "area", "time", "count"), path)
    if df["count"].isna().any() or df.isna().any().any():
        raise ValueError(f"{path}: missing values")
    d_order = list(dict.fromkeys(df["disease"].astype(str)))
    if diseases is not None:
        diseases = [str(d) for d in diseases]
        if set(diseases) != set(d_order):
            raise ValueError(f"{path}: diseases {sorted(d_order)} do not match "
                             f"the declared list {sorted(diseases)}")
        d_order = diseases
    a_order = list(dict.fromkeys(df["area"].astype(str)))
    times = np.sort(df["time"].unique())
    if not np.issubdtype(times.dtype, np.integer):
        raise ValueError(f"{path}: times must be integers")
    if times.size < 2 or np.any(np.diff(times) != 1):
        raise ValueError(f"{path}: times must form a contiguous range of length >= 2")
    k_ix = {d: i for i, d in enumerate(d_order)}
    a_ix = {a: i for i, a in enumerate(a_order)}
    t_ix = {t: i for i, t in enumerate(times)}
    counts = np.full((len(d_order), len(a_order), times.size), -1, dtype=np.int64)
    vals = df["count"].to_numpy()
    if np.any(vals < 0) or np.any(vals != np.floor(vals)):
        raise ValueError(f"{path}: counts must be non-negative integers")
    for d, a, t, c in zip(df["disease"].astype(str), df["area"].astype(str),
                          df["time"], vals):
        i, j, s = k_ix[d], a_ix[a], t_ix[t]
        if counts[i, j, s] >= 0:
            raise ValueError(f"{path}: duplicate cell ({d}, {a}, {t})")
        counts[i, j, s] = c
    if np.any(counts < 0):
        holes = np.argwhere(counts < 0)
        d, a, s = holes[0]
        raise ValueError(f"{path}: incomplete grid, first missing cell "
                         f"({d_order[d]}, {a_order[a]}, {times[s]})")
    return DiseasePanel(counts, tuple(d_order), tuple(a_order))


def write_panel(panel: DiseasePanel, path) -> None:
    """Write the counts grid back out; inverse of load_panel."""
    with open(path, "w") as fh:
        fh.write("disease,area,time,count\n")
        for k, d in enumerate(panel.disease_names):
            for i, a in enumerate(panel.area_names):
                for t in range(panel.n_times):
                    fh.write(f"{d},{a},{t + 1},{panel.counts[k, i, t]}\n")


def load_area_metadata(adjacency_path, population_path, area_names) -> AreaMetadata:
    pop_df = pd.read_csv(population_path)
    _require_columns(pop_df, ("area", "pop"), population_path)
    seen = dict(zip(pop_df["area"].astype(str), pop_df["pop"].astype(float)))
    if len(seen) != len(pop_df):
        raise ValueError(f"{population_path}: duplicate area rows")
    missing = [a for a in area_names if a not in seen]
    if missing:
        raise ValueError(f"{population_path}: no population for {missing[0]!r}")
    population = np.array([seen[a] for a in area_names])
    adj_df = pd.read_csv(adjacency_path)
    _require_columns(adj_df, ("area_a", "area_b"), adjacency_path)
    edges = list(zip(adj_df["area_a"].astype(str), adj_df["area_b"].astype(str)))
    return AreaMetadata.from_edges(tuple(area_names), population, edges)


def write_area_metadata(meta: AreaMetadata, adjacency_path, population_path) -> None:
    with open(population_path, "w") as fh:
        fh.write("area,pop\n")
        for a, p in zip(meta.area_names, meta.population):
            fh.write(f"{a},{float(p)!r}\n")
    with open(adjacency_path, "w") as fh:
        fh.write("area_a,area_b\n")
        for i, nbs in enumerate(meta.neighbors):
            for j in nbs:
                if i < j:
                    fh.write(f"{meta.area_names[i]},{meta.area_names[j]}\n")


def load_covariates(path, area_names, n_times) -> dict[str, np.ndarray]:
    """Read external covariate series, one (N, T-1) array per name.

    Values must cover every area at times 2..T; rows for time 1 are
    accepted and ignored.
    """
    df = pd.read_csv(path)
    _require_columns(df, ("name", "area", "time", "value"), path)
    a_ix = {a: i for i, a in enumerate(area_names)}
    out: dict[str, np.ndarray] = {}
    for name, grp in df.groupby("name", sort=False):
        arr = np.full((len(area_names), n_times - 1), np.nan)
        for a, t, v in zip(grp["area"].astype(str), grp["time"], grp["value"]):
            if a not in a_ix:
                raise ValueError(f"{path}: unknown area {a!r} for covariate {name!r}")
            if not 1 <= t <= n_times:
                raise ValueError(f"{path}: time {t} out of range for covariate {name!r}")
            if t >= 2:
                arr[a_ix[a], int(t) - 2] = v
        if np.isnan(arr).any():
            i, s = np.argwhere(np.isnan(arr))[0]
            raise ValueError(f"{path}: covariate {name!r} missing at "
                             f"({area_names[i]}, time {s + 2})")
        out[str(name)] = arr
    return out


def write_covariates(values: dict[str, np.ndarray], area_names, path) -> None:
    with open(path, "w") as fh:
        fh.write("name,area,time,value\n")
        for name, arr in values.items():
            for i, a in enumerate(area_names):
                for s in range(arr.shape[1]):
                    fh.write(f"{name},{a},{s + 2},{float(arr[i, s])!r}\n")


# ---------------------------------------------------------------------------
# covariate builders (all return (N, T-1) arrays aligned to t = 2..T)


def lagged_log_counts(panel: DiseasePanel, disease: str) -> np.ndarray:
    """log(y[k, i, t-1] + 1)."""
    k = panel.disease_names.index(disease)
    return np.log1p(panel.counts[k, :, :-1].astype(float))


def neighbor_prevalence(panel: DiseasePanel, meta: AreaMetadata,
                        disease: str) -> np.ndarray:
    """log of lagged neighbourhood prevalence plus one.

    Value at (i, t): log( sum_{j in NE(i)} y[k, j, t-1]
                          / sum_{j in NE(i)} pop_j + 1 ).
    Areas without neighbours get 0.
    """
    k = panel.disease_names.index(disease)
    lagged = panel.counts[k, :, :-1].astype(float)
    out = np.zeros_like(lagged)
    for i, nbs in enumerate(meta.neighbors):
        if nbs:
            ix = list(nbs)
            out[i] = np.log1p(lagged[ix].sum(axis=0) / meta.population[ix].sum())
    return out


def cumulative_incidence_diff(panel: DiseasePanel, meta: AreaMetadata,
                              disease: str) -> np.ndarray:
    """Per-capita cumulative incidence gap to the baseline disease.

    Value at (i, t): (sum_{u < t} y[k, i, u] - sum_{u < t} y[0, i, u]) / pop_i.
    """
    k = panel.disease_names.index(disease)
    cum = np.cumsum(panel.counts.astype(float), axis=2)[:, :, :-1]
    return (cum[k] - cum[0]) / meta.population[:, None]


@dataclass(frozen=True)
class StandardizeRecord:
    mean: float
    sd: float


def standardize(values: np.ndarray) -> tuple[np.ndarray, StandardizeRecord]:
    """Center and scale by the sample (n-1) standard deviation."""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    if sd == 0.0 or not np.isfinite(sd):
        raise ValueError("cannot standardize a constant covariate")
    return (values - mean) / sd, StandardizeRecord(mean, sd)


# ---------------------------------------------------------------------------
# covariate bundles


@dataclass(frozen=True)
class CovariateSpec:
    """One covariate column for one disease.

    kind 'external' pulls the named series from the external table; builder
    kinds derive the column from the panel, reading `source` as the disease
    whose counts feed the builder (default: the disease the column belongs
    to).  standardize=True records the mean/sd used.
    """

    name: str
    kind: str = "external"
    source: str | None = None
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in BUILDER_KINDS:
            raise ValueError(f"unknown covariate kind {self.kind!r}")


def _build_column(spec: CovariateSpec, disease: str, panel: DiseasePanel,
                  meta: AreaMetadata | None, external) -> np.ndarray:
    if spec.kind == "external":
        if external is None or spec.name not in external:
            raise ValueError(f"external covariate {spec.name!r} not provided")
        arr = np.asarray(external[spec.name], dtype=float)
        if arr.shape != (panel.n_areas, panel.n_times - 1):
            raise ValueError(f"external covariate {spec.name!r} has shape "
                             f"{arr.shape}, expected "
                             f"{(panel.n_areas, panel.n_times - 1)}")
        return arr.copy()
    source = spec.source or disease
    if source not in panel.disease_names:
        raise ValueError(f"covariate {spec.name!r} reads unknown disease {source!r}")
    if spec.kind == "lagged_log_counts":
        return lagged_log_counts(panel, source)
    if meta is None:
        raise ValueError(f"covariate kind {spec.kind!r} needs area metadata")
    if spec.kind == "neighbor_prevalence":
        return neighbor_prevalence(panel, meta, source)
    return cumulative_incidence_diff(panel, meta, source)


@dataclass
class CovariateBundle:
    """Assembled design arrays for the odds (x) and presence (z) predictors."""

    x: tuple[np.ndarray, ...]
    z: tuple[np.ndarray, ...]
    x_layout: CoefLayout
    z_layout: CoefLayout
    records: dict[str, StandardizeRecord] = field(default_factory=dict)

    @classmethod
    def build(cls, panel: DiseasePanel, meta: AreaMetadata | None = None, *,
              x_specs=None, z_specs=None, external=None,
              share_x=(), share_z=()) -> "CovariateBundle":
        """x_specs/z_specs: mapping switching-disease name -> [CovariateSpec]."""
        switching = panel.disease_names[1:]
        x_specs = dict(x_specs or {})
        z_specs = dict(z_specs or {})
        for role, specs in (("x", x_specs), ("z", z_specs)):
            unknown = set(specs) - set(switching)
            if unknown:
                raise ValueError(f"{role} covariates declared for non-switching "
                                 f"disease {sorted(unknown)[0]!r}")
        records: dict[str, StandardizeRecord] = {}

        def assemble(specs, role):
            arrays, names = [], []
            for d in switching:
                cols = list(specs.get(d, ()))
                if len({c.name for c in cols}) != len(cols):
                    raise ValueError(f"duplicate covariate name for disease {d!r}")
                block = np.empty((panel.n_areas, panel.n_times - 1, len(cols)))
                for j, spec in enumerate(cols):
                    col = _build_column(spec, d, panel, meta, external)
                    if spec.standardize:
                        col, rec = standardize(col)
                        records[f"{role}:{d}:{spec.name}"] = rec
                    block[:, :, j] = col
                arrays.append(block)
                names.append(tuple(c.name for c in cols))
            return tuple(arrays), names

        x, x_names = assemble(x_specs, "x")
        z, z_names = assemble(z_specs, "z")
        return cls(x, z,
                   CoefLayout.build(switching, x_names, share_x),
                   CoefLayout.build(switching, z_names, share_z),
                   records)


def build_model_data(panel: DiseasePanel,
                     bundle: CovariateBundle | None = None) -> ModelData:
    """Bind a panel and its covariates into the arrays the formulas use."""
    if bundle is None:
        bundle = CovariateBundle.build(panel)
    return ModelData.from_arrays(
        panel.counts, panel.disease_names,
        x=bundle.x, z=bundle.z,
        x_layout=bundle.x_layout, z_layout=bundle.z_layout,
        area_names=panel.area_names)
