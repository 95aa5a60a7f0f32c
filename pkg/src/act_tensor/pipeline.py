"""Cluster-based CP completion followed by temporal smoothing.

Dense clusters are completed on their own sub-tensors with no ridge term.
Each sparse cluster is completed on an aggregate that adds every dense
firm, and only its own firms are kept. Completed slices are put back in
place and every series is smoothed.
"""
from __future__ import annotations

import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import cluster_seed
from .clustering import ClusterPartition, cluster_firms
from .cp import FitReport, SolverConfig, fit_cp
from .errors import StructuralError
from .smoothing import SmootherSpec, smooth_tensor
from .tensor import MaskedTensor, extract_subtensor, reconstruct

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActConfig:
    solver: SolverConfig = SolverConfig()
    k: int = 10
    tau: float = 0.40
    smoother: SmootherSpec = SmootherSpec(kind="cma", delta=5)
    seed: int = 0  # drives the clustering; solver streams come from solver.seed
    keep_observed: bool = False
    kmeans_iters: int = 100


@dataclass
class RunReport:
    partition: ClusterPartition
    fits: dict = field(default_factory=dict)  # cluster id -> FitReport
    timings: dict = field(default_factory=dict)
    fallback: str = ""
    k_used: int = 0
    assembled: np.ndarray | None = None  # pre-smoothing output

    def to_text(self) -> str:
        """Flat ``key=value`` lines, one fact per line."""
        p = self.partition
        lines = [f"k={p.k}", f"tau={p.tau}"]
        if self.fallback:
            lines.append(f"fallback={self.fallback}")
        for c in range(p.k):
            members = int(np.sum(p.assignments == c))
            lines.append(f"cluster.{c}.label={p.labels[c]}")
            lines.append(f"cluster.{c}.firms={members}")
            lines.append(f"cluster.{c}.density={float(p.densities[c])!r}")
            fit = self.fits.get(c)
            if fit is not None:
                for key, value in fit.as_dict().items():
                    lines.append(f"cluster.{c}.{key}={value!r}" if isinstance(value, float) else f"cluster.{c}.{key}={value}")
        for key, value in self.timings.items():
            lines.append(f"time.{key}={value:.6f}")
        return "\n".join(lines) + "\n"


def complete_dense(x: MaskedTensor, cluster_firms_idx, solver: SolverConfig = SolverConfig(), seed=None):
    """Fit the cluster's own sub-tensor with lambda forced to 0.

    Returns the full reconstruction (T x |cluster| x L) and the FitReport.
    """
    sub = extract_subtensor(x, cluster_firms_idx)
    model, report = fit_cp(sub, replace(solver, lam=0.0), seed=seed)
    return reconstruct(model), report


def aggregate_firms(sparse_firms, dense_firms) -> np.ndarray:
    """Union of the index sets in ascending (original) firm order."""
    return np.union1d(np.asarray(sparse_firms, dtype=int), np.asarray(dense_firms, dtype=int))


def complete_sparse(x: MaskedTensor, sparse_firms, all_dense_firms, solver: SolverConfig = SolverConfig(), seed=None):
    """Complete a sparse cluster on an aggregate with all dense firms.

    The solver's ``lam`` is used as the ridge weight. Returns the slice of
    the completed aggregate for `sparse_firms` (in the given order), the
    FitReport, and the firm labels of that slice.
    """
    sparse_firms = np.asarray(list(sparse_firms), dtype=int).reshape(-1)
    if sparse_firms.size == 0:
        raise StructuralError("sparse cluster has no firms")
    dense = np.asarray(list(all_dense_firms), dtype=int).reshape(-1)
    if dense.size == 0:
        warnings.warn("no dense clusters to borrow from; completing the sparse firms on their own", stacklevel=2)
    agg = aggregate_firms(sparse_firms, dense)
    sub = extract_subtensor(x, agg)
    model, report = fit_cp(sub, solver, seed=seed)
    full = reconstruct(model)
    pos = np.searchsorted(agg, sparse_firms)
    labels = tuple(x.firms[i] for i in sparse_firms)
    return full[:, pos, :], report, labels


def assemble(sub_tensors: dict, partition: ClusterPartition, firms=None) -> np.ndarray:
    """Write each cluster's completed slice back into its firm positions."""
    N = len(partition.assignments)
    firms = firms or tuple(str(i) for i in range(N))
    written = np.zeros(N, dtype=int)
    out = None
    for c, block in sub_tensors.items():
        idx = partition.members(c)
        block = np.asarray(block, dtype=float)
        if block.shape[1] != idx.size:
            raise StructuralError(f"cluster {c} block has {block.shape[1]} firms, partition lists {idx.size}")
        if out is None:
            out = np.zeros((block.shape[0], N, block.shape[2]))
        out[:, idx, :] = block
        written[idx] += 1
    if out is None:
        raise StructuralError("no completed sub-tensors to assemble")
    missing = np.flatnonzero(written == 0)
    if missing.size:
        raise StructuralError(f"firm {firms[missing[0]]} is not covered by any completed cluster")
    doubled = np.flatnonzero(written > 1)
    if doubled.size:
        raise StructuralError(f"firm {firms[doubled[0]]} is covered by more than one cluster")
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ACT_TENSOR_THREADS", "1")))
    except ValueError:
        return 1


def run_act(x: MaskedTensor, cfg: ActConfig = ActConfig()):
    """Cluster, complete per cluster, assemble, then smooth.

    Returns the smoothed T x N x L array and a RunReport whose
    ``assembled`` field holds the unsmoothed assembly.
    """
    if x.shape[1] == 0 or x.n_observed == 0:
        raise StructuralError("cannot impute an empty panel")
    timings = {}
    t0 = time.perf_counter()
    k = min(cfg.k, x.shape[1])
    if k < cfg.k:
        logger.info("only %d firms; using k=%d clusters instead of %d", x.shape[1], k, cfg.k)
    part = cluster_firms(x, k, cfg.tau, seed=cfg.seed, max_iters=cfg.kmeans_iters)
    timings["cluster"] = time.perf_counter() - t0

    dense = part.dense_clusters()
    sparse = part.sparse_clusters()
    dense_firms = np.flatnonzero(np.isin(part.assignments, dense))
    fallback = ""

    jobs = {}
    for c in dense:
        jobs[c] = ("dense", part.members(c))
    if sparse and not dense:
        fallback = "no dense clusters; sparse clusters completed jointly"
        warnings.warn(fallback, stacklevel=2)
        jobs[sparse[0]] = ("joint", np.flatnonzero(np.isin(part.assignments, sparse)))
    else:
        for c in sparse:
            jobs[c] = ("sparse", part.members(c))

    def work(c):
        kind, idx = jobs[c]
        seed = cluster_seed(cfg.solver.seed, c)
        if kind == "dense":
            block, rep = complete_dense(x, idx, cfg.solver, seed=seed)
        elif kind == "sparse":
            block, rep, _ = complete_sparse(x, idx, dense_firms, cfg.solver, seed=seed)
        else:
            model, rep = fit_cp(extract_subtensor(x, idx), cfg.solver, seed=seed)
            block = reconstruct(model)
        return c, block, rep

    t0 = time.perf_counter()
    order = sorted(jobs)
    threads = _threads()
    if threads > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, order))
    else:
        results = [work(c) for c in order]
    timings["complete"] = time.perf_counter() - t0

    blocks, fits = {}, {}
    for c, block, rep in results:
        fits[c] = rep
        if jobs[c][0] == "joint":
            joint_idx = jobs[c][1]
            for s in sparse:
                blocks[s] = block[:, np.searchsorted(joint_idx, part.members(s)), :]
        else:
            blocks[c] = block

    assembled = assemble(blocks, part, x.firms)
    if cfg.keep_observed:
        assembled = np.where(x.mask, x.values, assembled)

    t0 = time.perf_counter()
    if cfg.smoother.kind == "none":
        out = assembled.copy()
    else:
        out = smooth_tensor(assembled, cfg.smoother)
    timings["smooth"] = time.perf_counter() - t0

    report = RunReport(partition=part, fits=fits, timings=timings, fallback=fallback, k_used=k, assembled=assembled)
    return out, report
