"""Empirical robustness labeling via projected gradient ascent.

An example is epsilon-robust when the clean input is classified correctly
and a budgeted PGD search (sign-gradient ascent inside the L-infinity ball
intersected with the pixel box [0, 1]) fails to find a misclassified
point. Every claimed non-robust verdict carries a witness that is
re-verified on the spot: inside the ball, inside the box, misclassified.

Verdicts are computed over an ascending epsilon grid with witness reuse:
a witness found at a smaller epsilon is still a witness at every larger
one, so monotonicity of the verdicts holds by construction rather than by
luck. Per-example determinism comes from seeding every (example, restart)
pair with its own seed sequence, independent of batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import data_io

DEFAULT_EPS_GRID = (0.03, 0.05, 0.07, 0.1, 0.2)

VERDICT_ROBUST = "robust"
VERDICT_NONROBUST = "nonrobust"
VERDICT_MISCLASSIFIED = "misclassified"

# slack for witness box checks: projections are exact in float64, this only
# absorbs representation noise of eps itself
_WITNESS_TOL = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    """PGD budget. step_size None means 2.5 * eps / n_steps."""

    eps_grid: Tuple[float, ...] = DEFAULT_EPS_GRID
    n_steps: int = 40
    step_size: Optional[float] = None
    n_restarts: int = 3
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if not self.eps_grid:
            raise ValueError("eps_grid must be non-empty")
        grid = tuple(float(e) for e in self.eps_grid)
        if any(e < 0 for e in grid):
            raise ValueError(f"negative epsilon in grid: {grid}")
        if list(grid) != sorted(grid):
            raise ValueError(f"eps_grid must be ascending: {grid}")
        if len(set(grid)) != len(grid):
            raise ValueError(f"eps_grid has duplicates: {grid}")
        if self.n_steps <= 0:
            raise ValueError("n_steps must be positive")
        if self.n_restarts <= 0:
            raise ValueError("n_restarts must be positive")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive when given")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")

    def resolved_step(self, eps: float) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * eps / self.n_steps


@dataclass
class ExampleRecord:
    """Grid verdicts for one test example."""

    index: int
    label: int
    clean_pred: int
    verdicts: Dict[float, str] = field(default_factory=dict)

    @property
    def min_nonrobust_eps(self) -> Optional[float]:
        hits = [e for e, v in self.verdicts.items() if v == VERDICT_NONROBUST]
        return min(hits) if hits else None


# ---------------------------------------------------------------------------
# PGD core


def _project(x_adv: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    x_adv = np.clip(x_adv, x0 - eps, x0 + eps)
    return np.clip(x_adv, 0.0, 1.0)


def _restart_rng(seed: int, example_index: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(example_index, restart))
    )


def random_start(
    x0: np.ndarray, eps: float, seed: int, example_index: int, restart: int
) -> np.ndarray:
    rng = _restart_rng(seed, example_index, restart)
    return _project(x0 + rng.uniform(-eps, eps, size=x0.shape), x0, eps)


def pgd_step(net, x_adv: np.ndarray, x0: np.ndarray, labels: np.ndarray,
             eps: float, step_size: float) -> np.ndarray:
    """One batched ascent step: move along sign of the input gradient of the
    mean cross-entropy, then project back into the ball and the pixel box."""
    _, grad = net.loss_and_input_gradient(x_adv, labels)
    return _project(x_adv + step_size * np.sign(grad), x0, eps)


def pgd_ascent(net, x0: np.ndarray, labels: np.ndarray, eps: float,
               n_steps: int, step_size: float, rng: np.random.Generator) -> np.ndarray:
    """Full-budget PGD without early exit; returns the final iterate.

    This is the inner maximization used by adversarial training: one
    random start drawn from ``rng``, ``n_steps`` steps, final point kept
    whether or not it misclassifies.
    """
    x_adv = _project(x0 + rng.uniform(-eps, eps, size=x0.shape), x0, eps)
    for _ in range(n_steps):
        x_adv = pgd_step(net, x_adv, x0, labels, eps, step_size)
    return x_adv


def verify_witness(net, x0: np.ndarray, witness: np.ndarray, label: int,
                   eps: float) -> None:
    """Raise unless ``witness`` certifies non-robustness of (x0, label)."""
    gap = float(np.max(np.abs(witness - x0)))
    if gap > eps + _WITNESS_TOL:
        raise AssertionError(f"witness outside eps-ball: |delta|_inf={gap} > {eps}")
    if float(witness.min()) < -_WITNESS_TOL or float(witness.max()) > 1.0 + _WITNESS_TOL:
        raise AssertionError("witness outside [0,1] pixel box")
    pred = int(net.predict(witness.reshape(1, -1))[0])
    if pred == label:
        raise AssertionError("witness does not misclassify")


def pgd_attack(net, x: np.ndarray, label: int, eps: float, config: AttackConfig,
               example_index: int = 0) -> Optional[np.ndarray]:
    """Search the eps-ball around one example; return a verified witness or
    None. eps=0 admits no witness (the ball is the clean point)."""
    if eps <= 0.0:
        return None
    x = x.astype(np.float64)
    labels = np.array([label])
    step = config.resolved_step(eps)
    for restart in range(config.n_restarts):
        x_adv = random_start(x, eps, config.seed, example_index, restart)
        for s in range(config.n_steps + 1):
            if int(net.predict(x_adv.reshape(1, -1))[0]) != label:
                witness = x_adv.copy()
                verify_witness(net, x, witness, label, eps)
                return witness
            if s == config.n_steps:
                break
            x_adv = pgd_step(
                net, x_adv.reshape(1, -1), x.reshape(1, -1), labels, eps, step
            )[0]
    return None


def is_epsilon_robust(net, x: np.ndarray, label: int, eps: float,
                      config: AttackConfig, example_index: int = 0) -> str:
    """Verdict for one example at one epsilon."""
    clean_pred = int(net.predict(x.reshape(1, -1))[0])
    if clean_pred != label:
        return VERDICT_MISCLASSIFIED
    witness = pgd_attack(net, x, label, eps, config, example_index)
    return VERDICT_ROBUST if witness is None else VERDICT_NONROBUST


# ---------------------------------------------------------------------------
# grid evaluation


def _attack_batch(net, x0: np.ndarray, labels: np.ndarray, indices: np.ndarray,
                  eps: float, config: AttackConfig):
    """Attack a batch at one epsilon. Returns (success mask, witnesses dict
    example-index -> witness array). Early-exits each example on success."""
    n = x0.shape[0]
    success = np.zeros(n, dtype=bool)
    witnesses: Dict[int, np.ndarray] = {}
    step = config.resolved_step(eps)
    for restart in range(config.n_restarts):
        live = np.flatnonzero(~success)
        if live.size == 0:
            break
        x_adv = np.stack([
            random_start(x0[i], eps, config.seed, int(indices[i]), restart)
            for i in live
        ])
        base = x0[live]
        labs = labels[live]
        for s in range(config.n_steps + 1):
            pred = net.predict(x_adv)
            hit = pred != labs
            if hit.any():
                for pos in np.flatnonzero(hit):
                    i = live[pos]
                    witnesses[int(indices[i])] = x_adv[pos].copy()
                    success[i] = True
                keep = ~hit
                live = live[keep]
                if live.size == 0:
                    break
                x_adv = x_adv[keep]
                base = base[keep]
                labs = labs[keep]
            if s == config.n_steps:
                break
            x_adv = pgd_step(net, x_adv, base, labs, eps, step)
    return success, witnesses


def evaluate_grid(net, images: np.ndarray, labels: np.ndarray, config: AttackConfig,
                  indices: Optional[Sequence[int]] = None,
                  collect_witnesses: bool = False):
    """Verdicts for every example at every epsilon of the grid.

    Returns ``(records, witnesses)``: records is a list of
    :class:`ExampleRecord` in input order; witnesses maps
    ``(example_index, eps)`` to the verified adversarial input for every
    non-robust verdict obtained by direct attack (reused witnesses are
    stored under the epsilon where they were found). Witness arrays are
    only retained when ``collect_witnesses`` is set.
    """
    n = images.shape[0]
    if indices is None:
        indices = np.arange(n, dtype=np.int64)
    else:
        indices = np.asarray(list(indices), dtype=np.int64)
        if indices.size != n:
            raise ValueError("indices length must match images")

    clean_pred = np.empty(n, dtype=np.int64)
    for lo in range(0, n, config.batch_size):
        hi = min(lo + config.batch_size, n)
        clean_pred[lo:hi] = net.predict(images[lo:hi])

    records = [
        ExampleRecord(index=int(indices[i]), label=int(labels[i]),
                      clean_pred=int(clean_pred[i]))
        for i in range(n)
    ]
    witnesses: Dict[Tuple[int, float], np.ndarray] = {}

    correct = clean_pred == labels
    defeated = np.zeros(n, dtype=bool)  # nonrobust at some smaller eps already
    for eps in config.eps_grid:
        for i in np.flatnonzero(~correct):
            records[i].verdicts[eps] = VERDICT_MISCLASSIFIED
        for i in np.flatnonzero(correct & defeated):
            records[i].verdicts[eps] = VERDICT_NONROBUST  # witness reuse
        todo = np.flatnonzero(correct & ~defeated)
        for lo in range(0, todo.size, config.batch_size):
            chunk = todo[lo : lo + config.batch_size]
            success, found = _attack_batch(
                net, images[chunk], labels[chunk], indices[chunk], eps, config
            )
            for pos, i in enumerate(chunk):
                if success[pos]:
                    records[i].verdicts[eps] = VERDICT_NONROBUST
                    defeated[i] = True
                    w = found[int(indices[i])]
                    verify_witness(net, images[i], w, int(labels[i]), eps)
                    if collect_witnesses:
                        witnesses[(int(indices[i]), eps)] = w
                else:
                    records[i].verdicts[eps] = VERDICT_ROBUST
    return records, witnesses


def robust_accuracy(records: Sequence[ExampleRecord], eps: float) -> float:
    """Fraction of all records with a robust verdict at ``eps`` (clean
    misclassifications count against, matching accuracy-under-attack)."""
    if not records:
        raise ValueError("no records")
    hits = sum(1 for r in records if r.verdicts.get(eps) == VERDICT_ROBUST)
    return hits / len(records)


def clean_accuracy(records: Sequence[ExampleRecord]) -> float:
    if not records:
        raise ValueError("no records")
    return sum(1 for r in records if r.clean_pred == r.label) / len(records)


def select_group(records: Sequence[ExampleRecord], robust_at: float,
                 nonrobust_at: Optional[float] = None,
                 label: Optional[int] = None,
                 count: Optional[int] = None) -> List[int]:
    """Deterministic curvature-group selection.

    Picks examples robust at ``robust_at`` (and non-robust at
    ``nonrobust_at`` when given; the two must satisfy robust_at <
    nonrobust_at), optionally restricted to one label, in ascending
    test-set index order, up to ``count``. An empty result is legal and
    simply means the group does not exist at this budget.
    """
    if nonrobust_at is not None and not (robust_at < nonrobust_at):
        raise ValueError(
            f"need robust_at < nonrobust_at, got {robust_at} vs {nonrobust_at}"
        )
    if count is not None and count < 0:
        raise ValueError("count must be non-negative")
    out: List[int] = []
    for rec in sorted(records, key=lambda r: r.index):
        if count is not None and len(out) >= count:
            break
        if label is not None and rec.label != label:
            continue
        if rec.verdicts.get(robust_at) != VERDICT_ROBUST:
            continue
        if nonrobust_at is not None and rec.verdicts.get(nonrobust_at) != VERDICT_NONROBUST:
            continue
        out.append(rec.index)
    return out


# ---------------------------------------------------------------------------
# persistence


def _eps_tag(eps: float) -> str:
    return "%g" % eps


def write_records(path, records: Sequence[ExampleRecord],
                  eps_grid: Sequence[float]) -> None:
    header = ["index", "label", "clean_pred", "min_nonrobust_eps"]
    header += [f"verdict_{_eps_tag(e)}" for e in eps_grid]
    rows = []
    for rec in records:
        m = rec.min_nonrobust_eps
        row = [rec.index, rec.label, rec.clean_pred,
               "" if m is None else data_io.format_float(m)]
        row += [rec.verdicts.get(e, "") for e in eps_grid]
        rows.append(row)
    data_io.write_csv(path, header, rows)


def read_records(path):
    """Inverse of :func:`write_records`: returns (records, eps_grid)."""
    header, rows = data_io.read_csv(path)
    eps_grid = [float(h.split("_", 1)[1]) for h in header if h.startswith("verdict_")]
    records = []
    for row in rows:
        rec = ExampleRecord(index=int(row[0]), label=int(row[1]),
                            clean_pred=int(row[2]))
        for k, eps in enumerate(eps_grid):
            v = row[4 + k]
            if v:
                rec.verdicts[eps] = v
        records.append(rec)
    return records, eps_grid
