"""Cached full-protocol artifacts shared across the test suite.

Training the benchmark models and attacking the whole test split is by
far the most expensive part of the end-to-end tests, so both are built
once under ``.cache/zoo/<setup>/`` and reused.  Each setup directory
holds the model, the robustness records for the full test split over
the standard budget grid, and a small manifest recording the measured
wall-clock seconds of both stages (the end-to-end runtime assertions
read those numbers).

Run directly to prebuild:  ``python tests/helpers_zoo.py [setup ...]``
"""

import sys
import time
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
ZOO_ROOT = REPO_ROOT / ".cache" / "zoo"
DATA_DIR = REPO_ROOT / "data" / "mnist"

sys.path.insert(0, str(REPO_ROOT / "src"))

from nricci import cli, data_io, training  # noqa: E402

# Full-protocol setups the suite relies on. Everything uses seed 0 and
# the canonical hyperparameters baked into TrainConfig defaults.
FULL_SETUPS = {
    "fc-15-20-ce": ("15,20", "ce"),
    "fc-15-20-at": ("15,20", "at"),
    "fc-15-25-20-15-ce": ("15,25,20,15", "ce"),
}


def zoo_paths(name: str) -> dict:
    d = ZOO_ROOT / name
    return {
        "dir": d,
        "model": d / "model.nrcm",
        "records": d / "records.csv",
        "manifest": d / "build_manifest.json",
    }


def is_built(name: str) -> bool:
    p = zoo_paths(name)
    return p["model"].exists() and p["records"].exists() and p["manifest"].exists()


def build_setup(name: str) -> dict:
    arch, regime = FULL_SETUPS[name]
    p = zoo_paths(name)
    p["dir"].mkdir(parents=True, exist_ok=True)

    train_split = data_io.load_mnist(DATA_DIR, "train")
    cfg = training.TrainConfig(arch=arch, regime=regime, seed=0)

    t0 = time.perf_counter()
    net, history = training.train(
        train_split.images, train_split.labels, cfg,
        log_path=p["dir"] / "train_log.csv",
    )
    net.meta["setup"] = name
    data_io.save_model(net, p["model"])
    train_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    cli.run_attack(
        p["model"], DATA_DIR, p["records"],
        eps_grid=list(cfg_eps_grid()), steps=40, restarts=3,
        step_size=None, seed=0, test_limit=0, workers=1,
    )
    attack_seconds = time.perf_counter() - t0

    manifest = {
        "setup": name,
        "arch": arch,
        "regime": regime,
        "seed": 0,
        "train_seconds": train_seconds,
        "attack_seconds": attack_seconds,
        "final_train_accuracy": history[-1][2],
    }
    data_io.write_json(p["manifest"], manifest)
    return manifest


def cfg_eps_grid():
    from nricci import robustness

    return robustness.DEFAULT_EPS_GRID


def get_setup(name: str) -> dict:
    """Build (if needed) and return the manifest plus artifact paths."""
    if not is_built(name):
        print(f"[zoo] building {name} (full protocol; this is the slow part)")
        build_setup(name)
    p = zoo_paths(name)
    manifest = data_io.read_json(p["manifest"])
    manifest["model"] = p["model"]
    manifest["records"] = p["records"]
    return manifest


if __name__ == "__main__":
    names = sys.argv[1:] or list(FULL_SETUPS)
    for n in names:
        if is_built(n):
            print(f"[zoo] {n}: already built")
            continue
        t = time.time()
        m = build_setup(n)
        print(
            f"[zoo] {n}: train {m['train_seconds']:.0f}s "
            f"attack {m['attack_seconds']:.0f}s "
            f"acc {m['final_train_accuracy']:.4f} "
            f"(total {time.time()-t:.0f}s)"
        )
