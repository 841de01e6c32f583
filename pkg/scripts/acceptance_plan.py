"""Training runs behind the direction-of-effect acceptance criteria.

Every run is deterministic given its resolved ExperimentConfig, so finished
summaries are cached in ``runs/acceptance_cache.json`` under a key made of the
config and an AST hash of the package source (docstrings and comments do not
count). Editing any code path invalidates the cache; set DISEP_RECOMPUTE=1 to
ignore it regardless.

    python3 scripts/acceptance_plan.py [--workers N]
"""
from __future__ import annotations

import argparse
import ast
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, replace
from pathlib import Path

import disep
from disep.harness import ExperimentConfig, train

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / "runs" / "acceptance_cache.json"

SEEDS = (0, 1, 2)
T_HIGH = (0.45, 0.50, 0.55, 0.60, 0.65)
T_LOW = (0.35, 0.40, 0.45)
SCOPES = ("CC", "CC+CU", "CC+CU+UU")


def _strip_docstrings(tree: ast.AST) -> ast.AST:
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if (isinstance(body, list) and body and isinstance(body[0], ast.Expr)
                and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str)):
            node.body = body[1:] or [ast.Pass()]
    return tree


def source_hash() -> str:
    h = hashlib.sha256()
    pkg = Path(disep.__file__).parent
    for path in sorted(pkg.glob("*.py")):
        tree = _strip_docstrings(ast.parse(path.read_text()))
        h.update(path.name.encode())
        h.update(ast.dump(tree).encode())
    return h.hexdigest()[:16]


def run_key(exp: ExperimentConfig) -> str:
    blob = json.dumps(asdict(exp), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16] + "-" + source_hash()


def _with(base: ExperimentConfig, seed: int, **sections) -> ExperimentConfig:
    exp = replace(base, train=replace(base.train, seed=seed))
    for name, changes in sections.items():
        exp = replace(exp, **{name: replace(getattr(exp, name), **changes)})
    return exp


def baseline(seed: int) -> ExperimentConfig:
    return _with(ExperimentConfig(), seed, separation={"alpha": 0.0})


def method(seed: int, t_high=0.60, t_low=0.40, scope="CC+CU+UU") -> ExperimentConfig:
    return _with(ExperimentConfig(), seed, separation={"alpha": 0.1, "scope": scope},
                 thresholds={"t_high": t_high, "t_low": t_low})


def full_supervision(seed: int, alpha: float) -> ExperimentConfig:
    return _with(ExperimentConfig(), seed, separation={"alpha": alpha}, train={"supervision": "full"})


def plan() -> dict[str, list[ExperimentConfig]]:
    """Runs per criterion; identical configs are shared through the cache."""
    return {
        "direction": [baseline(s) for s in SEEDS] + [method(s) for s in SEEDS],
        "thresholds": [method(s, hi, lo) for hi in T_HIGH for lo in T_LOW for s in SEEDS],
        "scope": [method(s, scope=sc) for sc in SCOPES for s in SEEDS],
        "fscd": [full_supervision(s, a) for a in (0.0, 0.1) for s in SEEDS],
    }


def _execute(exp: ExperimentConfig) -> dict:
    cpu0, wall0 = time.process_time(), time.perf_counter()
    res = train(exp)
    t = res.test
    return {"f1": t.f1, "oa": t.oa, "iou": t.iou, "precision": t.precision, "recall": t.recall,
            "inst_mae": t.instance_count_mae, "cpu_seconds": time.process_time() - cpu0,
            "wall_seconds": time.perf_counter() - wall0}


def load_cache() -> dict:
    if os.environ.get("DISEP_RECOMPUTE") == "1" or not CACHE.exists():
        return {}
    return json.loads(CACHE.read_text())


def _save(cache: dict) -> None:
    CACHE.parent.mkdir(parents=True, exist_ok=True)
    tmp = CACHE.with_suffix(".tmp")
    tmp.write_text(json.dumps(cache, indent=1, sort_keys=True))
    tmp.replace(CACHE)


def results(configs, workers: int = 1, log=print) -> list[dict]:
    """Summaries for ``configs`` in order, training whatever the cache lacks."""
    cache = load_cache()
    keys = [run_key(c) for c in configs]
    todo = {k: c for k, c in zip(keys, configs) if k not in cache}
    if todo:
        log(f"training {len(todo)} run(s), {len(keys) - len(todo)} cached")
        if workers <= 1:
            for i, (k, c) in enumerate(todo.items(), 1):
                cache[k] = _execute(c)
                _save(cache)
                log(f"  [{i}/{len(todo)}] {describe(c)}: F1 {cache[k]['f1']:.4f} "
                    f"inst_mae {cache[k]['inst_mae']:.3f} ({cache[k]['wall_seconds']:.0f}s)")
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(_execute, c): k for k, c in todo.items()}
                for i, fut in enumerate(as_completed(futs), 1):
                    cache[futs[fut]] = fut.result()
                    _save(cache)
                    log(f"  [{i}/{len(todo)}] done")
    return [cache[k] for k in keys]


def describe(exp: ExperimentConfig) -> str:
    s, th = exp.separation, exp.thresholds
    return (f"{exp.train.supervision} seed={exp.train.seed} alpha={s.alpha} scope={s.scope} "
            f"T=({th.t_high},{th.t_low})")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--only", choices=list(plan()), action="append")
    args = ap.parse_args(argv)
    for name, configs in plan().items():
        if args.only and name not in args.only:
            continue
        print(f"== {name}: {len(configs)} configs", flush=True)
        results(configs, args.workers, log=lambda m: print(m, flush=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
