"""Split test-set errors by scene label for one or more alpha values.

Shows where false positives and component-count errors come from: changed
scenes (lumping / fragmentation) or unchanged scenes (speckle that survives
max normalization).

    python3 scripts/diagnose_errors.py --alphas 0,0.1 --iterations 800
"""
import argparse
import time
from dataclasses import replace

import numpy as np

from disep.harness import ExperimentConfig, predict_masks, train
from disep.retrieve import count_components
from disep.synth import generate_split


def breakdown(preds, samples, y):
    idx = [i for i, s in enumerate(samples) if s.y_cls == y]
    p = [preds[i].values for i in idx]
    g = [samples[i].gt.values for i in idx]
    tp = np.mean([(a & b).sum() for a, b in zip(p, g)])
    fp = np.mean([(a & ~b).sum() for a, b in zip(p, g)])
    comps = np.mean([count_components(preds[i]) for i in idx])
    k = np.mean([samples[i].gt_instances.count for i in idx])
    return f"TP/img {tp:6.1f}  FP/img {fp:6.1f}  components {comps:6.2f} (true {k:.2f})"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", default="0,0.1")
    ap.add_argument("--iterations", type=int, default=800)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scope", default="CC+CU+UU")
    args = ap.parse_args()

    exp = ExperimentConfig()
    exp = replace(exp, train=replace(exp.train, iterations=args.iterations, eval_every=args.iterations,
                                     seed=args.seed))
    data = generate_split(exp.synth, exp.train.n_train, exp.train.n_val, exp.train.n_test)
    for a in (float(v) for v in args.alphas.split(",")):
        e = replace(exp, separation=replace(exp.separation, alpha=a, scope=args.scope))
        t0 = time.perf_counter()
        res = train(e, data)
        preds = predict_masks(res.params, data[2], e)
        print(f"alpha={a}: test F1 {res.test.f1:.4f}  P {res.test.precision:.3f}  R {res.test.recall:.3f}  "
              f"inst_mae {res.test.instance_count_mae:.3f}  ({time.perf_counter() - t0:.0f}s)")
        print(f"  changed scenes   {breakdown(preds, data[2], 1)}")
        print(f"  unchanged scenes {breakdown(preds, data[2], 0)}")


if __name__ == "__main__":
    main()
