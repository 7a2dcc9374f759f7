"""LSH recall@1 against the exact scan as a function of the probe budget.

    python3 scripts/lsh_recall.py --n 100000 --queries 2000 --cosine 0.9
"""
import argparse

import numpy as np

from attnfp.bench import lookup_latencies, perturb_to_cosine, recall_at_1
from attnfp.config import LshConfig
from attnfp.index import FingerprintDB, LshIndex, brute_force_top1


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--queries", type=int, default=2000)
    p.add_argument("--cosine", type=float, default=0.9)
    p.add_argument("--tables", type=int, default=50)
    p.add_argument("--bits", type=int, default=18)
    p.add_argument("--probes", type=int, nargs="+", default=[50, 100, 200, 400])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    v = rng.standard_normal((args.n, args.dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    db = FingerprintDB(np.zeros(args.n), np.arange(args.n), v.astype(np.float32))
    index = LshIndex(db, LshConfig(n_tables=args.tables, hash_bits=args.bits,
                                   n_probes=max(args.probes), seed=args.seed))
    q = perturb_to_cosine(db.embeddings[rng.choice(args.n, args.queries, replace=False)], args.cosine, rng)
    truth = brute_force_top1(db, q)
    print("probes\trecall@1\tp50_ms")
    for probes in args.probes:
        index.cfg = LshConfig(args.tables, args.bits, probes, index.cfg.top_k, args.seed)
        r = recall_at_1(index, q, probes, truth)
        lat = np.median(lookup_latencies(index, q[:200]))
        print(f"{probes}\t{r:.4f}\t{1e3 * lat:.2f}")


if __name__ == "__main__":
    main()
