"""Scratch: does a short training run beat the default solver?"""
import time

import numpy as np

import minmarg as mm
from minmarg import train as T
from minmarg.bank import build_bank


def main(n_train=20, n_eval=10, train_n=30, eval_n=50, iters=60, rounds=8, sweeps=5):
    cfg = T.TrainConfig(rounds=rounds, sweeps=sweeps, iters=iters, batch_size=4,
                        seed=7, arch="doge")
    train_insts = [mm.generate_independent_set(train_n, 0.25, 1000 + k)
                   for k in range(n_train)]
    eval_insts = [mm.generate_independent_set(eval_n, 0.25, 5000 + k)
                  for k in range(n_eval)]
    t0 = time.time()
    early, late, rows = T.train(train_insts, cfg, progress=None)
    t_train = time.time() - t0
    print(f"train: {t_train:.1f}s for {iters} iters "
          f"({t_train / iters * 1000:.0f} ms/iter)")
    print("loss head:", [f"{r.loss:.3f}" for r in rows[:5]])
    print("loss tail:", [f"{r.loss:.3f}" for r in rows[-5:]])

    z_early, z_late = T.zero_nets("doge")
    wins = 0
    gi_trained, gi_default = [], []
    for inst in eval_insts:
        mt, rt = T.evaluate_instance(inst, early, late, cfg)
        md, rd = T.evaluate_instance(inst, z_early, z_late, cfg)
        d_star = max(mt.best_bound, md.best_bound)
        # recompute with shared d_star
        vt = np.array([r.vtime for r in rt.records]); bt = np.array([r.bound for r in rt.records])
        vd = np.array([r.vtime for r in rd.records]); bd = np.array([r.bound for r in rd.records])
        wt = rt.round_end_vtimes[0]; wd = rd.round_end_vtimes[0]
        m1 = T.compute_metrics(vt, bt, d_star, bt[0], wt)
        m2 = T.compute_metrics(vd, bd, d_star, bd[0], wd)
        win = m1.best_bound >= m2.best_bound - 1e-9
        wins += win
        gi_trained.append(m1.gap_integral)
        gi_default.append(m2.gap_integral)
        print(f"  trained E={m1.best_bound:.4f} gI={m1.gap_integral:.3f} | "
              f"default E={m2.best_bound:.4f} gI={m2.gap_integral:.3f} win={win}")
    print(f"wins: {wins}/{n_eval}  mean gI trained={np.mean(gi_trained):.4f} "
          f"default={np.mean(gi_default):.4f}")


if __name__ == "__main__":
    main()
