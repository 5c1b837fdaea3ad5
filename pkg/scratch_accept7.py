"""Full criterion-7 configuration: train 60 @ n=60, eval 40 @ n=100."""
import time
import numpy as np
import minmarg as mm
from minmarg import train as T

cfg = T.TrainConfig(rounds=20, sweeps=20, iters=2500, batch_size=8, seed=7,
                    arch='doge', lr=1e-3)
train_insts = [mm.generate_independent_set(60, 0.25, 1000 + k) for k in range(60)]
t0 = time.time()
early, late, rows = T.train(train_insts, cfg)
train_time = time.time() - t0
print(f'train {train_time:.0f}s for {cfg.iters} iters', flush=True)

z_early, z_late = T.zero_nets('doge')
wins = 0
gts, gds = [], []
t1 = time.time()
for k in range(40):
    inst = mm.generate_independent_set(100, 0.25, 5000 + k)
    mt, rt = T.evaluate_instance(inst, early, late, cfg)
    md, rd = T.evaluate_instance(inst, z_early, z_late, cfg)
    d_star = max(mt.best_bound, md.best_bound)
    vt = np.array([r.vtime for r in rt.records]); bt = np.array([r.bound for r in rt.records])
    vd = np.array([r.vtime for r in rd.records]); bd = np.array([r.bound for r in rd.records])
    m1 = T.compute_metrics(vt, bt, d_star, bt[0], rt.round_end_vtimes[0])
    m2 = T.compute_metrics(vd, bd, d_star, bd[0], rd.round_end_vtimes[0])
    win = m1.best_bound >= m2.best_bound - 1e-9 * (1 + abs(m2.best_bound))
    wins += win
    gts.append(m1.gap_integral); gds.append(m2.gap_integral)
print(f'eval {time.time()-t1:.0f}s', flush=True)
print(f'WINS {wins}/40 ({wins/40:.0%})  mean gI trained={np.mean(gts):.7f} '
      f'default={np.mean(gds):.7f} strictly_lower={np.mean(gts) < np.mean(gds)}')
print(f'per-instance gI wins: {sum(1 for a, b in zip(gts, gds) if a < b)}/40')
print(f'total budget: {train_time + time.time() - t1:.0f}s')
