import time, pickle
import numpy as np
import minmarg as mm
from minmarg import train as T, dual, net
from minmarg.bank import build_bank

cfg = T.TrainConfig(rounds=20, sweeps=20, iters=1500, batch_size=8, seed=7,
                    arch='doge', lr=1e-4)
train_insts = [mm.generate_independent_set(60, 0.25, 1000 + k) for k in range(60)]
t0 = time.time()
early, late, rows = T.train(train_insts, cfg)
print(f'train {time.time()-t0:.0f}s', flush=True)
with open('/tmp/nets4.pkl', 'wb') as f:
    pickle.dump((early, late), f)

z_early, z_late = T.zero_nets('doge')
wins = 0
gts, gds = [], []
tol = lambda x: 1e-9 * (1 + abs(x))
for k in range(10):
    inst = mm.generate_independent_set(100, 0.25, 5000 + k)
    mt, rt = T.evaluate_instance(inst, early, late, cfg)
    md, rd = T.evaluate_instance(inst, z_early, z_late, cfg)
    d_star = max(mt.best_bound, md.best_bound)
    vt = np.array([r.vtime for r in rt.records]); bt = np.array([r.bound for r in rt.records])
    vd = np.array([r.vtime for r in rd.records]); bd = np.array([r.bound for r in rd.records])
    m1 = T.compute_metrics(vt, bt, d_star, bt[0], rt.round_end_vtimes[0])
    m2 = T.compute_metrics(vd, bd, d_star, bd[0], rd.round_end_vtimes[0])
    win = m1.best_bound >= m2.best_bound - tol(m2.best_bound)
    wins += win
    gts.append(m1.gap_integral); gds.append(m2.gap_integral)
    print(f'trained E+50={m1.best_bound+50:.3e} gI={m1.gap_integral:.6f} | '
          f'default gI={m2.gap_integral:.6f} win={win}', flush=True)
print(f'wins {wins}/10, mean gI trained={np.mean(gts):.6f} default={np.mean(gds):.6f}')

probe_bank = build_bank(train_insts[0], mm.decompose(train_insts[0]))
ps = dual.init_dual(probe_bank); ph = net.new_history(probe_bank)
pf = net.compute_features(probe_bank, ps, ph)
out, _ = net.gnn_forward(probe_bank, pf, net.zero_state(probe_bank), early)
out2, _ = net.gnn_forward(probe_bank, pf, net.zero_state(probe_bank), late)
print('early |theta| %.2e omega %.4f | late |theta| %.2e omega %.4f' % (
    np.abs(out.theta).max(), out.omega.mean(), np.abs(out2.theta).max(), out2.omega.mean()))
