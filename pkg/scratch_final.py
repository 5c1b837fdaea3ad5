import time, pickle, sys
import numpy as np
import minmarg as mm
from minmarg import train as T, dual, net
from minmarg.bank import build_bank

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3
n_eval = int(sys.argv[3]) if len(sys.argv) > 3 else 12

cfg = T.TrainConfig(rounds=20, sweeps=20, iters=iters, batch_size=8, seed=7,
                    arch='doge', lr=lr)
train_insts = [mm.generate_independent_set(60, 0.25, 1000 + k) for k in range(60)]
t0 = time.time()
early, late, rows = T.train(train_insts, cfg)
print(f'train {time.time()-t0:.0f}s for {iters} iters', flush=True)
with open('/tmp/nets5.pkl', 'wb') as f:
    pickle.dump((early, late), f)

z_early, z_late = T.zero_nets('doge')
wins = 0
gts, gds = [], []
for k in range(n_eval):
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
    print(f'trained E+50={m1.best_bound+50:+.3e} gI={m1.gap_integral:.6f} | '
          f'default E+50={m2.best_bound+50:+.3e} gI={m2.gap_integral:.6f} win={win}', flush=True)
print(f'WINS {wins}/{n_eval}  mean gI trained={np.mean(gts):.6f} default={np.mean(gds):.6f} '
      f'strictly_lower={np.mean(gts) < np.mean(gds)}')

probe_bank = build_bank(train_insts[0], mm.decompose(train_insts[0]))
ps = dual.init_dual(probe_bank); ph = net.new_history(probe_bank)
pf = net.compute_features(probe_bank, ps, ph)
for tag, w in (('early', early), ('late', late)):
    out, cache = net.gnn_forward(probe_bank, pf, net.zero_state(probe_bank), w)
    raw = cache['t']['theta_hat']
    print(f'{tag}: omega mean {out.omega.mean():.4f} |theta| max {np.abs(out.theta).max():.2e} '
          f'|raw theta| max {np.abs(raw).max():.3f}')
