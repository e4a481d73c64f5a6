import numpy as np, time, itertools
from neur2sp.problems import generate_instance
from neur2sp.datagen import load_mc_dataset
from neur2sp.training import McTrainConfig
from neur2sp.nn_core import train
from neur2sp.milp import SolveParams, solve

cf = generate_instance("cflp", n_facilities=10, n_customers=10, seed=1)
scen = cf.sample_scenarios(100, seed=7)
x, y = load_mc_dataset(".calib/mc10k.jsonl")
print("label quantiles:", np.percentile(y, [0, 25, 50, 75, 90, 99, 100]).round(0), flush=True)
low = y < 20000
print("share of samples with label<20k:", low.mean(), flush=True)

cfg = McTrainConfig(batch_size=128, learning_rate=0.005, optimizer="adam",
                    epochs=300, seed=0, relu_hidden_dim=64,
                    l1_penalty=0.0, l2_penalty=0.0, dropout_rate=0.0)
t0=time.time()
net, hist = train([x.shape[1], 64], x, y, cfg)
print(f"trained {time.time()-t0:.0f}s val_mae={net.meta['val_mae']:.0f}", flush=True)

pred = net.predict(x)
print("MAE low-region:", np.abs(pred[low]-y[low]).mean().round(1),
      "MAE high:", np.abs(pred[~low]-y[~low]).mean().round(0), flush=True)

# ranking fidelity on candidate first stages
ef = solve(cf.build_ef(scen), SolveParams(time_limit=600, seed=0, collect_incumbents=False))
x_ef = np.round([ef.values[h] for h in range(10)])
rng = np.random.default_rng(0)
cands = [x_ef] + [np.abs(x_ef - (rng.random(10) < 0.15)) for _ in range(6)] \
      + [(rng.random(10) < r).astype(float) for r in (0.3, 0.5, 0.5, 0.7, 0.9)]
print("EF obj:", round(ef.objective, 1), "x_ef:", x_ef.astype(int), flush=True)
for c in cands:
    true = cf.evaluate_true_objective(c, scen, workers=2)
    feats = np.hstack([np.tile(c, (100, 1)), scen.scenarios])
    pred_exp = cf.first_stage_cost @ c + net.predict(feats).mean()
    print(f"x={''.join(str(int(v)) for v in c)} true={true:10.1f} pred={pred_exp:12.1f}", flush=True)
