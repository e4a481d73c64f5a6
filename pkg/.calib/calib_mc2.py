import numpy as np, time
from neur2sp.problems import generate_instance
from neur2sp.datagen import load_mc_dataset
from neur2sp.training import default_space, random_search
from neur2sp.surrogate import SurrogateSpec, solve_and_evaluate
from neur2sp.milp import SolveParams, solve

cf = generate_instance("cflp", n_facilities=10, n_customers=10, seed=1)
scen = cf.sample_scenarios(100, seed=7)
x, y = load_mc_dataset(".calib/mc10k.jsonl")
ef = solve(cf.build_ef(scen), SolveParams(time_limit=600, seed=0, collect_incumbents=False))
print("EF:", round(ef.objective,1), flush=True)
t0=time.time()
net, board = random_search((x, y), default_space("mc"), n_configs=25, seed=0, workers=2)
print(f"search {time.time()-t0:.0f}s best val_mae={net.meta['val_mae']:.0f} cfg={net.meta['config_id']}", flush=True)
import csv
top = sorted(board, key=lambda r: r['val_mae'])[:5]
for r in top:
    print({k: (round(v,5) if isinstance(v,float) else v) for k,v in r.items() if k in
           ('config_id','batch_size','learning_rate','l1_penalty','l2_penalty','optimizer','dropout_rate','relu_hidden_dim','val_mae')}, flush=True)
res = solve_and_evaluate(SurrogateSpec("mc", net, cf, scen,
        SolveParams(time_limit=600, seed=0, collect_incumbents=False)), workers=2)
diff = 100*(res.true_objective - ef.objective)/abs(ef.objective)
print(f"MC surrogate: solve={res.solve.wall_time:.0f}s x={res.x.astype(int)} true={res.true_objective:.1f} diff={diff:+.2f}%", flush=True)
