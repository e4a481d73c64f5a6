import numpy as np, time, os, json
from neur2sp.problems import generate_instance
from neur2sp.datagen import DatagenConfig, generate_dataset, load_mc_dataset
from neur2sp.training import default_space, random_search, train_linear_baseline
from neur2sp.surrogate import SurrogateSpec, solve_and_evaluate
from neur2sp.milp import SolveParams, solve

out = "/root/pkg/.calib"
cf = generate_instance("cflp", n_facilities=10, n_customers=10, seed=1)
scen = cf.sample_scenarios(100, seed=7)

ef = solve(cf.build_ef(scen), SolveParams(time_limit=600, seed=0))
print(f"EF: {ef.status} {ef.objective:.2f}", flush=True)

path = os.path.join(out, "mc10k.jsonl")
if not os.path.exists(path):
    t0 = time.time()
    generate_dataset(cf, DatagenConfig("mc", 10000, base_seed=0, workers=2), path)
    print(f"MC datagen: {time.time()-t0:.0f}s", flush=True)
x, y = load_mc_dataset(path)
print("labels: mean", y.mean(), "std", y.std(), flush=True)

for n_configs, epochs in [(8, 100), (8, 200)]:
    t0 = time.time()
    net, board = random_search((x, y), default_space("mc", epochs=epochs),
                               n_configs=n_configs, seed=0, workers=2)
    tt = time.time() - t0
    spec = SurrogateSpec("mc", net, cf, scen, SolveParams(time_limit=600, seed=0, collect_incumbents=False))
    res = solve_and_evaluate(spec, workers=2)
    diff = 100*(res.true_objective - ef.objective)/abs(ef.objective)
    print(f"configs={n_configs} epochs={epochs}: val_mae={net.meta['val_mae']:.0f} "
          f"({net.meta['val_mae']/y.std()*100:.1f}% std) search={tt:.0f}s "
          f"surr_solve={res.solve.wall_time:.0f}s true={res.true_objective:.1f} diff={diff:.2f}%", flush=True)

lin = train_linear_baseline(x, y)
resl = solve_and_evaluate(SurrogateSpec("lr", lin, cf, scen, SolveParams(collect_incumbents=False)), workers=2)
print(f"LR: true={resl.true_objective:.1f} diff={100*(resl.true_objective-ef.objective)/abs(ef.objective):.2f}%", flush=True)
