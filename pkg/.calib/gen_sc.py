import time
from pathlib import Path
from neur2sp.problems import generate_instance
from neur2sp.datagen import DatagenConfig, generate_dataset

out = Path("/root/pkg/.acceptance/cflp_10_10")
inst = generate_instance("cflp", n_facilities=10, n_customers=10, seed=1)
inst.save(out / "instance.json")
t0 = time.time()
stats = generate_dataset(inst, DatagenConfig("sc", 5000, k_prime_max=100,
                                             base_seed=0, workers=2),
                         out / "data_sc.jsonl")
print(f"done: {stats} in {time.time()-t0:.0f}s", flush=True)
