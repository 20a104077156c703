"""Regenerate the small synthetic dataset shipped with the package."""

from pathlib import Path

from hbsae.data import write_dataset
from hbsae.sim import SimConfig, simulated_dataset

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "hbsae" / "fixtures" / "demo"

if __name__ == "__main__":
    cfg = SimConfig(m=10, total_sample=400, seed=7)
    ds, _ = simulated_dataset(cfg)
    write_dataset(ds, FIXTURE)
    print(f"{ds.n} records in {ds.m} areas written to {FIXTURE}")
