# Smoke run: synthetic stream -> ingest -> train -> eval -> report
import json
import tempfile
from pathlib import Path

from src.cli import main
from src.corpus.synthetic import StreamSpec, generate_stream, write_jsonl

spec = StreamSpec(n_brands=6, n_slices=3, docs_per_slice=300, V=120, K=4)
run_root = Path(tempfile.mkdtemp(prefix="dbtm_smoke_"))
print(f"Starting smoke run in {run_root}\n")

# Synthetic reviews with planted brand polarity
records, truth, boundaries = generate_stream(spec)
write_jsonl(records, run_root / "reviews.jsonl")
truth.to_csv(run_root / "planted_truth.csv", index=False)

config_path = run_root / "run.json"
config_path.write_text(json.dumps({
    "input": str(run_root / "reviews.jsonl"),
    "output_dir": str(run_root / "run"),
    "boundaries": boundaries,
    "min_df": 3,
    "max_df_frac": 1.0,
    "ngram_max": 1,
    "K": spec.K,
    "pf_max_iters": 50,
    "batch": 64,
    "max_steps": 300,
    "checkpoint_interval": 100,
}, indent=2))

for command in (["ingest"], ["train"], ["eval"], ["report", "--brand", "brand_00"]):
    code = main(command + ["--config", str(config_path)])
    if code != 0:
        print(f"\n✗ {command[0]} failed with exit code {code}")
        raise SystemExit(code)

print(f"\n✓ Smoke run complete: {run_root / 'run'}")
print(f"  Metrics: {run_root / 'run' / 'eval' / 'metrics.csv'}")
print(f"  Report:  {run_root / 'run' / 'report'}")
