"""Run a miniature ablation sweep and point the plotter at the CSV.

The sweep runners cache shared stages (datasets, denoisers, generated
samples) across variants within one invocation, so grids cost far less
than variants x seeds full runs.
"""

from pathlib import Path

from tailgen import (CbdmConfig, DatasetConfig, FilterConfig, GroupBounds,
                     PipelineConfig, ScheduleConfig, classifier_train_defaults,
                     denoiser_train_defaults, run_ablation_grid)

out = Path("demo_out") / "sweep"

cfg = PipelineConfig(
    dataset=DatasetConfig(num_classes=10, n1=100, ratio=10.0, test_per_class=60,
                          seed=0),
    groups=GroupBounds(many_min=50, few_max=20),
    schedule=ScheduleConfig(num_steps=60),
    generator="cbdm",
    cbdm=CbdmConfig(tau=1.0, gamma=0.25),
    target_count=100,
    filter=FilterConfig("prob", 5e-7),
    denoiser_width=16,
    denoiser_train=denoiser_train_defaults(epochs=15, seed=1),
    f0_train=classifier_train_defaults(epochs=12, seed=2),
    classifier_train=classifier_train_defaults(epochs=12, omega=0.3, seed=3),
)

variants = (
    ("baseline", "none", False, False),
    ("gen_c", "cbdm", False, False),
    ("gen_c_w", "cbdm", True, False),
    ("gen_c_w_f", "cbdm", True, True),
)

print("running 4 variants x 2 seeds (stages shared through the cache) ...")
rows = run_ablation_grid(cfg, seeds=[0, 1], variants=variants, out_dir=str(out))

print(f"\n{'variant':12s} {'seed':>4s} {'overall':>8s} {'few':>8s}")
for row in rows:
    print(f"{row['variant']:12s} {row['seed']:4d} {row['overall']:8.3f} {row['few']:8.3f}")

csv_path = out / "reports" / "ablation.csv"
print(f"\nrows written to {csv_path}")
print("render the figure with the plotter package:")
print(f"  cd frontend && npm run build && node dist/cli.js \\")
print(f"      --kind ablation --in ../{csv_path} --out ../demo_out/ablation.svg")
