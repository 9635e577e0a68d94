#!/usr/bin/env python3
"""Regenerate the canonical experiment datasets (CSV + SVG) with the CLI.

Each experiment goes through the public command-line interface, so the CSVs
here are exactly what a user would get; plots are derived from the same data.
Use --trials to trade runtime for Monte Carlo resolution (the default keeps
the whole run in the minutes range).
"""

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ligandsense.cli import main as cli
from ligandsense.experiments import ScenarioConfig


def run(outdir: Path, name: str, argv: list[str]) -> None:
    csv_path = outdir / f"{name}.csv"
    svg_path = outdir / f"{name}.svg"
    print(f"[{name}] ligandsense {' '.join(argv)}")
    code = cli([*argv, "--out", str(csv_path), "--plot", str(svg_path)])
    if code != 0:
        raise SystemExit(f"{name} failed with exit code {code}")


def config_file(tmpdir: str, name: str, **overrides) -> str:
    path = Path(tmpdir) / f"{name}.yaml"
    ScenarioConfig(**overrides).save(path)
    return str(path)


def main_script() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--outdir", default="results")
    parser.add_argument("--trials", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    base = ["--trials", str(args.trials), "--seed", str(args.seed)]
    kinds = ["--estimators", "unbiased,biased,nu_opt"]

    with tempfile.TemporaryDirectory() as tmp:
        run(outdir, "nmse_vs_ligand_types",
            ["sweep", "--var", "M", "--from", "2", "--to", "10", *kinds, *base])
        run(outdir, "nmse_vs_similarity",
            ["sweep", "--var", "chi", "--from", "1.5", "--to", "10", "--points", "10",
             *kinds, *base])
        run(outdir, "nmse_vs_samples",
            ["sweep", "--var", "N", "--from", "100", "--to", "100000", "--points", "7",
             *kinds, *base])
        run(outdir, "nmse_vs_top_ratio_average",
            ["sweep", "--var", "alpha_M", "--from", "0.05", "--to", "0.95",
             "--points", "10", *kinds, *base])
        run(outdir, "nmse_vs_top_ratio_target",
            ["sweep", "--var", "alpha_M", "--from", "0.05", "--to", "0.95",
             "--points", "10", "--metric", "highest_affinity_nmse", *kinds, *base])
        run(outdir, "absence_scenarios",
            ["sweep", "--var", "absence", "--values", "1;2;3;4;5;1,2",
             "--metric", "total_normalized_mse", *base])

        unknown_cfg = config_file(tmp, "unknown", unknown_rates=[100.0],
                                  unknown_ratios=[0.1])
        run(outdir, "unknown_ligand_vs_ratio",
            ["sweep", "--var", "alpha_u", "--from", "0.01", "--to", "0.5",
             "--points", "10", "--config", unknown_cfg, *base])
        run(outdir, "unknown_ligand_vs_rate",
            ["sweep", "--var", "k_u", "--from", "0.01", "--to", "1000000",
             "--points", "13", "--config", unknown_cfg, *base])

        # short/long event filtering: a factor of five outside the outermost
        # thresholds on both sides
        filtered_cfg = config_file(
            tmp, "filtered", unknown_rates=[100.0], unknown_ratios=[0.1],
            filter_lower=3.0 / (5 * 625.0), filter_upper=5.0 * 3.0 / 5.0,
        )
        run(outdir, "unknown_ligand_vs_rate_filtered",
            ["sweep", "--var", "k_u", "--from", "0.01", "--to", "1000000",
             "--points", "13", "--config", filtered_cfg, *base])

        run(outdir, "proofreading_vs_binning",
            ["kpr", "--trials", str(max(args.trials, 2000)), "--seed", str(args.seed)])
        run(outdir, "reaction_network_trajectory", ["crn", "--seed", str(args.seed)])
        run(outdir, "threshold_scale_optimum", ["optimize-nu"])

    print(f"wrote {len(list(outdir.glob('*.csv')))} CSV files to {outdir}/")


if __name__ == "__main__":
    main_script()
