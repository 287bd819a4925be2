"""Run the shipped experiment files through the CLI and print the headline numbers.

    python3 scripts/reproduce.py                  # every problem in problems/ except fig5
    python3 scripts/reproduce.py fig1_const fig2_tv --out runs
"""
import argparse
import json
import sys
import time
from pathlib import Path

from robustavg.cli import main as cli

ROOT = Path(__file__).resolve().parent.parent
DEFAULT = ["fig1_const", "fig2_tv", "fig3_mult", "fig4_two_unc", "amp_phase"]


def headline(out: Path) -> str:
    s = json.loads((out / "summary.json").read_text())
    parts = [f"{s['status']} in {s['iterations']} iterations (switch at {s['switch_iter']})",
             f"F_nom {s['F_final']:.10f}", f"J {s['J_stage1']:.4g} -> {s['J_final']:.4g}"]
    for key in ("worst_infidelity", "mean_infidelity"):
        d = s[key]
        if d.get("robust"):
            parts.append(f"{key.split('_')[0]} infidelity {d['stage1']:.2e} -> {d['robust']:.2e} "
                         f"({d['stage1'] / d['robust']:.1f}x)")
    return "; ".join(parts)


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=DEFAULT)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    worst = 0
    for name in args.names:
        out = Path(args.out) / name
        t0 = time.perf_counter()
        code = cli(["synthesize", str(ROOT / "problems" / f"{name}.json"), "--out", str(out),
                    "--threads", str(args.threads)])
        worst = max(worst, code)
        print(f"== {name} ({time.perf_counter() - t0:.0f} s, exit {code})")
        if (out / "summary.json").exists():
            print("   " + headline(out))
    return worst


if __name__ == "__main__":
    sys.exit(run())
