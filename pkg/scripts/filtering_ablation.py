#!/usr/bin/env python3
"""Ablation: how much does the binary objectness filter cut false discovery?

Builds cross-arrangement scenes (two thin same-class boxes crossing like an
X, so corner pairing alone doubles the proposal count), then runs the
pipeline with the binary classifier enabled and bypassed and compares the
average false discovery rates.

Example:
    python scripts/filtering_ablation.py --scenes 12 --seed 99
"""

import argparse
import json
import tempfile
from pathlib import Path

from cornerdet.cli import main as cli_main, proposals_sibling
from cornerdet.postprocess import read_detections


def run(argv) -> None:
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", type=int, default=12)
    parser.add_argument("--seed", type=int, default=99)
    parser.add_argument("--workdir", default=None)
    args = parser.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="cornerdet_abl_"))
    workdir.mkdir(parents=True, exist_ok=True)
    corpus = workdir / "corpus"
    synth_cfg = workdir / "synth.json"
    synth_cfg.write_text(json.dumps({"arrangement": "cross", "num_classes": 4, "noise": 0.04}))
    run(["synth", "--config", str(synth_cfg), "--out", str(corpus),
         "--count", str(args.scenes), "--seed", str(args.seed)])

    results = {}
    for mode, overrides in (("enabled", {"k": 12}), ("bypassed", {"k": 12, "use_binary_head": False})):
        cfg_path = workdir / f"pipe_{mode}.json"
        cfg_path.write_text(json.dumps(overrides))
        dump = workdir / f"dets_{mode}.json"
        run(["detect", "--corpus", str(corpus), "--config", str(cfg_path), "--out", str(dump)])
        report_path = workdir / f"report_{mode}.json"
        run(["eval", "--dets", str(dump), "--gt", str(corpus / "ground_truth.json"),
             "--report", str(report_path)])
        results[mode] = json.loads(report_path.read_text())
        if mode == "enabled":
            n_props = len(read_detections(proposals_sibling(dump)))
            print(f"== {n_props} raw proposals over {args.scenes} scenes "
                  f"({n_props / args.scenes:.1f} per scene, 2 objects each)")

    af_on = results["enabled"]["af"]
    af_off = results["bypassed"]["af"]
    print(f"== AF with binary classifier bypassed: {af_off:.4f}")
    print(f"== AF with binary classifier enabled:  {af_on:.4f}")
    if af_off > 0:
        print(f"== relative reduction: {(1 - af_on / af_off) * 100.0:.1f}%")
    print(f"== artifacts kept in {workdir}")


if __name__ == "__main__":
    main()
