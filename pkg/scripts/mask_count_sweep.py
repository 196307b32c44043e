"""Sweep the number of low-resolution masks K and report mIoU for each value.

    python scripts/mask_count_sweep.py --values 10 20 30 40
"""
import argparse

from modseg.backend.scenes import make_scene
from modseg.config import RunConfig
from modseg.pipeline import segment
from modseg.protocols import ProtocolInputs, evaluate_entries


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--values", type=int, nargs="+", default=[10, 20, 30, 40])
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--labels", type=int, default=6)
    ap.add_argument("--noise", type=float, default=0.25)
    ap.add_argument("--protocol", choices=("modified", "traditional"), default="modified")
    args = ap.parse_args(argv)

    scenes = {f"scene{s:03d}": make_scene(s, n_labels=args.labels, noise_fraction=args.noise)
              for s in range(args.scenes)}
    inputs = ProtocolInputs(ground_truth={name: s.labels for name, s in scenes.items()})
    scores = {}
    for K in args.values:
        cfg = RunConfig(K=K)
        results = [segment((name, s.render()), cfg, scene=s, use_cache=False) for name, s in scenes.items()]
        scores[K] = 100 * evaluate_entries(results, args.protocol, inputs).miou
        print(f"K={K:>3}  mIoU {scores[K]:.2f}", flush=True)
    print(f"spread {max(scores.values()) - min(scores.values()):.2f} points")


if __name__ == "__main__":
    main()
