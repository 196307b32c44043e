"""Write a directory of synthetic scenes plus their ground-truth label PNGs.

    python scripts/make_scenes.py out/ --count 20 --labels 6 --layout voronoi --noise 0.25
"""
import argparse
from pathlib import Path

from modseg import imaging
from modseg.backend.scenes import LAYOUTS, make_scene


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--labels", type=int, default=6)
    ap.add_argument("--layout", choices=LAYOUTS, default="voronoi")
    ap.add_argument("--noise", type=float, default=0.0, help="feature noise, fraction of prototype spacing")
    ap.add_argument("--size", type=int, nargs=2, default=(512, 512), metavar=("H", "W"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    (args.out / "gt").mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        scene = make_scene(args.seed + i, n_labels=args.labels, size=tuple(args.size), layout=args.layout,
                           noise_fraction=args.noise)
        name = f"scene{i:03d}"
        scene.save(args.out / f"{name}.json")
        imaging.save_label_png(args.out / "gt" / f"{name}.png", scene.labels)
    print(f"wrote {args.count} scenes to {args.out}")


if __name__ == "__main__":
    main()
