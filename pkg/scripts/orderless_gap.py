"""Scenario 3 vs fixed storage-order training on toy detection, several seeds."""
from _common import dump, parser

from permset import experiments

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=40)
    args = ap.parse_args()
    cfg = experiments.FitConfig(epochs=args.epochs)
    res = experiments.orderless_gap(seeds=args.seeds, cfg=cfg)
    dump("orderless_gap", dict(res, config=experiments.config_dict(cfg)), args.out)
