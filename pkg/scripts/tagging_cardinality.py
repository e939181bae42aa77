"""Cardinality MAE on synthetic tagging: joint model vs cardinality-only head."""
from _common import dump, parser

from permset import experiments

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()
    cfg = experiments.FitConfig(epochs=args.epochs)
    res = experiments.tagging_cardinality(seed=args.seed, cfg=cfg)
    dump("tagging_cardinality", dict(res, config=experiments.config_dict(cfg)), args.out)
