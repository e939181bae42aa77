"""Scenario-2 permutation histograms on a planted-order task and an orderless task."""
from _common import dump, parser

from permset import experiments

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--epochs", type=int, default=45)
    ap.add_argument("--warmup", type=int, default=30, help="epochs with the permutation prior left out of the argmin")
    ap.add_argument("--n-train", type=int, default=3000)
    args = ap.parse_args()
    cfg = experiments.FitConfig(epochs=args.epochs)
    res = experiments.permutation_discovery(seed=args.seed, n_train=args.n_train, warmup=args.warmup, cfg=cfg)
    dump("permutation_discovery", dict(res, config=experiments.config_dict(cfg), warmup=args.warmup), args.out)
