"""Subset-sum CAPTCHA: set model vs the same model with the query channel zeroed."""
from _common import dump, parser

from permset import experiments

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--n-train", type=int, default=20000)
    ap.add_argument("--n-test", type=int, default=2000)
    ap.add_argument("--U", type=float, default=2.0)
    args = ap.parse_args()
    cfg = experiments.FitConfig(epochs=args.epochs)
    res = experiments.captcha(seed=args.seed, n_train=args.n_train, n_test=args.n_test, U=args.U, cfg=cfg)
    dump("captcha", dict(res, config=experiments.config_dict(cfg)), args.out)
