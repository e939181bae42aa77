"""Scenario-3 detection on the overlap-0.6 split; prints the best-F1 curve."""
from _common import dump, parser

from permset import experiments

if __name__ == "__main__":
    ap = parser(__doc__)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--n-train", type=int, default=20000)
    ap.add_argument("--train-overlap", type=float, default=0.6)
    ap.add_argument("--lr", type=float, default=0.005)
    ap.add_argument("--w-l1", type=float, default=5.0)
    ap.add_argument("--w-giou", type=float, default=2.0)
    args = ap.parse_args()
    cfg = experiments.FitConfig(epochs=args.epochs, lr=args.lr, w_l1=args.w_l1, w_giou=args.w_giou)
    res = experiments.occlusion(seed=args.seed, n_train=args.n_train, train_overlap=args.train_overlap, cfg=cfg)
    dump("occlusion", dict(res, config=experiments.config_dict(cfg), n_train=args.n_train), args.out)
