"""
Checking the hand-written gradients
===================================

Backpropagation through both graph convolutions, the eigenmap terms and
the hinge is written out by hand.  Central finite differences give an
independent answer for every weight.
"""

from jpec.gradcheck import check_gradients, random_instance

cases = [
    ("hinge active, tanh", dict(activation="tanh")),
    ("hinge active, relu", dict(activation="relu")),
    ("hinge inactive", dict(margin=0.0)),
    ("no reconstruction term", dict(beta=0.0)),
    ("symmetric operator", dict(norm_mode="symmetric")),
    ("three encoder layers", dict(dims=(4, 6, 5, 3))),
]
for name, kw in cases:
    res = check_gradients(*random_instance(seed=1, **kw), eps=1e-5)
    per = " ".join(f"{e:.1e}" for e in res.per_weight)
    print(f"{name:<24s} max rel err {res.max_rel_error:.2e}  [{per}]")
