# Retrieval as a stand-in for a learned prior
#
# A patch bank stores (depth patch, part occupancy) pairs rendered from
# single-object scenes. At test time each patch borrows the part of its
# nearest bank patch (L1 on raw depth). Small patches repeat across shapes,
# whole images do not, which is why local levels transfer to compositions.
#
# This is a reduced version of the acceptance experiment and runs in about
# half a minute.

from hpn.backends import RetrievalBackend, build_bank
from hpn.compose import compose_scenes
from hpn.metrics import evaluate_split
from hpn.pipeline import Level, reconstruct
from hpn.render import render_depth

W, R = 128, 32
train = compose_scenes(40, 1, seed=7)
depths = [render_depth(s, W, W) for s in train]
banks = {n: RetrievalBackend(build_bank(train, n, width=W, grid_res=R, depths=depths)) for n in (128, 16)}
print({n: len(b.bank) for n, b in banks.items()}, "bank entries")

test = compose_scenes(5, 2, seed=99, min_objects=2)
for name, levels in [("global", [128]), ("hierarchy", [128, 16]), ("local", [16])]:
    scores = []
    for s in test:
        d = render_depth(s, W, W)
        rec = reconstruct(d, [Level(n, banks[n]) for n in levels], grid_res=R)
        scores.append(evaluate_split(rec.mesh, s, d, eps=2 / R, d_thresh=0.04).fscore)
    print(f"{name:10s} mean F = {sum(scores) / len(scores):.1f}")

# Shrinking the bank hurts the local level surprisingly little.

for frac in (0.05, 1.0):
    be = RetrievalBackend(banks[16].bank.subsample(frac, seed=0))
    s = test[0]
    d = render_depth(s, W, W)
    rec = reconstruct(d, [Level(16, be)], grid_res=R)
    print(f"bank fraction {frac:4.2f} ({len(be.bank)} entries): F =",
          round(evaluate_split(rec.mesh, s, d, 2 / R, d_thresh=0.04).fscore, 1))
