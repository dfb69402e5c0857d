"""
Equal error rate by hand
========================

Higher score means "synthetic". A sample scoring exactly at the
threshold counts as synthetic. The EER sits where the false-acceptance
and false-rejection curves cross, interpolated linearly between the
two operating points that bracket the crossing.
"""

import numpy as np

from vocoder_artifacts import metrics as Mx

s = Mx.ScoreSet([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
thr, far, frr = Mx.det_points(s)
print(f"{'threshold':>10s} {'FAR':>6s} {'FRR':>6s}")
for t, a, b in zip(thr, far, frr):
    print(f"{t:10.2f} {a:6.3f} {b:6.3f}")

e, t = Mx.eer(s)
print(f"EER = {e:.4f} at threshold {t}")

# %%
# Only the order of the scores matters.
print("after exp():", Mx.eer(Mx.ScoreSet(np.exp(s.scores), s.y))[0])

# %%
# Orientation is never flipped: an inverted detector scores above 0.5.
print("inverted:", Mx.eer(Mx.ScoreSet(-s.scores, s.y))[0])

# %%
# A confusion matrix over {real} plus the vocoder classes, with a report.
c = np.array([1, 2, 2, 0, 0, 0])
pred = np.array([1, 2, 1, 0, 0, 2])
full = Mx.ScoreSet(s.scores, s.y, c=c, pred_c=pred)
print(Mx.report(full, 3, ["real", "GL-A", "GL-B"]).to_text())
