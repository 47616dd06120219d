"""Independent evaluation of the hand-derived fixture values used by the C++ tests.

Every quantity is recomputed from its defining formula with plain numpy; the
script fails if any frozen value drifts by more than 1e-3.
"""
import math
import sys

import numpy as np

TOL = 1e-3
failures = []


def check(name, got, want, tol=TOL):
    ok = abs(got - want) <= tol
    print(f"{'ok  ' if ok else 'FAIL'} {name}: {got:.6f} (frozen {want})")
    if not ok:
        failures.append(name)


def softmax(v):
    e = np.exp(v - np.max(v))
    return e / e.sum()


pr = np.array([-1.2, 2.9, 7.1])
sm = softmax(pr)
check("softmax[0]", sm[0], 0.000244785, 1e-9)
check("cross_entropy label 2", -math.log(sm[2]), 0.0151291, 1e-6)
check("cross_entropy uniform C=5", -math.log(softmax(np.zeros(5))[0]), 1.6094)

# Multi-class IoU loss on K=2, C=2.
probs = np.array([[0.8, 0.2], [0.4, 0.6]])
gt = np.array([[1.0, 0.0], [0.0, 1.0]])
inter = (probs * gt).sum(0)
union = (probs + gt - probs * gt).sum(0)
check("iou_loss K=2", 1 - (inter / union).mean(), 0.4643)
check("W_p class 1", 1 / union[0], 0.7143)
check("W_n class 1", inter[0] / union[0] ** 2, 0.4082)
u = np.full((2, 2), 0.5)
check("iou_loss uniform", 1 - ((u * gt).sum(0) / (u + gt - u * gt).sum(0)).mean(), 2 / 3)

# Hinge and linear L_p / L_n on the example vector, ground truth index 1.
gt_vec = np.array([0.0, 1.0, 0.0])
score_gt = pr @ gt_vec
lp_hinge = max((pr * (1 - gt_vec)).max() - score_gt + 1.0, 0.0)
ln_hinge = max(pr @ np.eye(3)[2] - score_gt + 1.0, 0.0)
check("hinge L_p g=1", lp_hinge, 5.2)
check("hinge L_n t=2 g=1", ln_hinge, 5.2)
check("linear L_p", -score_gt, -2.9)
ln_lin = 0.0 if score_gt > pr[2] + 0.0 else pr[2]
check("linear L_n t=2 g=0", ln_lin, 7.1)


# Single-sample segmentation loss, scores (2,-1), label index 1, hand stats.
def seg_loss(scores, label, wp, wn, variant, g):
    c = len(scores)
    oh = np.eye(c)[label]
    num = 0.0
    for t in range(c):
        if t == label:
            lp = -scores[label] if variant == "linear" else max((scores * (1 - oh)).max() - scores[label] + g, 0)
            num += wp[t] * lp
        else:
            if variant == "linear":
                ln = 0.0 if scores[label] > scores[t] + g else scores[t]
            else:
                ln = max(scores[t] - scores[label] + g, 0)
            num += wn[t] * ln
    return num / (1 * (wp.sum() + wn.sum()))


wp = np.array([0.5, 0.25])
wn = np.array([0.1, 0.2])
check("seg_loss linear g=0", seg_loss(np.array([2.0, -1.0]), 1, wp, wn, "linear", 0.0), 0.428571)
check("seg_loss hinge g=1", seg_loss(np.array([2.0, -1.0]), 1, wp, wn, "hinge", 1.0), 1.333333)

# Temporal smoothing weights: Gaussian, sigma 0.6, five-frame window, normalised.
k = np.exp(-0.5 * (np.arange(-2, 3) / 0.6) ** 2)
k /= k.sum()
for i, want in enumerate([0.00256, 0.1655, 0.6637, 0.1655, 0.00256]):
    check(f"smoothing weight {i}", k[i], want)

if failures:
    print("failed:", ", ".join(failures))
    sys.exit(1)
print("all fixture values confirmed")
