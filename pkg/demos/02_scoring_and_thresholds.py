# # From reconstruction errors to an alarm
#
# Errors |x - x'| on held-out normal windows are modelled by one Gaussian.
# Each new point is scored by its squared Mahalanobis distance and flagged
# when the score exceeds a threshold tau.

# In[1]:

import numpy as np

from encdec_ad import (
    anomaly_score,
    classify,
    evaluate,
    fit_error_model,
    select_threshold_supervised,
    select_threshold_unsupervised,
)

rng = np.random.default_rng(0)

# Pretend these are reconstruction errors for a 2-channel series. Normal
# points have small correlated errors, anomalous ones are larger.

# In[2]:

cov = np.array([[0.04, 0.018], [0.018, 0.02]])
normal_err = np.abs(rng.multivariate_normal([0, 0], cov, size=2000))
anomal_err = np.abs(rng.multivariate_normal([0.6, 0.3], cov, size=80))

gm = fit_error_model(normal_err[:1000])
print("fitted mean", gm.mean, "\nfitted covariance\n", gm.cov)

# In[3]:

val_scores = np.concatenate([anomaly_score(gm, normal_err[1000:1500]), anomaly_score(gm, anomal_err[:40])])
val_labels = np.r_[np.zeros(500, bool), np.ones(40, bool)]
print("median normal score", np.median(val_scores[:500]))
print("median anomalous score", np.median(val_scores[500:]))

# With labelled anomalies we pick the tau that maximises F-beta. A small
# beta weights precision over recall.

# In[4]:

sup = select_threshold_supervised(val_scores, val_labels, beta=0.1)
print(f"supervised tau={sup.tau:.3f}  F0.1={sup.best_f_beta:.3f}  ({sup.n_candidates} candidates)")

# Without labels, tau is the mean plus one standard deviation of the
# normal validation scores.

# In[5]:

uns = select_threshold_unsupervised(val_scores[:500])
print(f"unsupervised tau={uns.tau:.3f}")

# In[6]:

test_scores = np.concatenate([anomaly_score(gm, normal_err[1500:]), anomaly_score(gm, anomal_err[40:])])
truth = np.r_[np.zeros(500, bool), np.ones(40, bool)]
for name, thr in (("supervised", sup), ("unsupervised", uns)):
    m = evaluate(classify(test_scores, thr.tau), truth, beta=0.1)
    print(f"{name:12s} P={m.precision:.3f} R={m.recall:.3f} F0.1={m.f_beta:.3f} TPR/FPR={m.plr:.1f}")
