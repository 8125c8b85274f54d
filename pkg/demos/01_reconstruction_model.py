# # Reconstructing a window with the encoder-decoder
#
# An LSTM reads a window of length L and its final state seeds a second LSTM
# that writes the window back out, last point first. Here we train one on
# clean sine windows and look at how well it reproduces them.

# In[1]:

import numpy as np

from encdec_ad import EncDecModel, TrainConfig, reconstruct, train, window_loss
from encdec_ad.data import make_windows
from encdec_ad.synthetic import sine_series

# In[2]:

# 60 windows of 30 points, no spikes
frame = sine_series(n_windows=60, L=30, n_anomalous=0, seed=1)
ws = make_windows(frame, 30, 30)
train_set, val_set = ws.values[:45], ws.values[45:]
print(train_set.shape, val_set.shape)

# An untrained model starts from small random weights, so its output is
# roughly flat.

# In[3]:

fresh = EncDecModel.initialize(m=1, c=16, L=30, seed=0)
print("untrained loss:", window_loss(fresh, val_set[0]))

# In[4]:

cfg = TrainConfig(learning_rate=1e-2, batch_size=15, max_epochs=200, patience=20, seed=0)
model, report = train(train_set, val_set, (1, 16, 30), cfg)
print(f"stopped after {report.epochs_run} epochs ({report.stop_reason}), best epoch {report.best_epoch}")
print("best validation loss:", report.best_val_loss)

# Teacher forcing feeds the decoder the true previous point, which is how it
# is trained. At detection time it feeds back its own output instead.

# In[5]:

w = val_set[0]
tf = reconstruct(model, w, mode="teacher_forced").values[:, 0]
ar = reconstruct(model, w, mode="autoregressive").values[:, 0]
print("teacher forced max error:", np.abs(tf - w[:, 0]).max())
print("autoregressive max error:", np.abs(ar - w[:, 0]).max())

# In[6]:

for t in range(0, 30, 5):
    print(f"t={t:2d}  x={w[t, 0]:+.3f}  tf={tf[t]:+.3f}  ar={ar[t]:+.3f}")
