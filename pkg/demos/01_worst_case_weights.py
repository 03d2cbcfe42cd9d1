# %% [markdown]
# # Worst-case weights over a batch
#
# Given per-sample losses, the KL-robust objective is a temperature-scaled
# log-mean-exp. Its maximizing distribution is a softmax over losses. This
# script shows how the temperature `beta` moves the objective between the
# batch mean and the batch max, and how the discrete top-fraction variant
# compares.

# %%
import numpy as np

from robust_unlearning import dro

losses = np.array([0.2, 0.5, 0.9, 2.5, 4.0])
print("losses:", losses, " mean:", losses.mean(), " max:", losses.max())

# %% [markdown]
# ## Sweeping the temperature

# %%
print(f"{'beta':>8} {'objective':>10} {'KL(Q||P)':>9}  weights")
for beta in (1e-3, 0.1, 0.5, 1.0, 2.0, 5.0, 1e6):
    aw = dro.dv_weights(losses, beta)
    print(f"{beta:8.3g} {dro.dv_objective(losses, beta):10.4f} {aw.kl_to_empirical:9.4f}  "
          + " ".join(f"{w:.3f}" for w in aw.weights))

# %% [markdown]
# Small `beta` puts nearly all mass on the hardest sample; huge `beta`
# recovers uniform weights and the plain mean. The weighted expected loss
# minus `beta` times the KL term reproduces the objective exactly:

# %%
for beta in (0.3, 2.0):
    aw = dro.dv_weights(losses, beta)
    lhs = aw.weights @ losses - beta * aw.kl_to_empirical
    print(f"beta={beta}: E_Q[l] - beta*KL = {lhs:.15f}, objective = {dro.dv_objective(losses, beta):.15f}")

# %% [markdown]
# ## Discrete selection
#
# The top-fraction variant keeps the ceil(rho * n) largest losses and
# averages their gradients. With a group labelling it instead keeps the
# group with the largest mean loss.

# %%
for rho in (0.2, 0.5, 1.0):
    print(f"rho={rho}: selected indices {dro.top_fraction_select(losses, rho).tolist()}")
print("group max:", dro.group_max_loss(losses, [0, 0, 1, 1, 1]))
print("weights G rho=0.5:", dro.batch_weights(losses, dro.DroConfig(dro.G, rho=0.5)))
