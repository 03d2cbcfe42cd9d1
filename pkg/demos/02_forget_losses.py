# %% [markdown]
# # The forget-loss family on a toy language model
#
# Every loss here is a per-sample scalar with an analytic gradient. We
# build a tiny MLP language model, evaluate each loss on one sample, and
# confirm the gradients against central finite differences.

# %%
import numpy as np

from robust_unlearning import losses as L
from robust_unlearning.toy_models import MLP, Sample, grad_check, init_model, token_logprobs

model = init_model(MLP, vocab_size=6, context_order=2, seed=0, embed_dim=4, hidden_dim=8, scale=0.8)
ref = init_model(MLP, vocab_size=6, context_order=2, seed=1, embed_dim=4, hidden_dim=8, scale=0.8)
sample = Sample(0, prompt=(1, 2), target=(3, 0, 5, 4))
print("token log-probs:", np.round(token_logprobs(model, sample), 4))

# %%
weights = L.satimp_weights(model, sample, 1.0, 1.0)
family = {
    "GA": lambda m: L.ga_loss(m, sample),
    "NPO": lambda m: L.npo_loss(m, ref, sample, 1.0),
    "SimNPO": lambda m: L.simnpo_loss(m, sample, 1.0),
    "SatImp": lambda m: L.satimp_loss(m, sample, weights=weights),
    "retain CE": lambda m: L.retain_loss(m, sample),
}
for name, fn in family.items():
    value, _ = fn(model)
    print(f"{name:>9}: loss {value:+.5f}   finite-difference rel err {grad_check(model, fn):.1e}")

# %% [markdown]
# NPO measured against the model itself sits at exactly 2 ln 2.

# %%
print(L.npo_loss(model, model, sample, 1.0)[0], 2 * np.log(2))
