# %% [markdown]
# # Membership signals before and after unlearning
#
# Forget samples are members of the Original model's training data and
# holdout samples are not. A membership attack scores each sample and the
# AUC measures how well it separates the two. After unlearning the forget
# samples should look no more member-like than unseen text.

# %%
import numpy as np

from robust_unlearning import experiment
from robust_unlearning.metrics import exact_match, extraction_strength, privacy_report

seed = 0
corpus, original = experiment.desk_original(seed)
unlearned = experiment.run_variant(seed, experiment.VARIANTS["NPO+DV"]).model

# %%
for label, model in (("Original", original), ("NPO+DV", unlearned)):
    pr = privacy_report(model, corpus.forget, corpus.holdout)
    em = np.mean([exact_match(model, s) for s in corpus.forget])
    es = np.mean([extraction_strength(model, s) for s in corpus.forget])
    print(f"{label:>8}: AUC LOSS {pr.auc_loss:.3f}  MinK {pr.auc_mink:.3f}  MinK++ {pr.auc_minkpp:.3f}"
          f"   forget EM {em:.2f}  ES {es:.2f}")

# %% [markdown]
# An AUC well below 0.5 means the attack now ranks forget samples as
# *less* likely than unseen ones: the model has pushed them below the
# background rate, itself a detectable footprint.
