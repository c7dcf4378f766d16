# %% [markdown]
# # From exploration to preference data
#
# A perturbed oracle is asked twice at every step. Its mistakes become failed
# siblings in the task tree, and the tree is turned into preference pairs for
# the reward model.

# %%
from collections import Counter

from octoloop.feedback import build_reward_dataset, sibling_groups
from octoloop.pipeline import noisy_collection
from octoloop.suite import load_suite

suite = load_suite()
col = noisy_collection(suite, seeds=[0], temperature=0.5, attempts_per_step=2)
print("completed:", sum(ep.outcome for ep in col.episodes), "of", len(col.episodes))
print("step failures:", col.failures())

# %% [markdown]
# One tree in detail. A node hangs off the last step that succeeded, so
# retries of the same subtask are siblings.

# %%
tree = next(t for t in col.trees
            if t.task_success and any(not n.step_success for n in t.step_nodes()))
print(tree.task_name)
for group in sibling_groups(tree):
    labels = [f"{n.node_id}:{n.effective}" for n in group]
    print(group[0].parent_id, "->", " ".join(labels))

# %% [markdown]
# Sibling groups with both outcomes give pairs. The rest give singletons,
# which are positive only when the whole task succeeded.

# %%
ds = build_reward_dataset(col.trees)
print("pairs:", len(ds.pairs()), "singletons:", len(ds.singletons()))
print(Counter(e.preferred for e in ds.singletons()))
