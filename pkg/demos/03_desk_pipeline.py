# %% [markdown]
# # Supervised fit, reward model, PPO
#
# Train on routine tasks in seen scenes, then compare the two policies on the
# whole suite. Reasoning tasks and unseen scenes are never trained on.

# %%
import time

from octoloop.bench import render_report
from octoloop.pipeline import desk_pipeline
from octoloop.suite import load_suite

t0 = time.perf_counter()
run = desk_pipeline(load_suite())
print(f"finished in {time.perf_counter() - t0:.1f} s")

# %%
print(f"SFT exact-script accuracy on its training steps: {run.sft_accuracy:.2f}")
r = run.reward_report
print(f"reward model: {r.n_train} train, {r.n_heldout} held-out pairs, "
      f"held-out accuracy {r.heldout_accuracy:.2f}")

# %% [markdown]
# Mean reward of sampled scripts across PPO iterations, and the drift from
# the supervised policy.

# %%
trace = run.trace
print(" ".join(f"{x:.3f}" for x in trace.mean_reward))
print(f"final per-sample KL {trace.mean_kl[-1]:.4f}, skipped iterations {trace.skipped}")

# %%
print(render_report([run.sft_eval, run.rlef_eval]))
