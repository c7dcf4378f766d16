# %% [markdown]
# # One episode in the symbolic kitchen
#
# Load the bacon task, look at what the agent is told, and let the planning
# oracle play the teacher role until the bacon is cooked on the stove.

# %%
from octoloop.explore import OracleTeacher, plan_actions, run_episode
from octoloop.protocol import EpisodeMemory, render_env_message
from octoloop.suite import load_suite

tasks = {t.key: t for t in load_suite()}
bacon = tasks["bacon"]
world = bacon.world(seed=0)
print(f"{len(world.objects)} objects, goal: {bacon.name}")

# %% [markdown]
# The first environment message. Objects inside the closed fridge are not
# listed until the fridge is opened.

# %%
print(render_env_message(world, EpisodeMemory(bacon.name)))

# %% [markdown]
# The oracle searches the action graph for a shortest plan from the current
# state.

# %%
for call in plan_actions(world, bacon.goal):
    print(call.render())

# %% [markdown]
# Running the episode: each step the teacher answers with a four-part
# response, the code is executed, and the target states are checked.

# %%
ep = run_episode(bacon, OracleTeacher(bacon), seed=0)
for rec in ep.steps:
    print(f"step {rec.step}: {rec.subtask:<40} success={rec.step_success}")
print("task completed" if ep.outcome else "task failed", "in", ep.steps_used, "steps")

# %% [markdown]
# A failed step never changes the world. Here the teacher names a target it
# will not reach, so the move is rolled back.

# %%
class Overpromise(OracleTeacher):
    def ask(self, system_msg, env_msg, world=None):
        text = super().ask(system_msg, env_msg, world)
        head, tail = text.split("Target States:")
        return head + "Target States:" + tail.replace("fridge_xyejdx_0", "stove_rgpphy_0")


bad = run_episode(bacon, Overpromise(bacon), seed=0, budget=1).steps[0]
print(bad.error_text)
print("world unchanged:", bad.world_before == bad.world_after)
