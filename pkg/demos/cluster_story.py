"""Scene values are multi-modal, and AIC can count the modes.

Builds 50 corridor scenes of two structurally different lengths, computes
each scene's exact start-state value under one fixed noisy policy, and lets
GMM/EM + AIC decide how many value clusters the flattened samples contain.

Run:  python demos/cluster_story.py
"""

import numpy as np

from dvelab.analysis import (aic, exact_state_values, select_clusters,
                             start_state_value)
from dvelab.envkit import EnvConfig, Family, generate_scene
from dvelab.netcore import NetSpec, init_params
from dvelab.rng import stream


def main():
    widths = ([4, 5] * 13 + [10, 11, 12] * 8)[:50]
    obs_dim = EnvConfig(obs_window=3).obs_dim
    spec = NetSpec(input_dim=obs_dim, trunk=(16,), hidden=16,
                   heads={"policy": 4, "value": 1})
    params = init_params(spec, stream(0, "init"))
    W = params.view("head.policy.W")
    W += stream(0, "cluster.policy").normal(0.0, 0.2, W.shape)

    samples = []
    for i, w in enumerate(widths):
        cfg = EnvConfig(width=w, height=3, obs_window=3, t_max=16, n_levels=1,
                        families=(Family.CORRIDOR,), family_mix=(1.0,),
                        gamma=0.95)
        scene = generate_scene(i, Family.CORRIDOR, cfg)
        samples.append(start_state_value(
            exact_state_values(scene, params, spec, cfg), scene))
    samples = np.asarray(samples)

    short = samples[[i for i, w in enumerate(widths) if w <= 5]]
    long_ = samples[[i for i, w in enumerate(widths) if w >= 10]]
    print(f"short corridors (len 4-5):  mean V = {short.mean():.3f}")
    print(f"long corridors (len 10-12): mean V = {long_.mean():.3f}\n")

    c_star, models, aics = select_clusters(samples, c_range=(1, 6), seed=0)
    print("C   AIC")
    for c, a in zip(range(1, 7), aics):
        marker = "  <- selected" if c == c_star else ""
        print(f"{c}   {a:9.2f}{marker}")
    model = models[c_star - 1]
    print(f"\nselected C* = {c_star}; component means: "
          + ", ".join(f"{m:.3f}" for m in model.means))
    print("(the pool mixes 5 distinct corridor lengths — 4, 5, 10, 11, 12 — "
          "so a count above 2 is AIC seeing real sub-structure)")


if __name__ == "__main__":
    main()
