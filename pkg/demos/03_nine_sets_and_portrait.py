# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Nine fate pairs and the phase portrait near Q
#
# Slightly above J(Q), a solution can scatter, blow up or stay near ±Q in
# each time direction. We build one datum for a few of the nine pairs, then
# map the forward fate over the (λ, λ̇) plane.

# %%
from nlkg.lab import Lab, SET_DESCRIPTION, build_witness, phase_portrait, refine_boundary, witness_specs

lab = Lab.build(60.0, 2048, 2e-3)
specs = witness_specs(lab)
for ws in (specs[0], specs[3]):
    w = build_witness(ws, lab)
    r = w.result
    print(f"set {ws.index} ({SET_DESCRIPTION[ws.index]}): "
          f"{r.backward.kind.value} / {r.forward.kind.value}")

# %% [markdown]
# The trapped sets come from bisection on the blow-up/scatter boundary. The
# time spent near Q grows like log(1/width)/k.

# %%
w5 = build_witness(specs[4], lab, window=1e-10)
slope, icpt, r2 = w5.separatrix.shadowing_fit()
print(f"set 5: {w5.result.backward.kind.value} / {w5.result.forward.kind.value}")
print(f"shadowing slope {slope:.3f} vs 1/k = {1 / lab.k:.3f} (R^2 = {r2:.4f})")

# %% [markdown]
# A coarse portrait: the boundary is the stable direction λ̇ = -kλ.

# %%
small = Lab.build(30.0, 1024, 2e-3)
pr = phase_portrait(small, n_side=11, T=8.0)
refine_boundary(small, pr, T=8.0)
print(f"boundary slope {pr.boundary_slope()[0]:.3f} vs -k = {-small.k:.3f}")
for row in pr.set_indices().T[::-1]:
    print(" ".join(str(x) for x in row))
