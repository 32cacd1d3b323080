# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Below the ground-state energy: scatter or blow up
#
# Data aQ with a < 1 have K₀ > 0 and scatter; a > 1 gives K₀ < 0 and
# blow-up. Close to Q the exit is driven by the unstable mode at rate k.

# %%
from nlkg.lab import Lab, ejection_audit

lab = Lab.build(60.0, 2048, 2e-3)
for a in (0.8, 1.2):
    rec = lab.evolve(lab.scaled(a), 40.0)
    print(f"{a}Q: {rec.fate.kind.value} at t = {rec.samples[-1].t:.2f}")

# %% [markdown]
# The blow-up witness records a fitted rate N(t) ~ (T* - t)^(-alpha).

# %%
rec = lab.evolve(lab.scaled(1.5), 40.0)
w = rec.fate.witness
print(f"T* = {w['T_star']:.4f}, alpha = {w['alpha']:.3f}, reason: {w['reason']}")

# %% [markdown]
# Pure unstable-mode data (λ, λ̇) = (a, ka) leave the neighbourhood of Q
# with d_Q growing like e^{kt}. The sign of λ decides the fate.

# %%
for a in (0.02, -0.02):
    rec = lab.evolve(lab.datum(a, lab.k * a), 12.0, exit_mode=True)
    fit = ejection_audit(rec, lab.p, lab.spec)
    print(f"a = {a:+}: rate {fit.rate:.4f} vs k = {lab.k:.4f}, "
          f"fate {rec.fate.kind.value}")
