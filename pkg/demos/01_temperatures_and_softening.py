"""How temperature reshapes a prediction, and why one value can't fit all.

Walks through softening a single logit vector at several temperatures,
then shows two samples whose logit spreads differ so much that any one
temperature over-softens one of them while under-softening the other.
Per-sample rules fix this by reading the temperature off each sample's
own statistics.

Run: python demos/01_temperatures_and_softening.py
"""

import numpy as np

from normkd import (
    Fixed,
    MaxVal,
    MultiSet,
    NormStd,
    Range,
    multi_temp_prediction,
    sample_std,
    soften,
    temperature_for,
)


def show(vec, fmt="{:7.4f}"):
    return "[" + ", ".join(fmt.format(v) for v in vec) + "]"


# --- one sample, many temperatures -----------------------------------------
z = np.array([4.0, 1.5, 0.5, -1.0, -2.0])
print("logits:", show(z))
print("\nraising the temperature flattens the prediction toward uniform:")
for t in (1.0, 2.0, 4.0, 8.0, 64.0):
    p = soften(z, t)
    print(f"  T={t:5.1f}  p={show(p)}  max={p.max():.4f}")

# --- two samples with very different spreads --------------------------------
confident = np.array([9.0, 1.0, 0.5, -1.0, -3.0])   # std ~ 4.5
hesitant = np.array([1.1, 0.8, 0.2, -0.3, -0.9])    # std ~ 0.8
print("\nconfident sample, std = {:.2f}".format(sample_std(confident)))
print("hesitant  sample, std = {:.2f}".format(sample_std(hesitant)))

print("\na single T=4 treats them very differently:")
for name, zz in (("confident", confident), ("hesitant", hesitant)):
    p = soften(zz, 4.0)
    print(f"  {name:9s} p={show(p)}  max={p.max():.4f}")
print("the confident sample keeps a dominant class (under-softened is fine")
print("here) while the hesitant one is flattened almost to uniform")
print("(over-softened), contributing nearly no class-similarity signal.")

print("\nper-sample rules assign each its own temperature instead:")
rules = (Fixed(4.0), NormStd(2.0), MaxVal(1.0), Range(1.0))
for rule in rules:
    t_conf = temperature_for(rule, confident)
    t_hes = temperature_for(rule, hesitant)
    print(f"  {type(rule).__name__:8s} -> confident T={t_conf:6.3f}   hesitant T={t_hes:6.3f}")

print("\nwith NormStd(2.0) both samples end up equally informative:")
for name, zz in (("confident", confident), ("hesitant", hesitant)):
    t = temperature_for(NormStd(2.0), zz)
    p = soften(zz, t)
    print(f"  {name:9s} p={show(p)}  max={p.max():.4f}")

# --- averaging over a whole set of temperatures ------------------------------
print("\nmulti-temperature averaging blends several softenings of one sample:")
temps = (1.0, 2.0, 4.0)
p_avg = multi_temp_prediction(z, temps)
print(f"  temps={temps}")
print(f"  mean prediction {show(p_avg)} (still sums to {p_avg.sum():.12f})")
print("  MultiSet rule:", temperature_for(MultiSet(temps), z))
