# Layer table for the hybrid model
#
# Three involution layers sit in front of a small conv stack. Each one only
# learns a 1x1 bottleneck that generates a 3x3 kernel per pixel, so they add
# 26 parameters apiece to a network of ~357k.

from involnet.model import ModelVariant, build_model, storage_size_mb, summarize

model = build_model(ModelVariant("hybrid", 3))
print(summarize(model).format())

# The rest of the family differs only in the number of involution layers.

print()
for n in range(7):
    m = build_model(ModelVariant("hybrid", n))
    print(f"{m.variant.label:<10} {summarize(m).total:>9,} params  {storage_size_mb(m):.2f} MB")

# Swapping the conv stack for involution alone is *larger*, because the
# flatten feeding dense_1 keeps all 48x48x3 values.

inv = build_model("inv-only")
print(f"\n{inv.variant.label:<10} {summarize(inv).total:>9,} params  {storage_size_mb(inv):.2f} MB")
