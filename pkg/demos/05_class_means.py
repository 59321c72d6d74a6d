# Class mean images
#
# Averaging each class shows where the gaze mass sits. The radial second
# moment (dispersion) is larger for the scattered ASD-like class.

from pathlib import Path

from involnet.data import SyntheticSpec, class_mean_images, generate_synthetic
from involnet.viz import export_mean_images

ds = generate_synthetic(SyntheticSpec(per_class=250), seed=7)
mean_asd, mean_td, dispersion = class_mean_images(ds)
print("dispersion", {k: round(v, 1) for k, v in dispersion.items()})

out = Path("out/means")
out.mkdir(parents=True, exist_ok=True)
export_mean_images(mean_asd, mean_td, out)

# A coarse text rendering of the two means, 12x12

chars = " .:-=+*#%@"
for name, img in (("ASD", mean_asd), ("TD", mean_td)):
    small = img[..., 0].reshape(12, 4, 12, 4).mean(axis=(1, 3))
    small = small / small.max()
    print(name)
    for row in small:
        print("".join(chars[int(v * (len(chars) - 1))] * 2 for v in row))
