# Depth sweep: how many involution layers?
#
# Same data, same seed, n = 0..6 involution layers in front of the conv
# stack. One epoch each keeps this quick; the trend depends on the data.

from pathlib import Path

from involnet.cli import dispatch

out = Path("out/ablation")
dispatch(["ablate", "--synthetic", "100", "--epochs", "1", "--augment", "off", "--seed", "7",
          "--out-dir", str(out)])
print((out / "report.csv").read_text())
