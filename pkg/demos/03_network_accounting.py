"""Parameter and FLOP accounting for ResUnet and AGI-Net across group counts.

Run: python demos/03_network_accounting.py [tiny|desk|wide]
"""

import sys

from aginet.network import (WIDTH_PRESETS, build_agi_net, build_resunet, count_flops,
                            count_kernel_params, count_params)

preset = sys.argv[1] if len(sys.argv) > 1 else "wide"
widths = WIDTH_PRESETS[preset]
size = 256
base = build_resunet(widths)
bp, bf = count_params(base), count_flops(base, size, size)
print(f"widths {widths}, input {size}x{size}")
print(f"{'model':14s} {'params (M)':>11s} {'GFLOPs':>9s} {'params / ResUnet':>17s}")
print(f"{'ResUnet':14s} {bp / 1e6:11.3f} {bf / 1e9:9.2f} {1.0:17.3f}")
for n in (1, 2, 4, 8, 16):
    m = build_agi_net(widths, n=n)
    p, f = count_params(m), count_flops(m, size, size)
    print(f"{f'AGI-Net n={n}':14s} {p / 1e6:11.3f} {f / 1e9:9.2f} {p / bp:17.3f}")

# the main kernels keep their plain-conv size whatever n is
m = build_agi_net(widths, n=8)
print("\nreplaced convs (default mask):")
for name, k in count_kernel_params(m).items():
    if f"{name[:-len('.weight')]}.route.offset_weight" in m.params:
        print(f"  {name:28s} kernel params {k}")

print("\nper-stage cost of one replacement (n=8):")
for i, stage in enumerate(("Down1", "Down2", "Down3", "Body", "Up1", "Up2", "Up3")):
    mask = [False] * 7
    mask[i] = True
    one = build_agi_net(widths, n=8, mask=mask)
    print(f"  {stage:6s} +{(count_params(one) - bp) / 1e6:.3f} M params, "
          f"{(count_flops(one, size, size) - bf) / 1e9:+.2f} GFLOPs")
