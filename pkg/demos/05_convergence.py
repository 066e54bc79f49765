"""Convergence study over mesh levels with observed ratios and slopes."""
import sys
from concurrent.futures import ThreadPoolExecutor

from p1maxwell.verify import convergence_study

m = int(sys.argv[1]) if len(sys.argv) > 1 else 2
l_max = int(sys.argv[2]) if len(sys.argv) > 2 else 4
with ThreadPoolExecutor() as pool:
    report = convergence_study(m, 1, l_max, executor=pool)

r1, r2, r3 = (report.ratios(i) for i in (1, 2, 3))
print(f"m = {m}")
print(" l    nel    nno        e1      ratio        e2      ratio        e3      ratio")
fmt = lambda r: "    -   " if r is None else f"{r:8.4f}"
for lv, a, b, c in zip(report.levels, r1, r2, r3):
    print(f"{lv.l:2d} {lv.nel:6d} {lv.nno:6d} {lv.e1:10.4e} {fmt(a)} {lv.e2:10.4e} {fmt(b)} {lv.e3:10.4e} {fmt(c)}")
if l_max >= 3:
    print("slopes over l >= 2:", [round(report.slope(i, 2), 3) for i in (1, 2, 3)])
