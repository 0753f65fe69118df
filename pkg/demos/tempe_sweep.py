"""Replay the Tempe left-turn crash over a range of turn speeds, with and without I2V.

Prints collisions and the minimum time to collision for both variants, and
optionally writes an SVG of the Tempe intersection with the Honda's conflict
zones highlighted.

    python3 demos/tempe_sweep.py --speeds 5 10 15 --svg tempe.svg
"""

import argparse
import time
from pathlib import Path

from crossguard import sim
from crossguard.fixtures import tempe
from crossguard.render import RenderOptions, render_svg
from crossguard.scenarios import HONDA, tempe_crash


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--speeds", type=float, nargs="+", default=[5.0, 7.5, 10.0, 12.5, 15.0],
                    help="Honda turn speeds to try, ft/s")
    ap.add_argument("--svg", help="also draw the intersection here")
    args = ap.parse_args(argv)

    print(f"{'speed':>6}  {'off: crashes':>12}  {'min TTC':>8}  {'on: crashes':>11}  {'min TTC':>8}")
    t0 = time.perf_counter()
    for v in args.speeds:
        row = []
        for i2v in (False, True):
            s = sim.run(tempe_crash(i2v, honda_speed=v))[1].summary()
            ttc = "-" if s["min_ttc"] is None else f"{s['min_ttc']:.2f}"
            row += [s["collisions"], ttc]
        print(f"{v:6.1f}  {row[0]:>12}  {row[1]:>8}  {row[2]:>11}  {row[3]:>8}")
    print(f"{2 * len(args.speeds)} runs in {time.perf_counter() - t0:.1f} s")

    if args.svg:
        Path(args.svg).write_text(render_svg(tempe(), RenderOptions(movement=HONDA)))
        print(f"wrote {args.svg}")


if __name__ == "__main__":
    main()
