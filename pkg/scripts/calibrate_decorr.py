"""Regenerate the lambda -> measured-decorrelation calibration table.

Canonical setup: one straight radius-40 um vessel at 300 um depth, 3x3
decorrelation kernel, no additive noise, mean over the true vessel mask,
averaged across 8 seeds per mixing weight. Paste the printed table into
octapws.phantom.
"""

import numpy as np

from octapws import phantom as ph
from octapws import recon as rc


def measure(lam: float, seeds=range(8)) -> float:
    vals = []
    for seed in seeds:
        spec = ph.PhantomSpec(
            dims=(16, 64, 96, 3),
            pitch=(8.0, 10.0),
            surface=ph.SurfaceSpec(base_um=150.0),
            vessels=(
                ph.VesselSpec(
                    centerline_um=((60.0, 0.0, 300.0), (60.0, 504.0, 300.0)),
                    radius_um=40.0,
                    flow_decorrelation=0.3,  # ignored: mixing_weight set
                    mixing_weight=lam,
                ),
            ),
            noise_floor=0.0,
            seed=seed,
        )
        vol, gt = ph.generate_volume(spec)
        acc = []
        for y in range(spec.dims[0]):
            msk = gt.vessel_mask[y]
            if not msk.any():
                continue
            d, _ = rc.decorrelation(vol.frames(y), kernel=(3, 3))
            acc.append(d[msk])
        vals.append(float(np.concatenate(acc).mean()))
    return float(np.mean(vals))


def main():
    lams = np.round(np.linspace(0.0, 1.0, 21), 3)
    measured = []
    for lam in lams:
        m = measure(float(lam)) if lam > 0 else 0.0
        measured.append(m)
        print(f"lambda={lam:.2f} measured={m:.5f}")
    print()
    print("_CAL_LAMBDA = np.array(", np.array2string(lams, separator=", "), ")")
    print(
        "_CAL_MEASURED = np.array(",
        np.array2string(np.round(measured, 5), separator=", "),
        ")",
    )


if __name__ == "__main__":
    main()
