"""Regenerates the bundled desk-scale fixture in tests/fixtures/desk.

A 200 x 200 km planar region, three evaluation units, a 20 x 20 population
raster (10 km cells), a 600-entry gazette and a 120-site prevalence survey
simulated from a binomial-logit Gaussian process. Run from any directory:

    python3 tests/fixtures/make_desk_fixture.py
"""

import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent / "desk"
rng = np.random.default_rng(20240601)

EUS = {
    "EU1": [[0, 0], [80, 0], [60, 200], [0, 200]],
    "EU2": [[80, 0], [200, 0], [200, 90], [120, 110]],
    "EU3": [[80, 0], [120, 110], [200, 90], [200, 200], [60, 200]],
}


def inside(poly, x, y):
    hit = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                hit = not hit
    return hit


def eu_of(x, y):
    for eu, poly in EUS.items():
        if inside(poly, x, y):
            return eu
    return ""


def main():
    OUT.mkdir(parents=True, exist_ok=True)

    with open(OUT / "eus.json", "w") as f:
        units = [{"eu_id": k, "name": f"Unit {k[-1]}", "polygon": v} for k, v in EUS.items()]
        json.dump({"evaluation_units": units}, f, indent=2)
        f.write("\n")

    # Population counts per 10 km cell: a smooth gradient plus noise.
    cols = rows = 20
    xs = (np.arange(cols) + 0.5) * 10
    ys = (np.arange(rows) + 0.5) * 10
    gx, gy = np.meshgrid(xs, ys)
    base = 400 + 1600 * np.exp(-((gx - 60) ** 2 + (gy - 140) ** 2) / (2 * 50**2))
    pop = np.round(base * rng.lognormal(0, 0.4, size=base.shape)).astype(int)
    with open(OUT / "population.asc", "w") as f:
        f.write(f"ncols {cols}\nnrows {rows}\nxll 0\nyll 0\ncellsize 10\nnodata -9999\n")
        for r in reversed(range(rows)):
            f.write(" ".join(str(v) for v in pop[r]) + "\n")

    # Gazette.
    n_sites = 600
    sx = rng.uniform(0.5, 199.5, n_sites)
    sy = rng.uniform(0.5, 199.5, n_sites)
    spop = np.round(rng.lognormal(np.log(250), 0.9, n_sites)).astype(int)
    inhabited = rng.uniform(size=n_sites) > 0.03
    spop[rng.uniform(size=n_sites) < 0.01] = 0
    sites = []
    with open(OUT / "gazette.csv", "w") as f:
        f.write("id,name,lon,lat,population,inhabited,eu_id\n")
        for i in range(n_sites):
            sid = f"V{i + 1:04d}"
            eu = eu_of(sx[i], sy[i])
            f.write(f"{sid},Village {i + 1},{sx[i]:.4f},{sy[i]:.4f},{spop[i]},"
                    f"{'true' if inhabited[i] else 'false'},{eu}\n")
            sites.append((sx[i], sy[i], spop[i], inhabited[i]))

    # Historic survey at 120 inhabited villages, exponential correlation.
    mu, sigma2, phi = -3.5, 1.5, 40.0
    ok = [i for i, s in enumerate(sites) if s[3] and s[2] > 0]
    pick = rng.choice(ok, size=120, replace=False)
    pts = np.array([[sites[i][0], sites[i][1]] for i in pick])
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    cov = sigma2 * np.exp(-d / phi)
    s = np.linalg.cholesky(cov + 1e-10 * np.eye(len(pts))) @ rng.standard_normal(len(pts))
    p = 1 / (1 + np.exp(-(mu + s)))
    with open(OUT / "prevalence.csv", "w") as f:
        f.write("lon,lat,n_tested,n_positive,year\n")
        for k, i in enumerate(pick):
            n = int(min(sites[i][2], 60))
            y = int(rng.binomial(n, p[k]))
            f.write(f"{pts[k, 0]:.4f},{pts[k, 1]:.4f},{n},{y},2019\n")


if __name__ == "__main__":
    main()
