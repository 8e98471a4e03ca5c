#!/usr/bin/env python3
"""Generate the default 62-channel montage CSV (spherical 10-10 layout).

Coordinates: head modelled as a sphere of radius 9.5 units, +x right,
+y front, +z up. Each electrode is placed by eccentricity E (degrees from
the vertex) and azimuth beta (degrees from the front midline, 0..180).
Radius is chosen so nearest-neighbour chord distances land near 3 units.
"""
import math

R = 13.75

# SEED 62-channel order.
ORDER = """FP1 FPZ FP2 AF3 AF4 F7 F5 F3 F1 FZ F2 F4 F6 F8
FT7 FC5 FC3 FC1 FCZ FC2 FC4 FC6 FT8 T7 C5 C3 C1 CZ C2 C4 C6 T8
TP7 CP5 CP3 CP1 CPZ CP2 CP4 CP6 TP8 P7 P5 P3 P1 PZ P2 P4 P6 P8
PO7 PO5 PO3 POZ PO4 PO6 PO8 CB1 O1 OZ O2 CB2""".split()

# Row geometry: (midline eccentricity, ring azimuth-from-front of the
# outermost member). Posterior rows use azimuth measured from the back.
ROWS = {
    "AF": (54.0, 36.0, "front"),
    "F": (36.0, 54.0, "front"),
    "FC": (18.0, 72.0, "front"),
    "C": (0.0, 90.0, "coronal"),
    "CP": (18.0, 72.0, "back"),
    "P": (36.0, 54.0, "back"),
    "PO": (54.0, 36.0, "back"),
}

# Ring electrodes (eccentricity 72), azimuth from front midline.
RING = {
    "FPZ": 0.0, "FP1": 18.0, "FP2": -18.0,
    "F7": 54.0, "F8": -54.0,
    "FT7": 72.0, "FT8": -72.0,
    "T7": 90.0, "T8": -90.0,
    "TP7": 108.0, "TP8": -108.0,
    "P7": 126.0, "P8": -126.0,
    "PO7": 144.0, "PO8": -144.0,
    "O1": 162.0, "O2": -162.0,
    "OZ": 180.0,
}

# Cerebellar pair: below the ring, lateral-posterior.
EXTRA = {"CB1": (84.0, 153.0), "CB2": (84.0, -153.0)}


def xyz(ecc_deg, beta_deg):
    e = math.radians(ecc_deg)
    b = math.radians(beta_deg)  # signed: + left, - right
    x = -R * math.sin(e) * math.sin(b)
    y = R * math.sin(e) * math.cos(b)
    z = R * math.cos(e)
    return x, y, z


def locate(name):
    if name in RING:
        return xyz(72.0, RING[name])
    if name in EXTRA:
        return xyz(*EXTRA[name])
    # Interior: row prefix + number (or Z).
    i = 0
    while i < len(name) and not (name[i].isdigit() or name[i] == "Z"):
        i += 1
    row, tail = name[:i], name[i:]
    e_mid, beta_ring, kind = ROWS[row]
    if tail == "Z":
        e, beta = e_mid, 0.0
    else:
        n = int(tail)
        m = (n + 1) // 2  # 1/2 -> 1, 3/4 -> 2, 5/6 -> 3, 7/8 -> 4
        side = 1.0 if n % 2 == 1 else -1.0  # odd left, even right
        f = m / 4.0
        e = e_mid + f * (72.0 - e_mid)
        beta = side * (90.0 if kind == "coronal" else f * beta_ring)
    if kind == "back":
        beta = math.copysign(180.0 - abs(beta), beta) if beta != 0.0 else 180.0
    return xyz(e, beta)


def main():
    pts = {}
    lines = ["name,x,y,z"]
    for name in ORDER:
        x, y, z = locate(name)
        pts[name] = (x, y, z)
        lines.append(f"{name},{x:.4f},{y:.4f},{z:.4f}")
    csv = "\n".join(lines) + "\n"
    with open("crates/core/assets/seed62_montage.csv", "w") as f:
        f.write(csv)

    # Diagnostics: nearest-neighbour stats.
    import itertools
    names = list(pts)
    nn = {}
    for a, b in itertools.combinations(names, 2):
        d = math.dist(pts[a], pts[b])
        for k, other in ((a, b), (b, a)):
            if k not in nn or d < nn[k][0]:
                nn[k] = (d, other)
    dists = sorted(v[0] for v in nn.values())
    print(f"n={len(names)} nn min={dists[0]:.3f} median={dists[len(dists)//2]:.3f} max={dists[-1]:.3f}")
    print("closest pairs:", sorted(((f"{v[0]:.3f}", k, v[1]) for k, v in nn.items()))[:6])
    t7, t8 = pts["T7"], pts["T8"]
    print(f"T7-T8 dist={math.dist(t7, t8):.3f}")
    print("sample:", {k: tuple(round(c, 2) for c in pts[k]) for k in ["FPZ", "CZ", "T7", "T8", "OZ", "CB1"]})


if __name__ == "__main__":
    main()
