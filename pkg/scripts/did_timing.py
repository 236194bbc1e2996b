"""Wall time of DID with the default 8-segment config on an annulus mesh of about 5,000 cells."""

import argparse
import time

from fvfgraph.geomfeat import compute_did, default_did_config, geometry_boundary
from fvfgraph.graphgen import cell_centroid_graph
from fvfgraph.meshgen import annulus_mesh


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-r", type=int, default=50)
    ap.add_argument("--n-theta", type=int, default=100)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    mesh = annulus_mesh(0.5, 2.5, args.n_r, args.n_theta, 1.05)
    graph = cell_centroid_graph(mesh)
    boundary, faces = geometry_boundary(mesh)
    t0 = time.perf_counter()
    did = compute_did(graph.positions, boundary, faces, default_did_config(), threads=args.threads)
    dt = time.perf_counter() - t0
    print(f"{mesh.n_cells} cells, {graph.n_nodes} nodes, DID shape {did.shape}: {dt:.2f} s")


if __name__ == "__main__":
    main()
