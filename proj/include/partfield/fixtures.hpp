#pragma once

#include <vector>

#include "partfield/geometry.hpp"

// Procedural shapes used by tests, the acceptance suite and the CLI's
// `fixture` command.
namespace partfield::fixtures {

struct LabeledMesh {
  TriMesh mesh;
  std::vector<int> face_labels;
};

/// Closed axis-aligned box [lo, hi] with `cells` quads per edge.
TriMesh make_box(const Vec3& lo, const Vec3& hi, int cells = 1);

/// Icosphere of the given radius centred at the origin.
TriMesh make_icosphere(double radius, int subdivisions);

/// Single quad [-half, half]² in the plane z = z0, facing +z.
TriMesh make_quad(double half, double z0 = 0.0, int cells = 1);

/// Two cubes joined by a square bar along x: one watertight manifold with
/// labels {0: left cube, 1: bar, 2: right cube}. About 2.1k faces.
LabeledMesh make_dumbbell();

/// Square rod along x cut into `segments` equal cubes, labelled 0.. from
/// the low end. Neighbouring parts share a boundary ring.
LabeledMesh make_segmented_rod(int segments);

/// Planar grid of (cols x rows) unit squares split into triangles.
TriMesh make_grid(int cols, int rows);

/// Every face split into four by its edge midpoints; face i of the input
/// becomes faces 4i..4i+3 of the output.
TriMesh subdivide_midpoint(const TriMesh& mesh);

}  // namespace partfield::fixtures
