#pragma once

#include "contact4d/body.hpp"
#include "contact4d/common.hpp"
#include "contact4d/scene.hpp"

#include <map>
#include <string>
#include <vector>

namespace contact4d {

using FrameSeq = std::vector<MatX3>;  // per-frame point blocks, meters

// One person's channel (ground truth or prediction) across a sequence.
struct PersonTrack {
  Mat pose;        // T x 3J axis-angle, radians
  Mat shape;       // T x B
  Mat expression;  // T x E
  Mat root_trans;  // T x 3, camera frame, meters
  Mat anchor;      // T x 2 pixel (u, v)
  FrameSeq joints_world;    // T entries of J x 3
  FrameSeq vertices_world;  // T entries of V x 3, may be empty
  Mat contact;              // T x V, labels (GT) or probabilities (pred); may be 0x0
};

// Self-contained carrier for one evaluated sequence. All geometry is in
// meters/radians; unit conversions happen only at report time.
struct SequenceBundle {
  std::string name;
  double fps = 30.0;
  double tau = 0.025;          // contact oracle distance threshold, meters
  double ground_height = 0.0;  // reference terrain height (flat terrain), meters
  int frames = 0;
  int persons = 0;
  int joints = 0;
  int vertices = 0;
  int shape_dims = 0;
  int expr_dims = 0;

  MatX3 template_vertices;  // V x 3 rest pose
  std::vector<int> foot_vertex_ids;
  std::vector<int> part_map;

  std::vector<body::CameraPose> cameras;   // T
  std::vector<scene::Pointmap> pointmaps;  // T world-frame maps; may be empty
  MatX3 scene_points;                      // terrain samples; may be empty

  std::vector<PersonTrack> gt;    // persons entries
  std::vector<PersonTrack> pred;  // persons entries

  std::map<std::string, std::string> meta;

  void validate() const;  // throws ArgumentError on inconsistent shapes
};

}  // namespace contact4d
