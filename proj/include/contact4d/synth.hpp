#pragma once

#include "contact4d/bundle.hpp"
#include "contact4d/metrics.hpp"

#include <cstdint>

namespace contact4d::synth {

enum class Terrain { Flat, Stepped, Ramp };
enum class Motion { Stand, Walk, Hop, Drift };

// Deterministic scenario generator. The prediction channel equals the GT
// channel corrupted by the configured noise, so every metric has a known
// target. All amplitudes are in meters/radians.
struct SynthConfig {
  int frames = 30;
  double fps = 30.0;
  Terrain terrain = Terrain::Flat;
  double base_height = 0.0;
  Motion motion = Motion::Walk;
  int persons = 1;
  double noise_pose = 0.0;        // rad, Gaussian on every pose coordinate
  double noise_trans = 0.0;       // m, Gaussian on the root translation
  double noise_joints = 0.0;      // m, Gaussian keypoint noise on predicted joints
  double contact_flip_prob = 0.0; // Bernoulli flips on predicted contact
  double drift_per_frame = 0.01;  // m/frame vertical root drift (Motion::Drift)
  double walk_speed = 0.03;       // m/frame along the path
  double tau = 0.025;             // contact distance threshold, meters
  std::uint64_t seed = 1;
  int pointmap_rows = 12;
  int pointmap_cols = 16;
  double scene_spacing = 0.03;    // terrain sample lattice spacing, meters
  bool orbit_camera = true;

  void validate() const;
};

std::string to_string(Terrain t);
std::string to_string(Motion m);
Terrain terrain_from_string(const std::string& s);
Motion motion_from_string(const std::string& s);

// Terrain height under (x, z).
double terrain_height(Terrain t, double base, double x, double z);

// Binary labels (V), label[v] = 1 iff distance to the nearest scene point
// is <= tau.
Vec contact_oracle(const MatX3& vertices_world, const scene::PointIndex& index, double tau);

SequenceBundle gen_sequence(const SynthConfig& cfg, const body::BodyTemplate& tmpl);

// Every metric recomputed with naive loops and alignment by the quaternion
// closed form plus `starts` random similarity candidates (each kept only if
// it strictly beats the closed form). Restricted to small bundles so the
// O(everything) scans stay fast.
metrics::MetricReport brute_oracles(const SequenceBundle& bundle,
                                    const metrics::ProtocolConfig& cfg = {},
                                    int starts = 10000);

}  // namespace contact4d::synth
