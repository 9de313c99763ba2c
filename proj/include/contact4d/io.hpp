#pragma once

#include "contact4d/bundle.hpp"
#include "contact4d/losses.hpp"
#include "contact4d/metrics.hpp"
#include "contact4d/pipeline.hpp"
#include "contact4d/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace contact4d::io {

// Every tunable in one place; each section maps to one JSON object with
// unknown keys rejected.
struct RunConfig {
  metrics::ProtocolConfig protocol;
  loss::LossConfig loss;
  pipeline::PipelineConfig pipeline;
  synth::SynthConfig synth;
  std::uint64_t seed = 1;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// CONTACT4D_SEED, when set, overrides both the top-level seed and the
// generator seed.
void apply_env_seed(RunConfig& cfg);

// Raw little-endian row-major sidecar arrays next to a JSON manifest.
enum class DType { F64, F32, I64, U8 };

std::size_t dtype_size(DType dt);
std::string dtype_name(DType dt);
DType dtype_from_name(const std::string& s);

struct ArrayRecord {
  std::string name;
  std::string file;
  DType dtype = DType::F64;
  std::vector<std::int64_t> shape;
  std::uint64_t hash = 0;
};

// Low-level sidecar access, exposed so other formats (and tests) can reuse
// the exact same byte layout.
void write_sidecar(const std::string& path, const void* data, std::size_t bytes);
std::vector<unsigned char> read_sidecar(const std::string& path, const ArrayRecord& rec);
std::vector<double> decode_f64(const std::vector<unsigned char>& bytes, const ArrayRecord& rec);

void save_bundle(const SequenceBundle& bundle, const std::string& dir);
SequenceBundle load_bundle(const std::string& dir);

// First `frames` frames of the bundle, all channels sliced consistently.
SequenceBundle truncate_bundle(const SequenceBundle& bundle, int frames);

void save_weights(const pipeline::PipelineWeights& weights, const std::string& dir,
                  bool seed_only = false);
pipeline::PipelineWeights load_weights(const std::string& dir);

// Canonical report encodings: keys sorted, floats printed with 9
// significant digits, so equal runs produce identical bytes.
std::string format_double(double v);
std::string report_to_json(const metrics::MetricReport& report);
std::string report_to_csv(const metrics::MetricReport& report);

std::string error_json(const std::string& kind, const std::string& message);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace contact4d::io
