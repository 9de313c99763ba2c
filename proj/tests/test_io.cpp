#include "contact4d/io.hpp"

#include "contact4d/synth.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace contact4d;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / ("c4d_io_" + leaf);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                    std::istreambuf_iterator<char>());
}

bool dirs_byte_equal(const fs::path& a, const fs::path& b) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) {
    const std::string n = e.path().filename().string();
    if (std::find(names.begin(), names.end(), n) == names.end()) return false;
  }
  for (const std::string& n : names) {
    if (!fs::exists(b / n)) return false;
    if (read_bytes(a / n) != read_bytes(b / n)) return false;
  }
  return true;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

double max_abs_diff(const FrameSeq& a, const FrameSeq& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t t = 0; t < a.size(); ++t) m = std::max(m, max_abs_diff(a[t], b[t]));
  return m;
}

double track_diff(const PersonTrack& a, const PersonTrack& b) {
  double m = 0.0;
  m = std::max(m, max_abs_diff(a.pose, b.pose));
  m = std::max(m, max_abs_diff(a.shape, b.shape));
  m = std::max(m, max_abs_diff(a.expression, b.expression));
  m = std::max(m, max_abs_diff(a.root_trans, b.root_trans));
  m = std::max(m, max_abs_diff(a.anchor, b.anchor));
  m = std::max(m, max_abs_diff(a.contact, b.contact));
  m = std::max(m, max_abs_diff(a.joints_world, b.joints_world));
  m = std::max(m, max_abs_diff(a.vertices_world, b.vertices_world));
  return m;
}

SequenceBundle sample_bundle(std::uint64_t seed = 5) {
  synth::SynthConfig cfg;
  cfg.frames = 5;
  cfg.persons = 2;
  cfg.motion = synth::Motion::Walk;
  cfg.terrain = synth::Terrain::Ramp;
  cfg.noise_pose = 0.04;
  cfg.noise_joints = 0.01;
  cfg.contact_flip_prob = 0.1;
  cfg.pointmap_rows = 7;
  cfg.pointmap_cols = 8;
  cfg.seed = seed;
  return synth::gen_sequence(cfg, body::build_template(3, 4, 3));
}

pipeline::PipelineConfig tiny_pipeline() {
  pipeline::PipelineConfig c;
  c.width = 8;
  c.heads = 2;
  c.depth = 1;
  c.state_tokens = 3;
  c.prior_width = 4;
  c.image_tokens = 4;
  c.vertex_count = 9;
  c.joint_count = 3;
  c.shape_dims = 2;
  c.expr_dims = 0;
  return c;
}

// Expected on-disk encoding: little-endian packed, no padding.
template <typename T>
std::vector<unsigned char> pack(const std::vector<T>& v) {
  std::vector<unsigned char> out(v.size() * sizeof(T));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

}  // namespace

TEST_CASE("dtype helpers round-trip and reject junk") {
  using io::DType;
  CHECK(io::dtype_size(DType::F64) == 8);
  CHECK(io::dtype_size(DType::F32) == 4);
  CHECK(io::dtype_size(DType::I64) == 8);
  CHECK(io::dtype_size(DType::U8) == 1);
  for (const auto dt : {DType::F64, DType::F32, DType::I64, DType::U8})
    CHECK(io::dtype_from_name(io::dtype_name(dt)) == dt);
  CHECK_THROWS_AS(io::dtype_from_name("f16"), SchemaError);
}

TEST_CASE("sidecar arrays verify length and checksum") {
  const fs::path dir = scratch("sidecar");
  const std::vector<double> vals = {1.0, -2.5, 0.0, 3.25, 1e-9, 7.0};
  const auto bytes = pack(vals);
  io::write_sidecar((dir / "arr.bin").string(), bytes.data(), bytes.size());

  io::ArrayRecord rec;
  rec.name = "arr";
  rec.file = "arr.bin";
  rec.dtype = io::DType::F64;
  rec.shape = {2, 3};
  rec.hash = fnv1a(bytes.data(), bytes.size());

  const auto got = io::read_sidecar((dir / "arr.bin").string(), rec);
  CHECK(got == bytes);
  CHECK(io::decode_f64(got, rec) == vals);

  io::ArrayRecord bad = rec;
  bad.hash ^= 1;
  try {
    io::read_sidecar((dir / "arr.bin").string(), bad);
    FAIL("checksum mismatch not detected");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find("arr") != std::string::npos);
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }

  io::ArrayRecord shorter = rec;
  shorter.shape = {2, 4};
  CHECK_THROWS_AS(io::read_sidecar((dir / "arr.bin").string(), shorter), IntegrityError);
  CHECK_THROWS_AS(io::read_sidecar((dir / "gone.bin").string(), rec), IntegrityError);

  io::ArrayRecord ints = rec;
  ints.dtype = io::DType::I64;
  CHECK_THROWS_AS(io::decode_f64(got, ints), SchemaError);
}

TEST_CASE("f32 sidecars decode to doubles") {
  const fs::path dir = scratch("sidecar32");
  const std::vector<float> vals = {0.5f, -1.25f, 3.0f};
  const auto bytes = pack(vals);
  io::write_sidecar((dir / "a.bin").string(), bytes.data(), bytes.size());
  io::ArrayRecord rec;
  rec.name = "a";
  rec.file = "a.bin";
  rec.dtype = io::DType::F32;
  rec.shape = {3};
  rec.hash = fnv1a(bytes.data(), bytes.size());
  const auto d = io::decode_f64(io::read_sidecar((dir / "a.bin").string(), rec), rec);
  CHECK(d == std::vector<double>({0.5, -1.25, 3.0}));
}

TEST_CASE("bundles survive a save/load round trip byte for byte") {
  const auto b = sample_bundle();
  const fs::path d1 = scratch("bundle1");
  const fs::path d2 = scratch("bundle2");
  io::save_bundle(b, d1.string());
  const SequenceBundle r = io::load_bundle(d1.string());

  CHECK(r.name == b.name);
  CHECK(r.fps == b.fps);
  CHECK(r.tau == b.tau);
  CHECK(r.ground_height == b.ground_height);
  CHECK(r.frames == b.frames);
  CHECK(r.persons == b.persons);
  CHECK(r.meta == b.meta);
  CHECK(r.foot_vertex_ids == b.foot_vertex_ids);
  CHECK(r.part_map == b.part_map);
  CHECK(max_abs_diff(r.template_vertices, b.template_vertices) == 0.0);
  CHECK(max_abs_diff(r.scene_points, b.scene_points) == 0.0);
  REQUIRE(r.pointmaps.size() == b.pointmaps.size());
  CHECK(max_abs_diff(r.pointmaps[0].points, b.pointmaps[0].points) == 0.0);
  CHECK(r.pointmaps[0].valid == b.pointmaps[0].valid);
  for (int n = 0; n < b.persons; ++n) {
    CHECK(track_diff(r.gt[n], b.gt[n]) == 0.0);
    CHECK(track_diff(r.pred[n], b.pred[n]) == 0.0);
  }
  for (size_t t = 0; t < r.cameras.size(); ++t) {
    CHECK(max_abs_diff(r.cameras[t].rotation, b.cameras[t].rotation) == 0.0);
    CHECK((r.cameras[t].translation - b.cameras[t].translation).cwiseAbs().maxCoeff() == 0.0);
  }

  io::save_bundle(r, d2.string());
  CHECK(dirs_byte_equal(d1, d2));
}

TEST_CASE("bundle loading detects tampering") {
  const auto b = sample_bundle(9);
  const fs::path dir = scratch("tamper");
  io::save_bundle(b, dir.string());

  const json manifest = json::parse(io::read_text_file((dir / "manifest.json").string()));
  const std::string victim = manifest.at("arrays").at(0).at("file").get<std::string>();

  SUBCASE("bit flip in a sidecar") {
    auto bytes = read_bytes(dir / victim);
    REQUIRE(bytes.size() > 4);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(dir / victim, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(io::load_bundle(dir.string()), IntegrityError);
  }
  SUBCASE("truncated sidecar") {
    const auto bytes = read_bytes(dir / victim);
    std::ofstream(dir / victim, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size() - 1));
    CHECK_THROWS_AS(io::load_bundle(dir.string()), IntegrityError);
  }
  SUBCASE("deleted sidecar") {
    fs::remove(dir / victim);
    CHECK_THROWS_AS(io::load_bundle(dir.string()), IntegrityError);
  }
  SUBCASE("unknown manifest key") {
    json m = manifest;
    m["surprise"] = 1;
    io::write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
    CHECK_THROWS_AS(io::load_bundle(dir.string()), SchemaError);
  }
  SUBCASE("wrong format tag") {
    json m = manifest;
    m["format"] = "bundle-v2";
    io::write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
    CHECK_THROWS_AS(io::load_bundle(dir.string()), SchemaError);
  }
  SUBCASE("stale content hash") {
    json m = manifest;
    std::string h = m.at("content_hash").get<std::string>();
    h[0] = h[0] == '0' ? '1' : '0';
    m["content_hash"] = h;
    io::write_text_file((dir / "manifest.json").string(), m.dump(2) + "\n");
    CHECK_THROWS_AS(io::load_bundle(dir.string()), IntegrityError);
  }
}

TEST_CASE("bundle truncation keeps consistent prefixes") {
  const auto b = sample_bundle(13);
  const auto cut = io::truncate_bundle(b, 3);
  CHECK(cut.frames == 3);
  CHECK(cut.cameras.size() == 3);
  CHECK(cut.pointmaps.size() == 3);
  for (int n = 0; n < b.persons; ++n) {
    CHECK(cut.gt[n].pose.rows() == 3);
    CHECK(max_abs_diff(cut.gt[n].pose, b.gt[n].pose.topRows(3)) == 0.0);
    CHECK(max_abs_diff(cut.pred[n].contact, b.pred[n].contact.topRows(3)) == 0.0);
    for (int t = 0; t < 3; ++t)
      CHECK(max_abs_diff(cut.pred[n].joints_world[t],
                         b.pred[n].joints_world[static_cast<size_t>(t)]) == 0.0);
  }
  CHECK_NOTHROW(cut.validate());
  CHECK_THROWS_AS(io::truncate_bundle(b, 0), ArgumentError);
  CHECK_THROWS_AS(io::truncate_bundle(b, b.frames + 1), ArgumentError);
}

TEST_CASE("weights round-trip with values, frozen flags and config") {
  const auto cfg = tiny_pipeline();
  auto w = pipeline::PipelineWeights::init(cfg, 17);
  const fs::path d1 = scratch("weights1");
  const fs::path d2 = scratch("weights2");
  io::save_weights(w, d1.string());
  const auto r = io::load_weights(d1.string());

  CHECK(r.seed == w.seed);
  const auto wa = w.arrays();
  const auto ra = r.arrays();
  REQUIRE(wa.size() == ra.size());
  for (size_t i = 0; i < wa.size(); ++i) {
    CHECK(wa[i].name == ra[i].name);
    CHECK(wa[i].frozen == ra[i].frozen);
    CHECK(max_abs_diff(*wa[i].mat, *ra[i].mat) == 0.0);
  }
  io::save_weights(r, d2.string());
  CHECK(dirs_byte_equal(d1, d2));
}

TEST_CASE("seed-only weight manifests rebuild the exact initialization") {
  const auto cfg = tiny_pipeline();
  const auto w = pipeline::PipelineWeights::init(cfg, 23);
  const fs::path dir = scratch("weights_seed");
  io::save_weights(w, dir.string(), true);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);  // just the manifest, no sidecars
  const auto r = io::load_weights(dir.string());
  const auto wa = w.arrays();
  const auto ra = r.arrays();
  REQUIRE(wa.size() == ra.size());
  for (size_t i = 0; i < wa.size(); ++i) CHECK(max_abs_diff(*wa[i].mat, *ra[i].mat) == 0.0);
}

TEST_CASE("weight manifests must cover every array") {
  const auto w = pipeline::PipelineWeights::init(tiny_pipeline(), 3);
  const fs::path dir = scratch("weights_missing");
  io::save_weights(w, dir.string());
  json m = json::parse(io::read_text_file((dir / "weights.json").string()));
  m.at("arrays").erase(0);
  io::write_text_file((dir / "weights.json").string(), m.dump(2) + "\n");
  CHECK_THROWS_AS(io::load_weights(dir.string()), SchemaError);
}

TEST_CASE("run config parsing maps every section") {
  const json j = {
      {"seed", 9},
      {"protocol",
       {{"segment_length", 40},
        {"tolerance_m", 0.01},
        {"contact_threshold", 0.6},
        {"ground_mode", "points"},
        {"geo_one_sided", true},
        {"root_centered", false}}},
      {"loss", {{"lambda_c", 0.5}, {"focal_gamma", 3.0}}},
      {"pipeline", {{"width", 8}, {"heads", 2}, {"vertex_count", 9}}},
      {"synth", {{"frames", 7}, {"motion", "hop"}, {"terrain", "stepped"}, {"seed", 4}}},
  };
  const io::RunConfig cfg = io::parse_run_config(j);
  CHECK(cfg.seed == 9);
  CHECK(cfg.protocol.segment_length == 40);
  CHECK(cfg.protocol.tolerance == 0.01);
  CHECK(cfg.protocol.contact_threshold == 0.6);
  CHECK(cfg.protocol.ground == metrics::ProtocolConfig::GroundMode::Points);
  CHECK(cfg.protocol.geo_one_sided);
  CHECK_FALSE(cfg.protocol.root_centered);
  CHECK(cfg.loss.lambda_c == 0.5);
  CHECK(cfg.loss.focal_gamma == 3.0);
  CHECK(cfg.pipeline.width == 8);
  CHECK(cfg.pipeline.vertex_count == 9);
  CHECK(cfg.synth.frames == 7);
  CHECK(cfg.synth.motion == synth::Motion::Hop);
  CHECK(cfg.synth.terrain == synth::Terrain::Stepped);
  CHECK(cfg.synth.seed == 4);

  CHECK_THROWS_AS(io::parse_run_config({{"protocol", {{"segment_len", 4}}}}), SchemaError);
  CHECK_THROWS_AS(io::parse_run_config({{"mystery", 1}}), SchemaError);
  CHECK_THROWS_AS(io::parse_run_config({{"seed", -2}}), SchemaError);
  CHECK_THROWS_AS(io::parse_run_config({{"protocol", {{"ground_mode", "lava"}}}}), SchemaError);
  CHECK_THROWS_AS(io::parse_run_config({{"protocol", 7}}), SchemaError);
}

TEST_CASE("config files load and reject invalid json") {
  const fs::path dir = scratch("config");
  io::write_text_file((dir / "ok.json").string(), "{\"seed\": 3}\n");
  CHECK(io::load_run_config((dir / "ok.json").string()).seed == 3);
  io::write_text_file((dir / "broken.json").string(), "{\"seed\": \n");
  CHECK_THROWS_AS(io::load_run_config((dir / "broken.json").string()), SchemaError);
  CHECK_THROWS_AS(io::load_run_config((dir / "absent.json").string()), ArgumentError);
}

TEST_CASE("environment seed override") {
  io::RunConfig cfg;
  cfg.seed = 1;
  cfg.synth.seed = 2;
  unsetenv("CONTACT4D_SEED");
  io::apply_env_seed(cfg);
  CHECK(cfg.seed == 1);
  CHECK(cfg.synth.seed == 2);

  setenv("CONTACT4D_SEED", "42", 1);
  io::apply_env_seed(cfg);
  CHECK(cfg.seed == 42);
  CHECK(cfg.synth.seed == 42);

  setenv("CONTACT4D_SEED", "banana", 1);
  CHECK_THROWS_AS(io::apply_env_seed(cfg), ArgumentError);
  setenv("CONTACT4D_SEED", "-3", 1);
  CHECK_THROWS_AS(io::apply_env_seed(cfg), ArgumentError);
  // empty counts as unset
  setenv("CONTACT4D_SEED", "", 1);
  CHECK_NOTHROW(io::apply_env_seed(cfg));
  CHECK(cfg.seed == 42);
  unsetenv("CONTACT4D_SEED");
}

TEST_CASE("report encodings are canonical") {
  metrics::MetricReport r;
  r.values["b_metric"] = 1.0 / 3.0;
  r.values["a_metric"] = 2.0;
  r.metadata["mode"] = "demo";
  r.skipped["c_metric"] = "no inputs";

  const std::string js = io::report_to_json(r);
  CHECK(js == io::report_to_json(r));
  const json parsed = json::parse(js);
  CHECK(parsed.at("values").at("a_metric").get<double>() == 2.0);
  CHECK(parsed.at("values").at("b_metric").get<double>() == doctest::Approx(1.0 / 3.0));
  CHECK(parsed.at("skipped").at("c_metric").get<std::string>() == "no inputs");
  CHECK(parsed.at("metadata").at("mode").get<std::string>() == "demo");
  CHECK(js.find("\"a_metric\"") < js.find("\"b_metric\""));

  const std::string csv = io::report_to_csv(r);
  CHECK(csv == "metric,value\na_metric,2\nb_metric,0.333333333\n");

  CHECK(io::format_double(2.0) == "2");
  CHECK(io::format_double(0.125) == "0.125");
  CHECK(io::format_double(1.0 / 3.0) == "0.333333333");
  CHECK(io::format_double(1e300) == "1e+300");
  CHECK_THROWS_AS(io::format_double(std::numeric_limits<double>::quiet_NaN()), NumericError);
  CHECK_THROWS_AS(io::format_double(std::numeric_limits<double>::infinity()), NumericError);
}

TEST_CASE("error payloads parse back") {
  const std::string s = io::error_json("schema", "bad \"key\"");
  CHECK(s.back() == '\n');
  const json j = json::parse(s);
  CHECK(j.at("error").at("type").get<std::string>() == "schema");
  CHECK(j.at("error").at("message").get<std::string>() == "bad \"key\"");
}
