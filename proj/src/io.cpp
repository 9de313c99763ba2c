#include "contact4d/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "sidecar format assumes a little-endian host");

namespace contact4d::io {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw SchemaError("config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw SchemaError("config: unknown key '" + item.key() + "' in " + where);
  }
}

int geti(const json& j, const char* k, int def) {
  if (!j.contains(k)) return def;
  const json& v = j.at(k);
  if (!v.is_number_integer()) throw SchemaError(std::string("config: '") + k + "' must be an integer");
  return v.get<int>();
}

double getd(const json& j, const char* k, double def) {
  if (!j.contains(k)) return def;
  const json& v = j.at(k);
  if (!v.is_number()) throw SchemaError(std::string("config: '") + k + "' must be a number");
  return v.get<double>();
}

bool getb(const json& j, const char* k, bool def) {
  if (!j.contains(k)) return def;
  const json& v = j.at(k);
  if (!v.is_boolean()) throw SchemaError(std::string("config: '") + k + "' must be a boolean");
  return v.get<bool>();
}

std::uint64_t getu(const json& j, const char* k, std::uint64_t def) {
  if (!j.contains(k)) return def;
  const json& v = j.at(k);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw SchemaError(std::string("config: '") + k + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string gets(const json& j, const char* k, const std::string& def) {
  if (!j.contains(k)) return def;
  const json& v = j.at(k);
  if (!v.is_string()) throw SchemaError(std::string("config: '") + k + "' must be a string");
  return v.get<std::string>();
}

metrics::ProtocolConfig parse_protocol(const json& j) {
  check_keys(j,
             {"segment_length", "tolerance_m", "foot_contact_tol_m", "contact_threshold",
              "ground_mode", "geo_one_sided", "root_centered"},
             "protocol");
  metrics::ProtocolConfig p;
  p.segment_length = geti(j, "segment_length", p.segment_length);
  p.tolerance = getd(j, "tolerance_m", p.tolerance);
  p.foot_contact_tol = getd(j, "foot_contact_tol_m", p.foot_contact_tol);
  p.contact_threshold = getd(j, "contact_threshold", p.contact_threshold);
  const std::string mode = gets(j, "ground_mode", "plane_estimated");
  if (mode == "plane_estimated")
    p.ground = metrics::ProtocolConfig::GroundMode::PlaneEstimated;
  else if (mode == "plane_fixed")
    p.ground = metrics::ProtocolConfig::GroundMode::PlaneFixed;
  else if (mode == "points")
    p.ground = metrics::ProtocolConfig::GroundMode::Points;
  else
    throw SchemaError("config: unknown ground_mode '" + mode + "'");
  p.geo_one_sided = getb(j, "geo_one_sided", p.geo_one_sided);
  p.root_centered = getb(j, "root_centered", p.root_centered);
  return p;
}

loss::LossConfig parse_loss(const json& j) {
  check_keys(j,
             {"lambda_c", "lambda_p", "focal_gamma", "focal_alpha", "w_param", "w_vertex",
              "w_joint", "w_reproj"},
             "loss");
  loss::LossConfig c;
  c.lambda_c = getd(j, "lambda_c", c.lambda_c);
  c.lambda_p = getd(j, "lambda_p", c.lambda_p);
  c.focal_gamma = getd(j, "focal_gamma", c.focal_gamma);
  c.focal_alpha = getd(j, "focal_alpha", c.focal_alpha);
  c.w_param = getd(j, "w_param", c.w_param);
  c.w_vertex = getd(j, "w_vertex", c.w_vertex);
  c.w_joint = getd(j, "w_joint", c.w_joint);
  c.w_reproj = getd(j, "w_reproj", c.w_reproj);
  return c;
}

pipeline::PipelineConfig parse_pipeline(const json& j) {
  check_keys(j,
             {"width", "heads", "depth", "state_tokens", "prior_width", "image_tokens",
              "pool_window", "vertex_count", "joint_count", "shape_dims", "expr_dims",
              "provider_seed", "use_scene_context", "use_geometry", "use_momentum",
              "use_refinement"},
             "pipeline");
  pipeline::PipelineConfig c;
  c.width = geti(j, "width", c.width);
  c.heads = geti(j, "heads", c.heads);
  c.depth = geti(j, "depth", c.depth);
  c.state_tokens = geti(j, "state_tokens", c.state_tokens);
  c.prior_width = geti(j, "prior_width", c.prior_width);
  c.image_tokens = geti(j, "image_tokens", c.image_tokens);
  c.pool_window = geti(j, "pool_window", c.pool_window);
  c.vertex_count = geti(j, "vertex_count", c.vertex_count);
  c.joint_count = geti(j, "joint_count", c.joint_count);
  c.shape_dims = geti(j, "shape_dims", c.shape_dims);
  c.expr_dims = geti(j, "expr_dims", c.expr_dims);
  c.provider_seed = getu(j, "provider_seed", c.provider_seed);
  c.use_scene_context = getb(j, "use_scene_context", c.use_scene_context);
  c.use_geometry = getb(j, "use_geometry", c.use_geometry);
  c.use_momentum = getb(j, "use_momentum", c.use_momentum);
  c.use_refinement = getb(j, "use_refinement", c.use_refinement);
  return c;
}

json pipeline_config_to_json(const pipeline::PipelineConfig& c) {
  json j;
  j["width"] = c.width;
  j["heads"] = c.heads;
  j["depth"] = c.depth;
  j["state_tokens"] = c.state_tokens;
  j["prior_width"] = c.prior_width;
  j["image_tokens"] = c.image_tokens;
  j["pool_window"] = c.pool_window;
  j["vertex_count"] = c.vertex_count;
  j["joint_count"] = c.joint_count;
  j["shape_dims"] = c.shape_dims;
  j["expr_dims"] = c.expr_dims;
  j["provider_seed"] = c.provider_seed;
  j["use_scene_context"] = c.use_scene_context;
  j["use_geometry"] = c.use_geometry;
  j["use_momentum"] = c.use_momentum;
  j["use_refinement"] = c.use_refinement;
  return j;
}

synth::SynthConfig parse_synth(const json& j) {
  check_keys(j,
             {"frames", "fps", "terrain", "base_height", "motion", "persons", "noise_pose",
              "noise_trans", "noise_joints", "contact_flip_prob", "drift_per_frame",
              "walk_speed", "tau", "seed", "pointmap_rows", "pointmap_cols", "scene_spacing",
              "orbit_camera"},
             "synth");
  synth::SynthConfig c;
  c.frames = geti(j, "frames", c.frames);
  c.fps = getd(j, "fps", c.fps);
  try {
    c.terrain = synth::terrain_from_string(gets(j, "terrain", synth::to_string(c.terrain)));
    c.motion = synth::motion_from_string(gets(j, "motion", synth::to_string(c.motion)));
  } catch (const ArgumentError& e) {
    throw SchemaError(e.what());
  }
  c.base_height = getd(j, "base_height", c.base_height);
  c.persons = geti(j, "persons", c.persons);
  c.noise_pose = getd(j, "noise_pose", c.noise_pose);
  c.noise_trans = getd(j, "noise_trans", c.noise_trans);
  c.noise_joints = getd(j, "noise_joints", c.noise_joints);
  c.contact_flip_prob = getd(j, "contact_flip_prob", c.contact_flip_prob);
  c.drift_per_frame = getd(j, "drift_per_frame", c.drift_per_frame);
  c.walk_speed = getd(j, "walk_speed", c.walk_speed);
  c.tau = getd(j, "tau", c.tau);
  c.seed = getu(j, "seed", c.seed);
  c.pointmap_rows = geti(j, "pointmap_rows", c.pointmap_rows);
  c.pointmap_cols = geti(j, "pointmap_cols", c.pointmap_cols);
  c.scene_spacing = getd(j, "scene_spacing", c.scene_spacing);
  c.orbit_camera = getb(j, "orbit_camera", c.orbit_camera);
  return c;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  check_keys(j, {"protocol", "loss", "pipeline", "synth", "seed"}, "run config");
  RunConfig cfg;
  if (j.contains("protocol")) cfg.protocol = parse_protocol(j.at("protocol"));
  if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss"));
  if (j.contains("pipeline")) cfg.pipeline = parse_pipeline(j.at("pipeline"));
  if (j.contains("synth")) cfg.synth = parse_synth(j.at("synth"));
  cfg.seed = getu(j, "seed", cfg.seed);
  cfg.protocol.validate();
  cfg.loss.validate();
  cfg.pipeline.validate();
  cfg.synth.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

void apply_env_seed(RunConfig& cfg) {
  const char* env = std::getenv("CONTACT4D_SEED");
  if (env == nullptr || *env == '\0') return;
  std::uint64_t seed = 0;
  const char* end = env + std::strlen(env);
  const auto res = std::from_chars(env, end, seed);
  if (res.ec != std::errc() || res.ptr != end)
    throw ArgumentError("CONTACT4D_SEED must be an unsigned integer");
  cfg.seed = seed;
  cfg.synth.seed = seed;
}

std::size_t dtype_size(DType dt) {
  switch (dt) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::I64: return 8;
    case DType::U8: return 1;
  }
  return 8;
}

std::string dtype_name(DType dt) {
  switch (dt) {
    case DType::F64: return "f64";
    case DType::F32: return "f32";
    case DType::I64: return "i64";
    case DType::U8: return "u8";
  }
  return "f64";
}

DType dtype_from_name(const std::string& s) {
  if (s == "f64") return DType::F64;
  if (s == "f32") return DType::F32;
  if (s == "i64") return DType::I64;
  if (s == "u8") return DType::U8;
  throw SchemaError("unknown dtype '" + s + "'");
}

void write_sidecar(const std::string& path, const void* data, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArgumentError("cannot open '" + path + "' for writing");
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  f.flush();
  if (!f) throw ArgumentError("failed to write '" + path + "'");
}

namespace {

std::int64_t element_count(const ArrayRecord& rec) {
  std::int64_t n = 1;
  for (std::int64_t d : rec.shape) n *= d;
  return n;
}

}  // namespace

std::vector<unsigned char> read_sidecar(const std::string& path, const ArrayRecord& rec) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("array '" + rec.name + "': missing sidecar '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  const auto expected = static_cast<std::size_t>(element_count(rec)) * dtype_size(rec.dtype);
  if (bytes.size() != expected)
    throw IntegrityError("array '" + rec.name + "': expected " + std::to_string(expected) +
                         " bytes, found " + std::to_string(bytes.size()));
  if (fnv1a(bytes.data(), bytes.size()) != rec.hash)
    throw IntegrityError("array '" + rec.name + "': checksum mismatch");
  return bytes;
}

std::vector<double> decode_f64(const std::vector<unsigned char>& bytes, const ArrayRecord& rec) {
  const auto n = static_cast<std::size_t>(element_count(rec));
  std::vector<double> out(n);
  if (rec.dtype == DType::F64) {
    std::memcpy(out.data(), bytes.data(), n * 8);
  } else if (rec.dtype == DType::F32) {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, bytes.data() + 4 * i, 4);
      out[i] = static_cast<double>(v);
    }
  } else {
    throw SchemaError("array '" + rec.name + "': expected a floating dtype");
  }
  return out;
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t hash_from_hex(const std::string& s, const std::string& name) {
  if (s.size() != 16) throw SchemaError("array '" + name + "': malformed hash");
  std::uint64_t h = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), h, 16);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw SchemaError("array '" + name + "': malformed hash");
  return h;
}

std::string file_of(const std::string& name) {
  std::string f = name;
  std::replace(f.begin(), f.end(), '/', '_');
  return f + ".bin";
}

void push_f64(std::vector<unsigned char>& buf, double v) {
  unsigned char b[8];
  std::memcpy(b, &v, 8);
  buf.insert(buf.end(), b, b + 8);
}

template <class M>
void push_mat(std::vector<unsigned char>& buf, const M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) push_f64(buf, m(r, c));
}

struct Saver {
  std::string dir;
  std::vector<ArrayRecord> records;

  void add(const std::string& name, DType dt, std::vector<std::int64_t> shape,
           const std::vector<unsigned char>& bytes) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    require_arg(bytes.size() == static_cast<std::size_t>(n) * dtype_size(dt),
                "save: byte count mismatch for " + name);
    if (bytes.empty()) return;
    ArrayRecord rec{name, file_of(name), dt, std::move(shape),
                    fnv1a(bytes.data(), bytes.size())};
    write_sidecar(dir + "/" + rec.file, bytes.data(), bytes.size());
    records.push_back(std::move(rec));
  }

  json catalog() {
    std::sort(records.begin(), records.end(),
              [](const ArrayRecord& a, const ArrayRecord& b) { return a.name < b.name; });
    json arr = json::array();
    for (const ArrayRecord& r : records) {
      json e;
      e["name"] = r.name;
      e["file"] = r.file;
      e["dtype"] = dtype_name(r.dtype);
      e["shape"] = r.shape;
      e["hash"] = hash_hex(r.hash);
      arr.push_back(e);
    }
    return arr;
  }

  std::string content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const ArrayRecord& r : records) h = hash_combine(h, r.hash);
    return hash_hex(h);
  }
};

struct Loader {
  std::string dir;
  std::map<std::string, ArrayRecord> records;

  bool has(const std::string& name) const { return records.count(name) != 0; }

  const ArrayRecord& rec(const std::string& name) const {
    const auto it = records.find(name);
    if (it == records.end())
      throw IntegrityError("array '" + name + "': missing from the manifest catalog");
    return it->second;
  }

  std::vector<double> floats(const std::string& name,
                             const std::vector<std::int64_t>& expect_shape) const {
    const ArrayRecord& r = rec(name);
    if (r.shape != expect_shape) {
      std::string got, want;
      for (std::int64_t d : r.shape) got += std::to_string(d) + " ";
      for (std::int64_t d : expect_shape) want += std::to_string(d) + " ";
      throw SchemaError("array '" + name + "': shape [ " + got + "] does not match [ " + want +
                        "]");
    }
    return decode_f64(read_sidecar(dir + "/" + r.file, r), r);
  }

  std::vector<unsigned char> raw(const std::string& name,
                                 const std::vector<std::int64_t>& expect_shape) const {
    const ArrayRecord& r = rec(name);
    if (r.shape != expect_shape)
      throw SchemaError("array '" + name + "': unexpected shape");
    return read_sidecar(dir + "/" + r.file, r);
  }
};

Loader make_loader(const std::string& dir, const json& manifest) {
  Loader ld;
  ld.dir = dir;
  if (!manifest.contains("arrays") || !manifest.at("arrays").is_array())
    throw SchemaError("manifest: missing array catalog");
  for (const json& e : manifest.at("arrays")) {
    check_keys(e, {"name", "file", "dtype", "shape", "hash"}, "array record");
    ArrayRecord r;
    r.name = e.at("name").get<std::string>();
    r.file = e.at("file").get<std::string>();
    if (r.file.find('/') != std::string::npos || r.file.find("..") != std::string::npos)
      throw SchemaError("array '" + r.name + "': sidecar path must be a plain file name");
    r.dtype = dtype_from_name(e.at("dtype").get<std::string>());
    r.shape = e.at("shape").get<std::vector<std::int64_t>>();
    for (std::int64_t d : r.shape)
      if (d < 0) throw SchemaError("array '" + r.name + "': negative dimension");
    r.hash = hash_from_hex(e.at("hash").get<std::string>(), r.name);
    ld.records[r.name] = std::move(r);
  }
  return ld;
}

Mat mat_from(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

json load_manifest(const std::string& dir, const char* file, const char* format) {
  json j;
  try {
    j = json::parse(read_text_file(dir + "/" + file));
  } catch (const ArgumentError&) {
    throw;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("manifest: invalid JSON: ") + e.what());
  }
  if (gets(j, "format", "") != format)
    throw SchemaError(std::string("manifest: expected format '") + format + "'");
  return j;
}

}  // namespace

void save_bundle(const SequenceBundle& b, const std::string& dir) {
  b.validate();
  std::filesystem::create_directories(dir);
  Saver sv{dir, {}};
  const auto T = static_cast<std::int64_t>(b.frames);
  const auto N = b.persons;
  const auto J = static_cast<std::int64_t>(b.joints);
  const auto V = static_cast<std::int64_t>(b.vertices);

  if (b.template_vertices.rows() > 0) {
    std::vector<unsigned char> buf;
    push_mat(buf, b.template_vertices);
    sv.add("template_vertices", DType::F64, {V, 3}, buf);
  }
  if (b.scene_points.rows() > 0) {
    std::vector<unsigned char> buf;
    push_mat(buf, b.scene_points);
    sv.add("scene_points", DType::F64, {b.scene_points.rows(), 3}, buf);
  }
  if (!b.cameras.empty()) {
    std::vector<unsigned char> rot, tr;
    for (const body::CameraPose& c : b.cameras) {
      push_mat(rot, c.rotation);
      push_mat(tr, c.translation.transpose());
    }
    sv.add("cameras/rotation", DType::F64, {T, 3, 3}, rot);
    sv.add("cameras/translation", DType::F64, {T, 3}, tr);
  }
  int pm_rows = 0, pm_cols = 0;
  std::string pm_frame = "world";
  if (!b.pointmaps.empty()) {
    pm_rows = b.pointmaps.front().height;
    pm_cols = b.pointmaps.front().width;
    pm_frame = b.pointmaps.front().frame == scene::Frame::World ? "world" : "camera";
    std::vector<unsigned char> pts, valid;
    for (const scene::Pointmap& pm : b.pointmaps) {
      pm.validate();
      require_arg(pm.height == pm_rows && pm.width == pm_cols &&
                      pm.frame == b.pointmaps.front().frame,
                  "save: pointmap dimensions vary across frames");
      push_mat(pts, pm.points);
      valid.insert(valid.end(), pm.valid.begin(), pm.valid.end());
    }
    const auto hw = static_cast<std::int64_t>(pm_rows) * pm_cols;
    sv.add("pointmaps/points", DType::F64, {T, hw, 3}, pts);
    sv.add("pointmaps/valid", DType::U8, {T, hw}, valid);
  }
  for (int n = 0; n < N; ++n) {
    for (const char* ch : {"gt", "pred"}) {
      const PersonTrack& p =
          std::string(ch) == "gt" ? b.gt[static_cast<size_t>(n)] : b.pred[static_cast<size_t>(n)];
      const std::string base = std::string(ch) + "/" + std::to_string(n) + "/";
      std::vector<unsigned char> buf;
      push_mat(buf, p.pose);
      sv.add(base + "pose", DType::F64, {T, 3 * J}, buf);
      if (b.shape_dims > 0) {
        buf.clear();
        push_mat(buf, p.shape);
        sv.add(base + "shape", DType::F64, {T, b.shape_dims}, buf);
      }
      if (b.expr_dims > 0) {
        buf.clear();
        push_mat(buf, p.expression);
        sv.add(base + "expression", DType::F64, {T, b.expr_dims}, buf);
      }
      buf.clear();
      push_mat(buf, p.root_trans);
      sv.add(base + "root_trans", DType::F64, {T, 3}, buf);
      if (p.anchor.size() > 0) {
        buf.clear();
        push_mat(buf, p.anchor);
        sv.add(base + "anchor", DType::F64, {T, 2}, buf);
      }
      buf.clear();
      for (const MatX3& f : p.joints_world) push_mat(buf, f);
      sv.add(base + "joints_world", DType::F64, {T, J, 3}, buf);
      if (!p.vertices_world.empty()) {
        buf.clear();
        for (const MatX3& f : p.vertices_world) push_mat(buf, f);
        sv.add(base + "vertices_world", DType::F64, {T, V, 3}, buf);
      }
      if (p.contact.size() > 0) {
        buf.clear();
        push_mat(buf, p.contact);
        sv.add(base + "contact", DType::F64, {T, V}, buf);
      }
    }
  }

  json m;
  m["format"] = "bundle-v1";
  m["name"] = b.name;
  m["fps"] = b.fps;
  m["tau"] = b.tau;
  m["ground_height"] = b.ground_height;
  m["frames"] = b.frames;
  m["persons"] = b.persons;
  m["joints"] = b.joints;
  m["vertices"] = b.vertices;
  m["shape_dims"] = b.shape_dims;
  m["expr_dims"] = b.expr_dims;
  m["units"] = "meters";
  m["angles"] = "radians";
  m["layout"] = "row-major";
  m["endianness"] = "little";
  m["world_up"] = "y";
  m["camera_convention"] = "camera_to_world";
  m["pointmap_rows"] = pm_rows;
  m["pointmap_cols"] = pm_cols;
  m["pointmap_frame"] = pm_frame;
  m["foot_vertex_ids"] = b.foot_vertex_ids;
  m["part_map"] = b.part_map;
  m["meta"] = b.meta;
  m["arrays"] = sv.catalog();
  m["content_hash"] = sv.content_hash();
  write_text_file(dir + "/manifest.json", m.dump(2) + "\n");
}

SequenceBundle load_bundle(const std::string& dir) {
  const json m = load_manifest(dir, "manifest.json", "bundle-v1");
  check_keys(m,
             {"format", "name", "fps", "tau", "ground_height", "frames", "persons", "joints",
              "vertices", "shape_dims", "expr_dims", "units", "angles", "layout", "endianness",
              "world_up", "camera_convention", "pointmap_rows", "pointmap_cols",
              "pointmap_frame", "foot_vertex_ids", "part_map", "meta", "arrays",
              "content_hash"},
             "bundle manifest");
  SequenceBundle b;
  b.name = gets(m, "name", "");
  b.fps = getd(m, "fps", 30.0);
  b.tau = getd(m, "tau", 0.025);
  b.ground_height = getd(m, "ground_height", 0.0);
  b.frames = geti(m, "frames", 0);
  b.persons = geti(m, "persons", 0);
  b.joints = geti(m, "joints", 0);
  b.vertices = geti(m, "vertices", 0);
  b.shape_dims = geti(m, "shape_dims", 0);
  b.expr_dims = geti(m, "expr_dims", 0);
  if (gets(m, "layout", "row-major") != "row-major" ||
      gets(m, "endianness", "little") != "little" || gets(m, "units", "meters") != "meters")
    throw SchemaError("bundle manifest: unsupported layout/units declaration");
  if (m.contains("foot_vertex_ids")) b.foot_vertex_ids = m.at("foot_vertex_ids").get<std::vector<int>>();
  if (m.contains("part_map")) b.part_map = m.at("part_map").get<std::vector<int>>();
  if (m.contains("meta")) b.meta = m.at("meta").get<std::map<std::string, std::string>>();
  require_arg(b.frames >= 1 && b.persons >= 1 && b.joints >= 1,
              "bundle manifest: bad dimensions");

  const Loader ld = make_loader(dir, m);
  const auto T = static_cast<std::int64_t>(b.frames);
  const auto J = static_cast<std::int64_t>(b.joints);
  const auto V = static_cast<std::int64_t>(b.vertices);

  {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, rec] : ld.records) h = hash_combine(h, rec.hash);
    if (gets(m, "content_hash", "") != hash_hex(h))
      throw IntegrityError("bundle: content hash mismatch");
  }

  if (ld.has("template_vertices")) {
    const auto v = ld.floats("template_vertices", {V, 3});
    b.template_vertices = mat_from(v, V, 3);
  }
  if (ld.has("scene_points")) {
    const std::int64_t S = ld.rec("scene_points").shape.empty()
                               ? 0
                               : ld.rec("scene_points").shape.front();
    const auto v = ld.floats("scene_points", {S, 3});
    b.scene_points = mat_from(v, S, 3);
  }
  if (ld.has("cameras/rotation")) {
    const auto rot = ld.floats("cameras/rotation", {T, 3, 3});
    const auto tr = ld.floats("cameras/translation", {T, 3});
    b.cameras.resize(static_cast<size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
      body::CameraPose& c = b.cameras[static_cast<size_t>(t)];
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k)
          c.rotation(r, k) = rot[static_cast<std::size_t>(9 * t + 3 * r + k)];
      for (int k = 0; k < 3; ++k) c.translation[k] = tr[static_cast<std::size_t>(3 * t + k)];
    }
  }
  const int pm_rows = geti(m, "pointmap_rows", 0);
  const int pm_cols = geti(m, "pointmap_cols", 0);
  if (ld.has("pointmaps/points")) {
    if (pm_rows < 1 || pm_cols < 1) throw SchemaError("bundle manifest: bad pointmap dims");
    const auto hw = static_cast<std::int64_t>(pm_rows) * pm_cols;
    const auto pts = ld.floats("pointmaps/points", {T, hw, 3});
    const auto valid = ld.raw("pointmaps/valid", {T, hw});
    const std::string frame = gets(m, "pointmap_frame", "world");
    if (frame != "world" && frame != "camera")
      throw SchemaError("bundle manifest: unknown pointmap frame");
    b.pointmaps.resize(static_cast<size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
      scene::Pointmap& pm = b.pointmaps[static_cast<size_t>(t)];
      pm.height = pm_rows;
      pm.width = pm_cols;
      pm.frame = frame == "world" ? scene::Frame::World : scene::Frame::Camera;
      pm.points.resize(hw, 3);
      for (std::int64_t i = 0; i < hw; ++i)
        for (int k = 0; k < 3; ++k)
          pm.points(i, k) = pts[static_cast<std::size_t>(3 * (t * hw + i) + k)];
      pm.valid.assign(valid.begin() + static_cast<std::ptrdiff_t>(t * hw),
                      valid.begin() + static_cast<std::ptrdiff_t>((t + 1) * hw));
    }
  }

  b.gt.resize(static_cast<size_t>(b.persons));
  b.pred.resize(static_cast<size_t>(b.persons));
  for (int n = 0; n < b.persons; ++n) {
    for (const char* ch : {"gt", "pred"}) {
      PersonTrack& p = std::string(ch) == "gt" ? b.gt[static_cast<size_t>(n)]
                                               : b.pred[static_cast<size_t>(n)];
      const std::string base = std::string(ch) + "/" + std::to_string(n) + "/";
      p.pose = mat_from(ld.floats(base + "pose", {T, 3 * J}), T, 3 * J);
      p.shape = b.shape_dims > 0
                    ? mat_from(ld.floats(base + "shape", {T, b.shape_dims}), T, b.shape_dims)
                    : Mat(T, 0);
      p.expression =
          b.expr_dims > 0
              ? mat_from(ld.floats(base + "expression", {T, b.expr_dims}), T, b.expr_dims)
              : Mat(T, 0);
      p.root_trans = mat_from(ld.floats(base + "root_trans", {T, 3}), T, 3);
      if (ld.has(base + "anchor")) p.anchor = mat_from(ld.floats(base + "anchor", {T, 2}), T, 2);
      {
        const auto v = ld.floats(base + "joints_world", {T, J, 3});
        p.joints_world.resize(static_cast<size_t>(T));
        for (std::int64_t t = 0; t < T; ++t) {
          MatX3& f = p.joints_world[static_cast<size_t>(t)];
          f.resize(J, 3);
          for (std::int64_t jj = 0; jj < J; ++jj)
            for (int k = 0; k < 3; ++k)
              f(jj, k) = v[static_cast<std::size_t>(3 * (t * J + jj) + k)];
        }
      }
      if (ld.has(base + "vertices_world")) {
        const auto v = ld.floats(base + "vertices_world", {T, V, 3});
        p.vertices_world.resize(static_cast<size_t>(T));
        for (std::int64_t t = 0; t < T; ++t) {
          MatX3& f = p.vertices_world[static_cast<size_t>(t)];
          f.resize(V, 3);
          for (std::int64_t vv = 0; vv < V; ++vv)
            for (int k = 0; k < 3; ++k)
              f(vv, k) = v[static_cast<std::size_t>(3 * (t * V + vv) + k)];
        }
      }
      if (ld.has(base + "contact")) p.contact = mat_from(ld.floats(base + "contact", {T, V}), T, V);
    }
  }
  b.validate();
  return b;
}

SequenceBundle truncate_bundle(const SequenceBundle& b, int frames) {
  require_arg(frames >= 1 && frames <= b.frames, "truncate: frame count out of range");
  SequenceBundle out = b;
  out.frames = frames;
  if (!out.cameras.empty()) out.cameras.resize(static_cast<size_t>(frames));
  if (!out.pointmaps.empty()) out.pointmaps.resize(static_cast<size_t>(frames));
  for (auto* channel : {&out.gt, &out.pred})
    for (PersonTrack& p : *channel) {
      p.pose = p.pose.topRows(frames).eval();
      p.shape = p.shape.topRows(frames).eval();
      p.expression = p.expression.topRows(frames).eval();
      p.root_trans = p.root_trans.topRows(frames).eval();
      if (p.anchor.size() > 0) p.anchor = p.anchor.topRows(frames).eval();
      p.joints_world.resize(static_cast<size_t>(frames));
      if (!p.vertices_world.empty()) p.vertices_world.resize(static_cast<size_t>(frames));
      if (p.contact.size() > 0) p.contact = p.contact.topRows(frames).eval();
    }
  out.validate();
  return out;
}

void save_weights(const pipeline::PipelineWeights& w, const std::string& dir, bool seed_only) {
  std::filesystem::create_directories(dir);
  json m;
  m["format"] = "weights-v1";
  m["seed"] = w.seed;
  m["config"] = pipeline_config_to_json(w.config);
  if (!seed_only) {
    Saver sv{dir, {}};
    for (const auto& ref : w.arrays()) {
      std::vector<unsigned char> buf;
      push_mat(buf, *ref.mat);
      sv.add(ref.name, DType::F64, {ref.mat->rows(), ref.mat->cols()}, buf);
    }
    json arr = sv.catalog();
    for (json& e : arr) {
      for (const auto& ref : w.arrays())
        if (ref.name == e.at("name").get<std::string>()) e["frozen"] = ref.frozen;
    }
    m["arrays"] = arr;
    m["content_hash"] = sv.content_hash();
  }
  write_text_file(dir + "/weights.json", m.dump(2) + "\n");
}

pipeline::PipelineWeights load_weights(const std::string& dir) {
  const json m = load_manifest(dir, "weights.json", "weights-v1");
  check_keys(m, {"format", "seed", "config", "arrays", "content_hash"}, "weights manifest");
  if (!m.contains("config")) throw SchemaError("weights manifest: missing config");
  const pipeline::PipelineConfig cfg = parse_pipeline(m.at("config"));
  cfg.validate();
  pipeline::PipelineWeights w = pipeline::PipelineWeights::init(cfg, getu(m, "seed", 0));
  if (!m.contains("arrays")) return w;

  json stripped = m;
  for (json& e : stripped.at("arrays")) e.erase("frozen");
  Loader ld = make_loader(dir, stripped);
  auto refs = w.arrays();
  if (ld.records.size() != refs.size())
    throw SchemaError("weights manifest: catalog does not cover every array");
  for (auto& ref : refs) {
    const auto v = ld.floats(ref.name, {ref.mat->rows(), ref.mat->cols()});
    *ref.mat = mat_from(v, ref.mat->rows(), ref.mat->cols());
  }
  return w;
}

std::string format_double(double v) {
  if (!std::isfinite(v)) throw NumericError("report: non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

std::string quote(const std::string& s) { return json(s).dump(); }

void emit_string_map(std::string& out, const std::map<std::string, std::string>& m) {
  out += "{";
  bool first = true;
  for (const auto& [k, v] : m) {
    out += first ? "\n" : ",\n";
    out += "    " + quote(k) + ": " + quote(v);
    first = false;
  }
  out += first ? "}" : "\n  }";
}

}  // namespace

std::string report_to_json(const metrics::MetricReport& r) {
  std::string out = "{\n  \"metadata\": ";
  emit_string_map(out, r.metadata);
  out += ",\n  \"skipped\": ";
  emit_string_map(out, r.skipped);
  out += ",\n  \"values\": {";
  bool first = true;
  for (const auto& [k, v] : r.values) {
    out += first ? "\n" : ",\n";
    out += "    " + quote(k) + ": " + format_double(v);
    first = false;
  }
  out += first ? "}" : "\n  }";
  out += "\n}\n";
  return out;
}

std::string report_to_csv(const metrics::MetricReport& r) {
  std::string out = "metric,value\n";
  for (const auto& [k, v] : r.values) out += k + "," + format_double(v) + "\n";
  return out;
}

std::string error_json(const std::string& kind, const std::string& message) {
  json j;
  j["error"]["type"] = kind;
  j["error"]["message"] = message;
  return j.dump() + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ArgumentError("cannot open '" + path + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  f.flush();
  if (!f) throw ArgumentError("failed to write '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace contact4d::io
