// Python face of the toolkit: the evaluation metrics on plain arrays plus
// the bundle-level flows (generate, evaluate, run the pipeline, check
// gradients). Configs are passed as JSON text with the same schema and
// defaults as the command line.

#include "contact4d/driver.hpp"
#include "contact4d/io.hpp"
#include "contact4d/metrics.hpp"
#include "contact4d/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace contact4d;

namespace {

io::RunConfig config_from(const std::string& text) {
  io::RunConfig cfg;
  if (!text.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("config: invalid JSON: ") + e.what());
    }
    cfg = io::parse_run_config(j);
  }
  io::apply_env_seed(cfg);
  return cfg;
}

py::dict string_map(const std::map<std::string, std::string>& m) {
  py::dict d;
  for (const auto& [k, v] : m) d[py::str(k)] = v;
  return d;
}

py::dict report_dict(const metrics::MetricReport& rep) {
  py::dict values;
  for (const auto& [k, v] : rep.values) values[py::str(k)] = v;
  py::dict d;
  d["values"] = values;
  d["skipped"] = string_map(rep.skipped);
  d["metadata"] = string_map(rep.metadata);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "contact-aware human-scene reconstruction toolkit";
  m.attr("__version__") = "0.1.0";

  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_RuntimeError);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_RuntimeError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);

  m.def(
      "umeyama_align",
      [](const MatX3& src, const MatX3& dst, bool with_scale) {
        const auto t = metrics::umeyama_align(src, dst, with_scale);
        return py::make_tuple(t.scale, t.rotation, t.translation);
      },
      py::arg("src"), py::arg("dst"), py::arg("with_scale") = true,
      "Least-squares similarity (scale, rotation, translation) mapping src onto dst");

  m.def("pa_mpjpe", &metrics::pa_mpjpe, py::arg("pred"), py::arg("gt"),
        "Per-frame similarity-aligned mean joint error, mm");
  m.def("wa_mpjpe", &metrics::wa_mpjpe, py::arg("pred"), py::arg("gt"),
        "Whole-segment similarity-aligned mean joint error, mm");
  m.def("w_mpjpe", &metrics::w_mpjpe, py::arg("pred"), py::arg("gt"),
        "First-two-frame rigid alignment applied to the segment, mm");
  m.def("rte", &metrics::rte, py::arg("root_pred"), py::arg("root_gt"),
        "Rigid-aligned mean root error over the ground-truth path length, percent");
  m.def("jitter", &metrics::jitter, py::arg("joints"), py::arg("fps"),
        "Mean third-difference magnitude, 10 m/s^3 units");

  m.def(
      "plausibility",
      [](const FrameSeq& vertices, const std::vector<int>& foot_ids, double ground_height,
         const std::optional<MatX3>& ground_points, double tol) {
        const metrics::Ground g = ground_points ? metrics::Ground::point_set(*ground_points)
                                                : metrics::Ground::plane(ground_height);
        const auto r = metrics::plausibility(vertices, foot_ids, g, tol);
        py::dict d;
        d["coll_percent"] = r.coll_percent;
        d["pen_cm"] = r.pen_cm;
        d["float_cm"] = r.float_cm;
        d["penmax_cm"] = r.penmax_cm;
        return d;
      },
      py::arg("vertices"), py::arg("foot_ids"), py::arg("ground_height") = 0.0,
      py::arg("ground_points") = std::nullopt, py::arg("tol") = 0.005,
      "Collision/penetration/float statistics against a plane or a point set");

  m.def("foot_sliding", &metrics::foot_sliding, py::arg("vertices"), py::arg("foot_ids"),
        py::arg("ground_height"), py::arg("contact_tol") = 0.005,
        "Mean horizontal drift of grounded foot vertices, mm; None without contact pairs");

  m.def(
      "contact_prf",
      [](const Mat& pred, const Mat& gt, double threshold) {
        const auto r = metrics::contact_prf(pred, gt, threshold);
        py::dict d;
        d["precision"] = r.precision;
        d["recall"] = r.recall;
        d["f1"] = r.f1;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.5,
      "Pooled contact precision/recall/F1 at the given threshold");

  m.def("geo_contact_error", &metrics::geo_contact_error, py::arg("pred_labels"),
        py::arg("gt_labels"), py::arg("template_vertices"), py::arg("one_sided") = false,
        "Rest-template distance between wrong and nearest correct contacts, cm");

  m.def(
      "synthesize",
      [](const std::string& out_dir, const std::string& config, int count, int jobs) {
        return driver::synth_bundles(config_from(config), out_dir, count, jobs);
      },
      py::arg("out_dir"), py::arg("config") = "", py::arg("count") = 1, py::arg("jobs") = 1,
      "Generate benchmark bundles; returns the written directories");

  m.def(
      "evaluate",
      [](const std::string& bundle_dir, const std::string& config, bool contact_only) {
        const io::RunConfig cfg = config_from(config);
        metrics::MetricReport rep =
            metrics::evaluate_bundle(io::load_bundle(bundle_dir), cfg.protocol);
        if (contact_only) driver::keep_contact_metrics(rep);
        return report_dict(rep);
      },
      py::arg("bundle_dir"), py::arg("config") = "", py::arg("contact_only") = false,
      "Run the evaluation protocol over a stored bundle");

  m.def(
      "run_demo",
      [](const std::string& bundle_dir, const std::string& out_dir, const std::string& config,
         const std::string& weights_dir, int frames) {
        const io::RunConfig cfg = config_from(config);
        SequenceBundle b = io::load_bundle(bundle_dir);
        if (frames != 0) b = io::truncate_bundle(b, frames);
        const auto w = driver::weights_for(weights_dir, cfg, b);
        const auto tmpl = driver::template_from_meta(b);
        double fps = 0.0;
        const SequenceBundle out = driver::run_pipeline_over(b, w, tmpl, &fps);
        if (!out_dir.empty()) io::save_bundle(out, out_dir);
        py::dict d;
        d["frames"] = out.frames;
        d["persons"] = out.persons;
        d["vertices"] = out.vertices;
        d["fps"] = fps;
        return d;
      },
      py::arg("bundle_dir"), py::arg("out_dir") = "", py::arg("config") = "",
      py::arg("weights_dir") = "", py::arg("frames") = 0,
      "Run the online pipeline over a bundle and rewrite its prediction channel");

  m.def(
      "grad_check",
      [](const std::string& group, const std::string& config, double eps, double tol) {
        const io::RunConfig cfg = config_from(config);
        const auto w = pipeline::PipelineWeights::init(cfg.pipeline, cfg.seed);
        py::list rows;
        for (const auto& [g, loss] : driver::grad_check_plan(group)) {
          const auto res = pipeline::grad_check(loss, w, g, eps, tol);
          py::dict d;
          d["group"] = g;
          d["loss"] = loss;
          d["max_rel_error"] = res.max_rel_error;
          d["coords_checked"] = res.coords_checked;
          d["passed"] = res.passed;
          rows.append(d);
        }
        return rows;
      },
      py::arg("group") = "all", py::arg("config") = "", py::arg("eps") = 1e-4,
      py::arg("tol") = 1e-4, "Compare analytic gradients to central finite differences");
}
