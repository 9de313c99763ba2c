// Command line front end: synthesize benchmark bundles, run the evaluation
// protocol, drive the reconstruction pipeline, check gradients, ablate cues.

#include "contact4d/bundle.hpp"
#include "contact4d/driver.hpp"
#include "contact4d/io.hpp"
#include "contact4d/metrics.hpp"
#include "contact4d/pipeline.hpp"
#include "contact4d/synth.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace c4d = contact4d;
using c4d::SequenceBundle;

namespace {

c4d::io::RunConfig load_cfg(const std::string& path) {
  c4d::io::RunConfig cfg;
  if (!path.empty()) cfg = c4d::io::load_run_config(path);
  c4d::io::apply_env_seed(cfg);
  return cfg;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty())
    std::fwrite(text.data(), 1, text.size(), stdout);
  else
    c4d::io::write_text_file(path, text);
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (static_cast<unsigned char>(c) < 0x20) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\u%04x", c);
      out += buf;
    } else {
      out += c;
    }
  }
  return out;
}

std::string values_json(const std::map<std::string, std::map<std::string, double>>& sections) {
  std::string out = "{\n";
  bool first_sec = true;
  for (const auto& [sec, vals] : sections) {
    if (!first_sec) out += ",\n";
    first_sec = false;
    out += "  \"" + json_escape(sec) + "\": {";
    bool first = true;
    for (const auto& [k, v] : vals) {
      out += first ? "\n" : ",\n";
      first = false;
      out += "    \"" + json_escape(k) + "\": " + c4d::io::format_double(v);
    }
    out += first ? "}" : "\n  }";
  }
  out += "\n}\n";
  return out;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, int count, int jobs) {
  const c4d::io::RunConfig cfg = load_cfg(config_path);
  for (const std::string& dir : c4d::driver::synth_bundles(cfg, out_dir, count, jobs))
    std::printf("wrote %s\n", dir.c_str());
  return 0;
}

int cmd_eval(const std::string& bundle_dir, const std::string& config_path,
             const std::string& report_path, const std::string& csv_path, bool contact_only) {
  const c4d::io::RunConfig cfg = load_cfg(config_path);
  const SequenceBundle b = c4d::io::load_bundle(bundle_dir);
  c4d::metrics::MetricReport rep = c4d::metrics::evaluate_bundle(b, cfg.protocol);
  if (contact_only) c4d::driver::keep_contact_metrics(rep);
  emit(report_path, c4d::io::report_to_json(rep));
  if (!csv_path.empty()) c4d::io::write_text_file(csv_path, c4d::io::report_to_csv(rep));
  return 0;
}

int cmd_demo(const std::string& bundle_dir, const std::string& weights_dir,
             const std::string& config_path, const std::string& out_dir,
             const std::string& save_weights_dir, int frames) {
  const c4d::io::RunConfig cfg = load_cfg(config_path);
  SequenceBundle b = c4d::io::load_bundle(bundle_dir);
  if (frames != 0) b = c4d::io::truncate_bundle(b, frames);
  const c4d::pipeline::PipelineWeights w = c4d::driver::weights_for(weights_dir, cfg, b);
  if (!save_weights_dir.empty()) c4d::io::save_weights(w, save_weights_dir);
  const c4d::body::BodyTemplate tmpl = c4d::driver::template_from_meta(b);
  double fps = 0.0;
  const SequenceBundle out = c4d::driver::run_pipeline_over(b, w, tmpl, &fps);
  if (!out_dir.empty()) c4d::io::save_bundle(out, out_dir);
  std::printf("{\"frames\": %d, \"persons\": %d, \"vertices\": %d, \"fps\": %s}\n", out.frames,
              out.persons, out.vertices, c4d::io::format_double(fps).c_str());
  return 0;
}

int cmd_grad_check(const std::string& group, const std::string& config_path,
                   const std::string& weights_dir, double eps, double tol) {
  const c4d::io::RunConfig cfg = load_cfg(config_path);
  const c4d::pipeline::PipelineWeights w =
      weights_dir.empty() ? c4d::pipeline::PipelineWeights::init(cfg.pipeline, cfg.seed)
                          : c4d::io::load_weights(weights_dir);

  const auto plan = c4d::driver::grad_check_plan(group);

  bool all_passed = true;
  for (const auto& [g, loss] : plan) {
    const auto res = c4d::pipeline::grad_check(loss, w, g, eps, tol);
    all_passed = all_passed && res.passed;
    std::printf("%-13s loss=%-10s eps=%g coords=%d max_rel=%.3e %s\n", g.c_str(), loss.c_str(),
                eps, res.coords_checked, res.max_rel_error, res.passed ? "PASS" : "FAIL");
  }
  return all_passed ? 0 : 1;
}

int cmd_ablate(const std::string& bundle_dir, const std::string& weights_dir,
               const std::string& config_path, const std::string& report_path) {
  const c4d::io::RunConfig cfg = load_cfg(config_path);
  const SequenceBundle b = c4d::io::load_bundle(bundle_dir);
  const c4d::pipeline::PipelineWeights w = c4d::driver::weights_for(weights_dir, cfg, b);
  const c4d::body::BodyTemplate tmpl = c4d::driver::template_from_meta(b);

  std::map<std::string, c4d::pipeline::PipelineWeights> variants;
  variants.emplace("full", w);
  {
    c4d::pipeline::PipelineWeights v = w;
    v.residual_head.l1.weight.setZero();
    v.residual_head.l1.bias.setZero();
    v.residual_head.l2.weight.setZero();
    v.residual_head.l2.bias.setZero();
    variants.emplace("no_residual", std::move(v));
  }
  {
    c4d::pipeline::PipelineWeights v = w;
    v.config.use_scene_context = false;
    variants.emplace("no_scene", std::move(v));
  }
  {
    c4d::pipeline::PipelineWeights v = w;
    v.config.use_geometry = false;
    variants.emplace("no_geometry", std::move(v));
  }
  {
    c4d::pipeline::PipelineWeights v = w;
    v.config.use_momentum = false;
    variants.emplace("no_momentum", std::move(v));
  }

  std::map<std::string, std::map<std::string, double>> values;
  for (const auto& [name, vw] : variants) {
    const SequenceBundle out = c4d::driver::run_pipeline_over(b, vw, tmpl);
    values[name] = c4d::metrics::evaluate_bundle(out, cfg.protocol).values;
  }

  std::map<std::string, std::map<std::string, double>> doc;
  for (const auto& [name, vals] : values) doc["values." + name] = vals;
  const auto& full = values.at("full");
  for (const auto& [name, vals] : values) {
    if (name == "full") continue;
    std::map<std::string, double> delta;
    for (const auto& [k, v] : vals) {
      const auto it = full.find(k);
      if (it != full.end()) delta[k] = v - it->second;
    }
    doc["delta." + name] = std::move(delta);
  }
  emit(report_path, values_json(doc));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contact-aware human-scene reconstruction toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  std::string config_path, out_dir, bundle_dir, weights_dir, report_path, csv_path;
  std::string save_weights_dir;
  std::string group = "all";
  int count = 1;
  int jobs = 1;
  int frames = 0;
  double eps = 1e-4, tol = 1e-4;

  auto* synth = app.add_subcommand("synth", "Generate benchmark sequence bundles");
  synth->add_option("--config", config_path, "Run configuration JSON");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--count", count, "Number of bundles (seeds advance per bundle)");
  synth->add_option("--jobs", jobs, "Worker threads across bundles");
  synth->callback([&] { rc = cmd_synth(config_path, out_dir, count, jobs); });

  auto* eval = app.add_subcommand("eval", "Evaluate a bundle and write a metric report");
  eval->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  eval->add_option("--config", config_path, "Run configuration JSON");
  eval->add_option("--report", report_path, "Report JSON path (default: stdout)");
  eval->add_option("--csv", csv_path, "Also write the report as CSV");
  eval->callback([&] { rc = cmd_eval(bundle_dir, config_path, report_path, csv_path, false); });

  auto* ceval = app.add_subcommand("contact-eval", "Evaluate only the contact metrics");
  ceval->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  ceval->add_option("--config", config_path, "Run configuration JSON");
  ceval->add_option("--report", report_path, "Report JSON path (default: stdout)");
  ceval->add_option("--csv", csv_path, "Also write the report as CSV");
  ceval->callback([&] { rc = cmd_eval(bundle_dir, config_path, report_path, csv_path, true); });

  auto* demo = app.add_subcommand("demo", "Run the reconstruction pipeline over a bundle");
  demo->add_option("--bundle", bundle_dir, "Input bundle directory")->required();
  demo->add_option("--weights", weights_dir, "Weights directory (default: derived from config)");
  demo->add_option("--config", config_path, "Run configuration JSON");
  demo->add_option("--out", out_dir, "Directory for the predicted bundle");
  demo->add_option("--save-weights", save_weights_dir, "Also save the weights used");
  demo->add_option("--frames", frames, "Truncate the input to its first N frames");
  demo->callback([&] {
    rc = cmd_demo(bundle_dir, weights_dir, config_path, out_dir, save_weights_dir, frames);
  });

  auto* gc = app.add_subcommand("grad-check", "Compare analytic gradients to finite differences");
  gc->add_option("--group", group, "all, contact_head, gate, fusion or residual");
  gc->add_option("--config", config_path, "Run configuration JSON");
  gc->add_option("--weights", weights_dir, "Weights directory (default: derived from config)");
  gc->add_option("--eps", eps, "Finite difference step");
  gc->add_option("--tol", tol, "Max relative error to pass");
  gc->callback([&] { rc = cmd_grad_check(group, config_path, weights_dir, eps, tol); });

  auto* ablate = app.add_subcommand("ablate", "Re-run the pipeline with single cues disabled");
  ablate->add_option("--bundle", bundle_dir, "Input bundle directory")->required();
  ablate->add_option("--weights", weights_dir, "Weights directory (default: derived from config)");
  ablate->add_option("--config", config_path, "Run configuration JSON");
  ablate->add_option("--report", report_path, "Report JSON path (default: stdout)");
  ablate->callback([&] { rc = cmd_ablate(bundle_dir, weights_dir, config_path, report_path); });

  const auto fail = [](const char* kind, const std::exception& e) {
    const std::string line = c4d::io::error_json(kind, e.what());
    std::fwrite(line.data(), 1, line.size(), stderr);
    return 1;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const c4d::OutOfBoundsError& e) {
    return fail("out_of_bounds", e);
  } catch (const c4d::ArgumentError& e) {
    return fail("argument", e);
  } catch (const c4d::DegenerateInputError& e) {
    return fail("degenerate_input", e);
  } catch (const c4d::UndefinedMetricError& e) {
    return fail("undefined_metric", e);
  } catch (const c4d::IntegrityError& e) {
    return fail("integrity", e);
  } catch (const c4d::SchemaError& e) {
    return fail("schema", e);
  } catch (const c4d::NumericError& e) {
    return fail("numeric", e);
  } catch (const std::exception& e) {
    return fail("internal", e);
  }
  return rc;
}
