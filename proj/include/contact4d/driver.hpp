#pragma once

#include "contact4d/body.hpp"
#include "contact4d/bundle.hpp"
#include "contact4d/io.hpp"
#include "contact4d/pipeline.hpp"

#include <string>
#include <utility>
#include <vector>

// Bundle-level orchestration shared by the command line and the python
// module: template recovery, weight resolution, and the online pipeline run.
namespace contact4d::driver {

// Template dimensioned by the run configuration (used when generating).
body::BodyTemplate template_for_config(const io::RunConfig& cfg);

// Rebuilds the template recorded in the bundle metadata by the generator.
body::BodyTemplate template_from_meta(const SequenceBundle& bundle);

// Weights from a directory when given, otherwise fresh weights derived from
// the config with the bundle's own parameter dimensions. Throws when stored
// weights do not match the bundle dimensions.
pipeline::PipelineWeights weights_for(const std::string& weights_dir, const io::RunConfig& cfg,
                                      const SequenceBundle& bundle);

// Runs the full online pipeline over the bundle's input channel and rewrites
// the prediction channel (parameters, skinned geometry, contact
// probabilities). fps_out, when given, receives the processing rate.
SequenceBundle run_pipeline_over(const SequenceBundle& in, const pipeline::PipelineWeights& weights,
                                 const body::BodyTemplate& tmpl, double* fps_out = nullptr);

// Generates `count` bundles (seeds advance per bundle), stamps the template
// recipe into their metadata and saves them under out_dir. `jobs` threads
// split the bundles between them; each bundle is a pure function of its seed,
// so the output does not depend on the split. Returns the written
// directories in seed order.
std::vector<std::string> synth_bundles(const io::RunConfig& cfg, const std::string& out_dir,
                                       int count, int jobs = 1);

// Drops everything but the contact family (precision, recall, F1, geodesic
// distance) from a report.
void keep_contact_metrics(metrics::MetricReport& report);

// Expands a gradient-check group name into (group, loss) pairs. The contact
// loss reaches the contact head, the gate and the fusion stack; the residual
// head only feeds the body readout, so it is checked under the combined
// contact + body objective. "all" covers every group; "residual" is accepted
// for "residual_head".
std::vector<std::pair<std::string, std::string>> grad_check_plan(const std::string& group);

}  // namespace contact4d::driver
