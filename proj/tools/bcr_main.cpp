// bcr: command-line front end for the background-consistent re-encoding attack
// and its evaluation harness.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "bcr/attack.hpp"
#include "bcr/encoder.hpp"
#include "bcr/errors.hpp"
#include "bcr/experiment.hpp"
#include "bcr/grounding.hpp"
#include "bcr/image_io.hpp"
#include "bcr/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bcr;

namespace {

// Flags shared by attack/eval/sweep that feed AttackConfig.
struct ConfigFlags {
  std::string config_path;
  std::optional<double> epsilon;
  std::optional<double> step_size;
  std::optional<int> steps;
  std::string layers;
  std::optional<double> tau;
  std::optional<double> lambda_stat, lambda_dict, lambda_pres, lambda_tv;
  std::string similarity;
  std::string step_rule;
  std::string tv_scope;
  bool roi_only = false;

  void add_to(CLI::App& app, bool with_layers) {
    app.add_option("--config", config_path, "Attack config file (.json or key=value)");
    app.add_option("--epsilon", epsilon, "l-inf budget (default 0.2)");
    app.add_option("--step-size", step_size, "Per-step update (default epsilon/20)");
    app.add_option("--steps", steps, "Iterations (default 200)");
    if (with_layers) app.add_option("--layers", layers, "Comma-separated block indices (default: last four)");
    app.add_option("--tau", tau, "Soft-assignment temperature (default 0.07)");
    app.add_option("--lambda-stat", lambda_stat);
    app.add_option("--lambda-dict", lambda_dict);
    app.add_option("--lambda-pres", lambda_pres);
    app.add_option("--lambda-tv", lambda_tv);
    app.add_option("--similarity", similarity, "cosine | raw-dot");
    app.add_option("--step-rule", step_rule, "signed-gradient | plain-gradient");
    app.add_option("--tv-scope", tv_scope, "roi | full-image");
    app.add_flag("--roi-only", roi_only, "Restrict the perturbation to ROI pixels");
  }

  AttackConfig build(int encoder_depth) const {
    AttackConfig c = config_path.empty() ? default_config() : experiment::load_config(config_path);
    if (config_path.empty()) c.layers = late_layers(encoder_depth, 4);
    if (epsilon) {
      c.epsilon = *epsilon;
      if (!step_size) c.step_size = *epsilon / 20.0;
    }
    if (step_size) c.step_size = *step_size;
    if (steps) c.steps = *steps;
    if (!layers.empty()) c.layers = experiment::parse_int_list(layers);
    if (tau) c.tau = *tau;
    if (lambda_stat) c.lambda_stat = *lambda_stat;
    if (lambda_dict) c.lambda_dict = *lambda_dict;
    if (lambda_pres) c.lambda_pres = *lambda_pres;
    if (lambda_tv) c.lambda_tv = *lambda_tv;
    if (!similarity.empty()) c.similarity_mode = parse_similarity_mode(similarity);
    if (!step_rule.empty()) c.step_rule = parse_step_rule(step_rule);
    if (!tv_scope.empty()) c.tv_scope = parse_tv_scope(tv_scope);
    if (roi_only) c.roi_only_perturbation = true;
    validate_config(c);
    return c;
  }
};

// Flags shared by eval and sweep.
struct EvalFlags {
  std::string manifest;
  std::string encoder = "toy";
  std::string encoder_options = "{}";
  std::string out;
  std::string lexicon;
  std::string grounding_endpoint;
  std::string grounding_fixture;
  double grounding_threshold = grounding::kDefaultThreshold;
  int grounding_concurrency = grounding::kDefaultConcurrency;
  int workers = 1;
  bool no_plots = false;
  bool no_perceptual = false;

  void add_to(CLI::App& app) {
    app.add_option("--manifest", manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--encoder", encoder, "Registered encoder adapter");
    app.add_option("--encoder-options", encoder_options, "Adapter options as JSON");
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--lexicon", lexicon, "Object lexicon file (overrides the manifest's)");
    app.add_option("--grounding-endpoint", grounding_endpoint, "Grounding service URL (else $GROUNDING_ENDPOINT)");
    app.add_option("--grounding-fixture", grounding_fixture, "Answer grounding queries from a local fixture");
    app.add_option("--grounding-threshold", grounding_threshold)->check(CLI::Range(0.0, 1.0));
    app.add_option("--grounding-concurrency", grounding_concurrency)->check(CLI::PositiveNumber);
    app.add_option("--workers", workers, "Items attacked in parallel")->check(CLI::PositiveNumber);
    app.add_flag("--no-plots", no_plots);
    app.add_flag("--no-perceptual", no_perceptual, "Leave the perceptual-distance slot empty");
  }
};

// Owns the pluggable backends an EvaluationContext points at.
struct Backends {
  std::unique_ptr<metrics::LexiconExtractor> extractor;
  metrics::HashingEmbedder embedder;
  metrics::RmsPixelBackend perceptual;
  std::unique_ptr<grounding::GroundingClient> grounding;
  experiment::EvaluationContext context;
};

std::unique_ptr<Backends> make_backends(const EvalFlags& f, const experiment::DatasetManifest& manifest) {
  auto b = std::make_unique<Backends>();
  if (!f.lexicon.empty()) {
    b->extractor = std::make_unique<metrics::LexiconExtractor>(metrics::LexiconExtractor::from_file(f.lexicon));
  } else if (!manifest.lexicon.empty()) {
    b->extractor = std::make_unique<metrics::LexiconExtractor>(manifest.lexicon);
  }
  std::string endpoint = f.grounding_endpoint;
  if (endpoint.empty()) {
    if (const char* env = std::getenv(grounding::kEndpointEnvVar)) endpoint = env;
  }
  if (!f.grounding_fixture.empty()) {
    b->grounding = std::make_unique<grounding::StubGroundingClient>(
        grounding::StubGroundingClient::from_file(f.grounding_fixture));
  } else if (!endpoint.empty()) {
    b->grounding = std::make_unique<grounding::HttpGroundingClient>(endpoint);
  }
  auto& ctx = b->context;
  ctx.extractor = b->extractor.get();
  ctx.embedder = &b->embedder;
  ctx.perceptual = f.no_perceptual ? nullptr : &b->perceptual;
  ctx.grounding = b->grounding.get();
  ctx.grounding_threshold = f.grounding_threshold;
  ctx.grounding_concurrency = f.grounding_concurrency;
  ctx.workers = f.workers;
  ctx.encoder_options = json::parse(f.encoder_options);
  return b;
}

void print_aggregates(const experiment::ExperimentReport& r) {
  std::cout << "items: " << r.items.size() << "\n";
  for (const auto& item : r.items) {
    if (!item.ok()) std::cout << "  " << item.id << ": " << item.status << " (" << item.error << ")\n";
  }
  for (const auto& [key, agg] : r.aggregates) {
    std::cout << "  " << key << " = " << agg.mean << "  (n=" << agg.count << ")\n";
  }
}

int cmd_attack(const std::string& image_path, const std::vector<std::string>& rois, const std::string& target,
               const std::string& encoder_name, const std::string& encoder_options, const ConfigFlags& cf,
               const std::string& out_dir) {
  auto encoder = EncoderRegistry::global().load(encoder_name, json::parse(encoder_options));
  const AttackConfig config = cf.build(encoder->descriptor().depth);
  const ImageTensor image = io::read_ppm(image_path);
  RoiSpec roi;
  for (const auto& text : rois) {
    const auto v = experiment::parse_int_list(text);
    if (v.size() != 4) throw InvalidBoxError("--roi expects x,y,w,h");
    roi.boxes.push_back(experiment::coco_box(v[0], v[1], v[2], v[3]));
  }
  const AttackResult result = run_bcr_attack(*encoder, image, roi, config);

  fs::create_directories(out_dir);
  io::write_ppm(result.adversarial_image, fs::path(out_dir) / "adversarial.ppm");
  json trace = json::array();
  for (const auto& r : result.loss_trace) {
    trace.push_back(json{{"total", r.total}, {"stat", r.stat}, {"dict", r.dict}, {"pres", r.pres}, {"tv", r.tv}});
  }
  const auto& f = result.final_loss;
  json summary{{"version", BCR_VERSION},
               {"image", fs::path(image_path).filename().string()},
               {"target", target},
               {"encoder", encoder_name},
               {"encoder_id", result.metadata.encoder_id},
               {"config", experiment::config_to_json(config)},
               {"converged_linf", result.converged_linf},
               {"final_loss",
                json{{"total", f.total}, {"stat", f.stat}, {"dict", f.dict}, {"pres", f.pres}, {"tv", f.tv}}},
               {"loss_trace", trace},
               {"ssim", nullptr},
               {"elapsed_seconds", result.metadata.elapsed_seconds}};
  try {
    summary["ssim"] = metrics::ssim(image, result.adversarial_image);
  } catch (const TooSmallError&) {
  }
  std::ofstream(fs::path(out_dir) / "result.json") << summary.dump(2) << "\n";

  experiment::ExperimentReport plot_report;
  experiment::ItemReport item;
  item.id = "attack";
  item.loss_trace = result.loss_trace;
  plot_report.items.push_back(item);
  plot_report.manifest = fs::path(image_path).filename().string();
  experiment::emit_plots(plot_report, fs::path(out_dir) / "plots");

  std::cout << "steps: " << result.loss_trace.size() << "\n"
            << "initial loss: " << (result.loss_trace.empty() ? f.total : result.loss_trace.front().total) << "\n"
            << "final loss: " << f.total << "\n"
            << "linf: " << result.converged_linf << "\n"
            << "wrote " << (fs::path(out_dir) / "adversarial.ppm").string() << "\n";
  return 0;
}

int cmd_eval(const EvalFlags& ef, const ConfigFlags& cf) {
  const auto manifest = experiment::load_manifest(ef.manifest);
  auto backends = make_backends(ef, manifest);
  auto encoder = EncoderRegistry::global().load(ef.encoder, backends->context.encoder_options);
  const AttackConfig config = cf.build(encoder->descriptor().depth);
  const auto report = experiment::run_attack_batch(manifest, ef.encoder, config, ef.out, backends->context);
  print_aggregates(report);
  if (!ef.no_plots) {
    const auto n = experiment::emit_plots(report, fs::path(ef.out) / "plots");
    if (n == 0) std::cout << "no plottable items; no plots written\n";
  }
  std::cout << "report: " << (fs::path(ef.out) / "report.json").string() << "\n";
  return 0;
}

int cmd_sweep(const EvalFlags& ef, const ConfigFlags& cf, const std::string& groups_spec) {
  const auto manifest = experiment::load_manifest(ef.manifest);
  auto backends = make_backends(ef, manifest);
  auto encoder = EncoderRegistry::global().load(ef.encoder, backends->context.encoder_options);
  const AttackConfig config = cf.build(encoder->descriptor().depth);
  const auto groups = groups_spec.empty() ? experiment::default_groups(encoder->descriptor().depth)
                                          : experiment::parse_groups(groups_spec);
  const auto sweep = experiment::run_layer_sweep(manifest, ef.encoder, config, groups, ef.out, backends->context);
  if (!ef.no_plots) {
    for (const auto& g : sweep.groups) experiment::emit_plots(g.report, fs::path(ef.out) / g.group.name / "plots");
  }
  std::cout << experiment::sweep_table(sweep);
  std::cout << "sweep: " << (fs::path(ef.out) / "sweep.json").string() << "\n";
  return 0;
}

int cmd_baseline(const std::string& image_path, const std::vector<std::string>& rois, const std::string& mode,
                 double fill, int radius, const std::string& out) {
  const ImageTensor image = io::read_ppm(image_path);
  RoiSpec roi;
  for (const auto& text : rois) {
    const auto v = experiment::parse_int_list(text);
    if (v.size() != 4) throw InvalidBoxError("--roi expects x,y,w,h");
    roi.boxes.push_back(experiment::coco_box(v[0], v[1], v[2], v[3]));
  }
  const ImageTensor result = mode == "mask" ? mask_roi(image, roi, fill) : blur_roi(image, roi, radius);
  io::write_ppm(result, out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Background-consistent re-encoding: object concealment attack and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", BCR_VERSION);

  // attack
  auto* attack = app.add_subcommand("attack", "Attack one image");
  std::string a_image, a_target, a_encoder = "toy", a_encoder_opts = "{}", a_out;
  std::vector<std::string> a_rois;
  ConfigFlags a_cfg;
  attack->add_option("--image", a_image, "Input image (binary PPM)")->required()->check(CLI::ExistingFile);
  attack->add_option("--roi", a_rois, "ROI box x,y,w,h (repeatable)")->required();
  attack->add_option("--target", a_target, "Target object name (recorded only)");
  attack->add_option("--encoder", a_encoder, "Registered encoder adapter");
  attack->add_option("--encoder-options", a_encoder_opts, "Adapter options as JSON");
  attack->add_option("--out", a_out, "Output directory")->required();
  a_cfg.add_to(*attack, true);

  // eval
  auto* eval = app.add_subcommand("eval", "Attack and score every item of a manifest");
  EvalFlags e_flags;
  ConfigFlags e_cfg;
  e_flags.add_to(*eval);
  e_cfg.add_to(*eval, true);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Layer-sensitivity sweep over layer groups");
  EvalFlags s_flags;
  ConfigFlags s_cfg;
  std::string s_groups;
  s_flags.add_to(*sweep);
  s_cfg.add_to(*sweep, false);
  sweep->add_option("--groups", s_groups, "Layer groups, e.g. \"early=1,2;late=3,4\" (default early/middle/late)");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Pixel-space mask or blur of the ROI");
  std::string b_image, b_mode = "mask", b_out;
  std::vector<std::string> b_rois;
  double b_fill = 0.5;
  int b_radius = 2;
  baseline->add_option("--image", b_image)->required()->check(CLI::ExistingFile);
  baseline->add_option("--roi", b_rois, "ROI box x,y,w,h (repeatable)")->required();
  baseline->add_option("--mode", b_mode)->check(CLI::IsMember({"mask", "blur"}));
  baseline->add_option("--fill", b_fill)->check(CLI::Range(0.0, 1.0));
  baseline->add_option("--radius", b_radius)->check(CLI::PositiveNumber);
  baseline->add_option("--out", b_out)->required();

  // ground-stub
  auto* stub = app.add_subcommand("ground-stub", "Serve grounding answers from a fixture over HTTP");
  std::string g_fixture, g_host = "127.0.0.1";
  int g_port = 8088;
  stub->add_option("--fixture", g_fixture)->required()->check(CLI::ExistingFile);
  stub->add_option("--host", g_host);
  stub->add_option("--port", g_port);

  // toy-dataset
  auto* toy = app.add_subcommand("toy-dataset", "Write a synthetic manifest for the toy encoder");
  std::string t_out;
  int t_count = 3;
  std::uint64_t t_seed = 7;
  toy->add_option("--out", t_out)->required();
  toy->add_option("--count", t_count)->check(CLI::PositiveNumber);
  toy->add_option("--seed", t_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*attack) return cmd_attack(a_image, a_rois, a_target, a_encoder, a_encoder_opts, a_cfg, a_out);
    if (*eval) return cmd_eval(e_flags, e_cfg);
    if (*sweep) return cmd_sweep(s_flags, s_cfg, s_groups);
    if (*baseline) return cmd_baseline(b_image, b_rois, b_mode, b_fill, b_radius, b_out);
    if (*stub) {
      grounding::StubGroundingServer server(grounding::StubGroundingClient::from_file(g_fixture), g_host, g_port);
      std::cout << "grounding stub listening on " << server.endpoint() << std::endl;
      server.wait();
      return 0;
    }
    if (*toy) {
      std::cout << experiment::write_toy_dataset(t_out, t_count, t_seed).string() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
