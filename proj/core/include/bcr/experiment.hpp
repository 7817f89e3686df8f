#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcr/grounding.hpp"
#include "bcr/metrics.hpp"
#include "bcr/types.hpp"

namespace bcr::experiment {

namespace fs = std::filesystem;

// ---- configuration ---------------------------------------------------------

nlohmann::json config_to_json(const AttackConfig& config);
// Keys absent from `json` keep the value from `base`. Throws ConfigError.
AttackConfig config_from_json(const nlohmann::json& json, AttackConfig base = default_config());
// Applies one `key=value` setting (same keys as the JSON form; layers as "1,2,3").
void apply_config_entry(AttackConfig& config, const std::string& key, const std::string& value);
// `.json` files are parsed as JSON, anything else as key=value lines with
// '#' comments. The result is validated.
AttackConfig load_config(const fs::path& path);

std::vector<int> parse_int_list(const std::string& text);

// ---- dataset manifest -------------------------------------------------------

struct ManifestItem {
  std::string id;
  fs::path image_path;
  RoiSpec roi;
  std::string target;
  std::optional<std::string> clean_caption;
  std::optional<std::string> adversarial_caption;
};

// JSON manifest:
//   {"name": "...", "split": "...", "lexicon": ["dog", ...] | "lexicon.txt",
//    "items": [{"id": "...", "image": "rel/or/abs.ppm", "boxes": [[x, y, w, h], ...],
//               "target": "dog", "clean_caption": "...", "adversarial_caption": "..."}]}
// Boxes follow the COCO (x, y, width, height) convention; image and lexicon
// paths are relative to the manifest file.
struct DatasetManifest {
  std::string name;
  std::string split;
  std::vector<std::string> lexicon;
  std::vector<ManifestItem> items;
};

// Throws ParseError / MissingImageError / InvalidBoxError.
DatasetManifest load_manifest(const fs::path& path);
// Throws InvalidBoxError for non-positive width/height or non-integral values.
Box coco_box(double x, double y, double w, double h);

// ---- reports ----------------------------------------------------------------

struct AttackSummary {
  int steps = 0;
  LossRecord initial;
  LossRecord final;
  double converged_linf = 0.0;

  bool operator==(const AttackSummary&) const = default;
};

struct ItemReport {
  std::string id;
  std::string image;
  std::string target;
  std::string status = "ok";  // "ok" or the error kind
  std::string error;
  std::optional<AttackSummary> attack;
  std::string adversarial_image;  // relative to the output directory
  std::optional<double> persisted_linf;
  std::optional<int> concealment;
  std::optional<int> concealment_head;
  std::optional<double> global_preservation;
  std::optional<double> grounded_hallucination;
  std::optional<double> head_noun_hallucination;
  std::optional<double> semantic_drift;
  std::optional<double> ssim;
  std::optional<double> perceptual_distance;
  // Per-metric flags take the form "<metric>:<reason>" and exclude that
  // metric from aggregation.
  std::vector<std::string> flags;
  nlohmann::json grounding = nlohmann::json::object();
  std::vector<LossRecord> loss_trace;

  bool ok() const { return status == "ok"; }
  bool operator==(const ItemReport&) const = default;
};

struct Aggregate {
  double mean = 0.0;
  std::size_t count = 0;

  bool operator==(const Aggregate&) const = default;
};

// Aggregate keys follow the results-table abbreviations.
inline constexpr const char* kMetricKeys[] = {"C", "C_head", "GP", "GH", "GH_head", "SD", "SSIM", "LPIPS",
                                              "initial_loss", "final_loss"};

struct ExperimentReport {
  std::string version;
  std::string manifest;
  std::string split;
  std::string encoder;
  nlohmann::json config = nlohmann::json::object();
  std::vector<ItemReport> items;
  std::map<std::string, Aggregate> aggregates;
  // Wall-clock data; excluded from determinism comparisons.
  nlohmann::json run_info = nlohmann::json::object();

  bool operator==(const ExperimentReport&) const = default;
};

// Per-item value of a metric key, or nullopt if absent or flagged.
std::optional<double> metric_value(const ItemReport& item, const std::string& key);
// Mean over ok items with an unflagged value, summed in sorted order so the
// result does not depend on item order.
std::map<std::string, Aggregate> aggregate(const std::vector<ItemReport>& items);

nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& json);
// Throws IOError.
void write_report(const ExperimentReport& report, const fs::path& path);
ExperimentReport read_report(const fs::path& path);

// One loss-curve SVG per item with a trace plus one aggregate bar chart.
// Returns the number of files written; writes nothing when no item has a
// trace.
std::size_t emit_plots(const ExperimentReport& report, const fs::path& dir);

// ---- batch execution ---------------------------------------------------------

struct EvaluationContext {
  const metrics::ObjectExtractor* extractor = nullptr;
  const metrics::TextEmbedder* embedder = nullptr;
  const metrics::PerceptualBackend* perceptual = nullptr;
  const grounding::GroundingClient* grounding = nullptr;
  double grounding_threshold = grounding::kDefaultThreshold;
  int grounding_concurrency = grounding::kDefaultConcurrency;
  int workers = 1;
  nlohmann::json encoder_options = nlohmann::json::object();
  bool keep_traces = true;
};

// Attacks every item, persists adversarial images under output_dir/images,
// scores it, and writes output_dir/report.json. Item failures are recorded,
// never thrown. Throws EmptyDatasetError, UnknownAdapterError, IOError.
ExperimentReport run_attack_batch(const DatasetManifest& manifest, const std::string& encoder_name,
                                  const AttackConfig& config, const fs::path& output_dir,
                                  const EvaluationContext& context);

struct LayerGroup {
  std::string name;
  std::vector<int> layers;

  bool operator==(const LayerGroup&) const = default;
};

// "early=1,2;late=3,4". Throws ConfigError.
std::vector<LayerGroup> parse_groups(const std::string& spec);
// Early = first four blocks, late = last four, middle = four centred blocks.
std::vector<LayerGroup> default_groups(int depth);

struct SweepEntry {
  LayerGroup group;
  ExperimentReport report;
};

struct SweepReport {
  std::string encoder;
  std::vector<SweepEntry> groups;
};

// One batch per group (config.layers overridden) under output_dir/<group>,
// plus sweep.json and sweep_table.md. Throws LayerOutOfRange before running
// anything if a group leaves the encoder depth.
SweepReport run_layer_sweep(const DatasetManifest& manifest, const std::string& encoder_name,
                            const AttackConfig& config, const std::vector<LayerGroup>& groups,
                            const fs::path& output_dir, const EvaluationContext& context);

// Markdown table: Targeted Layers | Concealment Success | Hallucination Rate.
std::string sweep_table(const SweepReport& sweep);
nlohmann::json sweep_to_json(const SweepReport& sweep);

// ---- toy data ------------------------------------------------------------------

// Smooth two-colour background with a saturated square object in `object`.
ImageTensor make_toy_scene(std::uint64_t seed, int resolution, const Box& object);

// Writes images, lexicon.txt, grounding_fixture.json and manifest.json under
// `dir` for `count` items; returns the manifest path.
fs::path write_toy_dataset(const fs::path& dir, int count, std::uint64_t seed, int resolution = 16);

}  // namespace bcr::experiment
