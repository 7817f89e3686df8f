#include "bcr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "bcr/attack.hpp"
#include "bcr/encoder.hpp"
#include "bcr/errors.hpp"
#include "bcr/image_io.hpp"
#include "bcr/rng.hpp"

namespace bcr::experiment {

using nlohmann::json;

// ---- configuration -----------------------------------------------------------

json config_to_json(const AttackConfig& c) {
  return json{{"epsilon", c.epsilon},
              {"step_size", c.step_size},
              {"steps", c.steps},
              {"layers", c.layers},
              {"lambda_stat", c.lambda_stat},
              {"lambda_dict", c.lambda_dict},
              {"lambda_pres", c.lambda_pres},
              {"lambda_tv", c.lambda_tv},
              {"tau", c.tau},
              {"similarity_mode", to_string(c.similarity_mode)},
              {"step_rule", to_string(c.step_rule)},
              {"tv_scope", to_string(c.tv_scope)},
              {"roi_only_perturbation", c.roi_only_perturbation},
              {"roi_overlap_threshold", c.roi_overlap_threshold}};
}

AttackConfig config_from_json(const json& j, AttackConfig c) {
  if (!j.is_object()) throw ConfigError("attack config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "step_size") c.step_size = value.get<double>();
      else if (key == "steps") c.steps = value.get<int>();
      else if (key == "layers") c.layers = value.get<std::vector<int>>();
      else if (key == "lambda_stat") c.lambda_stat = value.get<double>();
      else if (key == "lambda_dict") c.lambda_dict = value.get<double>();
      else if (key == "lambda_pres") c.lambda_pres = value.get<double>();
      else if (key == "lambda_tv") c.lambda_tv = value.get<double>();
      else if (key == "tau") c.tau = value.get<double>();
      else if (key == "similarity_mode") c.similarity_mode = parse_similarity_mode(value.get<std::string>());
      else if (key == "step_rule") c.step_rule = parse_step_rule(value.get<std::string>());
      else if (key == "tv_scope") c.tv_scope = parse_tv_scope(value.get<std::string>());
      else if (key == "roi_only_perturbation") c.roi_only_perturbation = value.get<bool>();
      else if (key == "roi_overlap_threshold") c.roi_overlap_threshold = value.get<double>();
      else throw ConfigError("unknown attack config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("attack config: ") + e.what());
  }
  if (j.contains("epsilon") && !j.contains("step_size")) c.step_size = c.epsilon / 20.0;
  return c;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    const auto first = part.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part.substr(first), &used));
      if (part.find_first_not_of(" \t", first + used) != std::string::npos) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("'" + text + "' is not a comma-separated integer list");
    }
  }
  return out;
}

void apply_config_entry(AttackConfig& config, const std::string& key, const std::string& value) {
  json j;
  if (key == "layers") {
    j[key] = parse_int_list(value);
  } else if (key == "similarity_mode" || key == "step_rule" || key == "tv_scope") {
    j[key] = value;
  } else if (key == "roi_only_perturbation") {
    if (value != "true" && value != "false") throw ConfigError("roi_only_perturbation must be true or false");
    j[key] = value == "true";
  } else if (key == "steps") {
    j[key] = parse_int_list(value).at(0);
  } else {
    try {
      std::size_t used = 0;
      j[key] = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigError("value for '" + key + "' is not a number: " + value);
    }
  }
  // Single-key updates never re-derive step_size.
  const double step = config.step_size;
  config = config_from_json(j, config);
  if (key == "epsilon") config.step_size = step;
}

AttackConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open config " + path.string());
  AttackConfig config;
  if (path.extension() == ".json") {
    try {
      config = config_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw ParseError("config " + path.string() + ": " + e.what());
    }
  } else {
    bool step_given = false;
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
      }
      const std::string key = trim(line.substr(0, eq));
      apply_config_entry(config, key, trim(line.substr(eq + 1)));
      step_given = step_given || key == "step_size";
    }
    if (!step_given) config.step_size = config.epsilon / 20.0;
  }
  validate_config(config);
  return config;
}

// ---- manifest -------------------------------------------------------------------

Box coco_box(double x, double y, double w, double h) {
  auto integral = [](double v) { return std::isfinite(v) && std::floor(v) == v; };
  if (!integral(x) || !integral(y) || !integral(w) || !integral(h)) {
    throw InvalidBoxError("box coordinates must be integral pixels");
  }
  if (w <= 0 || h <= 0) {
    std::ostringstream os;
    os << "box (" << x << "," << y << "," << w << "," << h << ") has non-positive width or height";
    throw InvalidBoxError(os.str());
  }
  if (x < 0 || y < 0) throw InvalidBoxError("box origin must be non-negative");
  return Box{static_cast<int>(x), static_cast<int>(y), static_cast<int>(x + w), static_cast<int>(y + h)};
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  DatasetManifest m;
  try {
    m.name = j.value("name", path.stem().string());
    m.split = j.value("split", std::string());
    if (j.contains("lexicon")) {
      const auto& lex = j["lexicon"];
      if (lex.is_string()) {
        const fs::path lex_path = base / lex.get<std::string>();
        std::ifstream lf(lex_path);
        if (!lf) throw ParseError("cannot open lexicon " + lex_path.string());
        for (std::string line; std::getline(lf, line);) {
          if (line.find_first_not_of(" \t\r") != std::string::npos && line[line.find_first_not_of(" \t")] != '#') {
            m.lexicon.push_back(line);
          }
        }
      } else {
        m.lexicon = lex.get<std::vector<std::string>>();
      }
    }
    if (!j.contains("items") || !j["items"].is_array()) throw ParseError("manifest lacks an 'items' array");
    std::size_t k = 0;
    for (const auto& it : j["items"]) {
      ManifestItem item;
      item.id = it.value("id", "item" + std::to_string(k));
      const std::string image = it.at("image").get<std::string>();
      item.image_path = fs::path(image).is_absolute() ? fs::path(image) : base / image;
      if (!fs::exists(item.image_path)) {
        throw MissingImageError("manifest item '" + item.id + "' references missing image " + item.image_path.string());
      }
      const auto& boxes = it.at("boxes");
      if (!boxes.is_array() || boxes.empty()) throw InvalidBoxError("manifest item '" + item.id + "' has no boxes");
      for (const auto& b : boxes) {
        if (!b.is_array() || b.size() != 4) throw InvalidBoxError("boxes must be [x, y, width, height]");
        item.roi.boxes.push_back(coco_box(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()));
      }
      item.target = it.value("target", std::string());
      if (it.contains("clean_caption")) item.clean_caption = it["clean_caption"].get<std::string>();
      if (it.contains("adversarial_caption")) item.adversarial_caption = it["adversarial_caption"].get<std::string>();
      m.items.push_back(std::move(item));
      ++k;
    }
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

// ---- batch --------------------------------------------------------------------

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void score_captions(const ManifestItem& item, const std::string& image_ref, const EvaluationContext& ctx,
                    ItemReport& r) {
  if (!item.clean_caption || !item.adversarial_caption) {
    r.flags.push_back("captions:missing");
    return;
  }
  if (ctx.embedder != nullptr) {
    try {
      r.semantic_drift = metrics::semantic_drift(*item.clean_caption, *item.adversarial_caption, ctx.embedder);
    } catch (const Error& e) {
      r.flags.push_back("SD:" + std::string(e.kind()));
    }
  } else {
    r.flags.push_back("SD:EmbedderUnavailable");
  }
  if (ctx.extractor == nullptr) {
    for (const char* key : {"C", "C_head", "GP", "GH", "GH_head"}) r.flags.push_back(std::string(key) + ":ExtractorUnavailable");
    return;
  }
  const auto clean = ctx.extractor->extract(*item.clean_caption);
  const auto adv = ctx.extractor->extract(*item.adversarial_caption);
  r.grounding["clean_objects"] = clean.phrases;
  r.grounding["adversarial_objects"] = adv.phrases;
  if (!item.target.empty()) {
    r.concealment = metrics::concealment_success(item.target, clean, adv, metrics::MatchLevel::kPhrase);
    r.concealment_head = metrics::concealment_success(item.target, clean, adv, metrics::MatchLevel::kHeadNoun);
  } else {
    r.flags.push_back("C:no_target");
    r.flags.push_back("C_head:no_target");
  }
  try {
    r.global_preservation = metrics::global_preservation(clean, adv);
  } catch (const UndefinedMetricError&) {
    r.flags.push_back("GP:undefined");
  }
  if (ctx.grounding == nullptr) {
    r.flags.push_back("GH:grounding_unconfigured");
    r.flags.push_back("GH_head:grounding_unconfigured");
    return;
  }
  struct Level {
    metrics::MatchLevel level;
    const char* key;
    std::optional<double> ItemReport::*field;
  };
  for (const Level& lv : {Level{metrics::MatchLevel::kPhrase, "GH", &ItemReport::grounded_hallucination},
                          Level{metrics::MatchLevel::kHeadNoun, "GH_head", &ItemReport::head_noun_hallucination}}) {
    const auto candidates = grounding::candidate_hallucinations(clean, adv, lv.level);
    auto outcomes = grounding::verify_all(*ctx.grounding, image_ref, {candidates.begin(), candidates.end()},
                                          ctx.grounding_threshold, ctx.grounding_concurrency);
    json detail = json::array();
    for (const auto& o : outcomes) {
      json d{{"phrase", o.phrase}};
      if (o.verdict) {
        d["detected"] = o.verdict->detected;
        d["max_confidence"] = o.verdict->max_confidence;
      } else {
        d["error"] = o.error;
      }
      detail.push_back(std::move(d));
    }
    r.grounding[std::string(lv.key) + "_verdicts"] = std::move(detail);
    const std::size_t denom = lv.level == metrics::MatchLevel::kPhrase ? adv.phrase_set().size() : adv.head_set().size();
    try {
      const auto rate = grounding::grounded_hallucination_rate(outcomes, denom);
      r.*(lv.field) = rate.rate;
      if (rate.degenerate) r.flags.push_back(std::string(lv.key) + ":degenerate");
    } catch (const UnverifiableError&) {
      r.flags.push_back(std::string(lv.key) + ":unverifiable");
    }
  }
}

ItemReport process_item(const ManifestItem& item, const Encoder& encoder, const AttackConfig& config,
                        const fs::path& output_dir, const EvaluationContext& ctx, std::mutex* encoder_lock) {
  ItemReport r;
  r.id = item.id;
  r.image = item.image_path.filename().string();
  r.target = item.target;
  try {
    const ImageTensor clean = io::read_ppm(item.image_path);
    AttackResult result = [&] {
      if (encoder_lock == nullptr) return run_bcr_attack(encoder, clean, item.roi, config);
      std::lock_guard lock(*encoder_lock);
      return run_bcr_attack(encoder, clean, item.roi, config);
    }();
    AttackSummary summary;
    summary.steps = static_cast<int>(result.loss_trace.size());
    summary.initial = result.loss_trace.empty() ? result.final_loss : result.loss_trace.front();
    summary.final = result.final_loss;
    summary.converged_linf = result.converged_linf;
    r.attack = summary;
    if (ctx.keep_traces) r.loss_trace = result.loss_trace;

    r.adversarial_image = "images/" + item.id + "_adv.ppm";
    const fs::path adv_path = output_dir / r.adversarial_image;
    io::write_ppm(result.adversarial_image, adv_path);
    const ImageTensor stored = io::read_ppm(adv_path);
    r.persisted_linf = linf_distance(stored, clean);
    if (*r.persisted_linf > config.epsilon + 2.0 * io::kQuantizationStep) r.flags.push_back("budget:exceeded");

    try {
      r.ssim = metrics::ssim(clean, stored);
    } catch (const Error& e) {
      r.flags.push_back("SSIM:" + std::string(e.kind()));
    }
    if (ctx.perceptual != nullptr) {
      r.perceptual_distance = metrics::perceptual_distance(clean, stored, ctx.perceptual);
    } else {
      r.flags.push_back("LPIPS:BackendUnavailable");
    }
    score_captions(item, r.adversarial_image, ctx, r);
  } catch (const Error& e) {
    r.status = std::string(e.kind());
    r.error = e.what();
  } catch (const std::exception& e) {
    r.status = "InternalError";
    r.error = e.what();
  }
  return r;
}

}  // namespace

ExperimentReport run_attack_batch(const DatasetManifest& manifest, const std::string& encoder_name,
                                  const AttackConfig& config, const fs::path& output_dir,
                                  const EvaluationContext& ctx) {
  const auto started = std::chrono::steady_clock::now();
  if (manifest.items.empty()) throw EmptyDatasetError("manifest '" + manifest.name + "' has no items");
  validate_config(config);
  auto encoder = EncoderRegistry::global().load(encoder_name, ctx.encoder_options);
  check_layers(*encoder, config.layers);

  std::error_code ec;
  fs::create_directories(output_dir / "images", ec);
  if (ec) throw IOError("cannot create output directory " + output_dir.string() + ": " + ec.message());

  ExperimentReport report;
  report.version = BCR_VERSION;
  report.manifest = manifest.name;
  report.split = manifest.split;
  report.encoder = encoder_name;
  report.config = json{{"attack", config_to_json(config)},
                       {"encoder", encoder_name},
                       {"encoder_id", encoder->descriptor().identifier},
                       {"encoder_options", ctx.encoder_options},
                       {"grounding_configured", ctx.grounding != nullptr},
                       {"grounding_threshold", ctx.grounding_threshold},
                       {"perceptual_backend", ctx.perceptual ? json(ctx.perceptual->name()) : json(nullptr)}};

  const std::size_t n = manifest.items.size();
  report.items.resize(n);
  std::vector<double> elapsed(n, 0.0);
  std::mutex encoder_mutex;
  std::mutex* lock = encoder->reentrant() ? nullptr : &encoder_mutex;
  auto work = [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    report.items[i] = process_item(manifest.items[i], *encoder, config, output_dir, ctx, lock);
    elapsed[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, ctx.workers)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  report.aggregates = aggregate(report.items);
  json per_item = json::object();
  for (std::size_t i = 0; i < n; ++i) per_item[report.items[i].id] = elapsed[i];
  report.run_info = json{{"started_at", utc_timestamp()},
                         {"elapsed_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()},
                         {"item_elapsed_seconds", per_item},
                         {"workers", workers}};
  write_report(report, output_dir / "report.json");
  return report;
}

// ---- layer sweep ------------------------------------------------------------------

std::vector<LayerGroup> parse_groups(const std::string& spec) {
  std::vector<LayerGroup> out;
  std::stringstream ss(spec);
  for (std::string part; std::getline(ss, part, ';');) {
    if (part.find_first_not_of(" \t") == std::string::npos) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("layer group '" + part + "' must look like name=1,2");
    LayerGroup g;
    g.name = part.substr(0, eq);
    g.name.erase(0, g.name.find_first_not_of(" \t"));
    g.name.erase(g.name.find_last_not_of(" \t") + 1);
    g.layers = parse_int_list(part.substr(eq + 1));
    if (g.layers.empty()) throw ConfigError("layer group '" + g.name + "' is empty");
    for (const auto& prev : out) {
      if (prev.name == g.name) throw ConfigError("duplicate layer group '" + g.name + "'");
    }
    out.push_back(std::move(g));
  }
  if (out.empty()) throw ConfigError("no layer groups given");
  return out;
}

std::vector<LayerGroup> default_groups(int depth) {
  auto range = [](int from, int to) {
    std::vector<int> v;
    for (int l = from; l <= to; ++l) v.push_back(l);
    return v;
  };
  const int width = std::min(4, depth);
  const int mid_start = std::max(1, (depth - width) / 2 + 1);
  return {LayerGroup{"early", range(1, width)}, LayerGroup{"middle", range(mid_start, mid_start + width - 1)},
          LayerGroup{"late", late_layers(depth, 4)}};
}

SweepReport run_layer_sweep(const DatasetManifest& manifest, const std::string& encoder_name,
                            const AttackConfig& config, const std::vector<LayerGroup>& groups,
                            const fs::path& output_dir, const EvaluationContext& ctx) {
  if (groups.empty()) throw ConfigError("no layer groups given");
  auto encoder = EncoderRegistry::global().load(encoder_name, ctx.encoder_options);
  for (const auto& g : groups) {
    try {
      check_layers(*encoder, g.layers);
    } catch (const LayerOutOfRange& e) {
      throw LayerOutOfRange("layer group '" + g.name + "': " + e.what());
    }
  }
  SweepReport sweep;
  sweep.encoder = encoder_name;
  for (const auto& g : groups) {
    AttackConfig c = config;
    c.layers = g.layers;
    sweep.groups.push_back(SweepEntry{g, run_attack_batch(manifest, encoder_name, c, output_dir / g.name, ctx)});
  }
  std::ofstream js(output_dir / "sweep.json");
  std::ofstream md(output_dir / "sweep_table.md");
  if (!js || !md) throw IOError("cannot write sweep outputs under " + output_dir.string());
  js << sweep_to_json(sweep).dump(2) << "\n";
  md << sweep_table(sweep);
  return sweep;
}

std::string sweep_table(const SweepReport& sweep) {
  auto cell = [](const ExperimentReport& r, const char* key) {
    auto it = r.aggregates.find(key);
    if (it == r.aggregates.end()) return std::string("n/a");
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << it->second.mean;
    return os.str();
  };
  std::ostringstream os;
  os << "| Targeted Layers | Concealment Success | Hallucination Rate |\n";
  os << "|---|---|---|\n";
  for (const auto& e : sweep.groups) {
    std::string name = e.group.name;
    if (!name.empty()) name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    std::ostringstream layers;
    for (std::size_t i = 0; i < e.group.layers.size(); ++i) layers << (i ? "," : "") << e.group.layers[i];
    os << "| " << name << " Layers (" << layers.str() << ") | " << cell(e.report, "C") << " | "
       << cell(e.report, "GH") << " |\n";
  }
  return os.str();
}

json sweep_to_json(const SweepReport& sweep) {
  json groups = json::array();
  for (const auto& e : sweep.groups) {
    json finals = json::array();
    for (const auto& item : e.report.items) {
      finals.push_back(item.attack ? json(item.attack->final.total) : json(nullptr));
    }
    json aggs = json::object();
    for (const auto& [k, a] : e.report.aggregates) aggs[k] = json{{"mean", a.mean}, {"count", a.count}};
    groups.push_back(json{{"name", e.group.name},
                          {"layers", e.group.layers},
                          {"aggregates", aggs},
                          {"final_losses", finals},
                          {"report", e.group.name + "/report.json"}});
  }
  return json{{"encoder", sweep.encoder}, {"version", BCR_VERSION}, {"groups", groups}};
}

// ---- toy data -------------------------------------------------------------------------

ImageTensor make_toy_scene(std::uint64_t seed, int resolution, const Box& object) {
  Rng rng(seed);
  double bg_a[3], bg_b[3], obj[3];
  for (double& v : bg_a) v = rng.uniform(0.2, 0.5);
  for (double& v : bg_b) v = rng.uniform(0.4, 0.7);
  const int hot = rng.uniform_int(0, 2);
  for (int c = 0; c < 3; ++c) obj[c] = c == hot ? rng.uniform(0.85, 0.95) : rng.uniform(0.05, 0.2);
  const double fx = rng.uniform(0.5, 1.5);
  const double fy = rng.uniform(0.5, 1.5);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double span = std::max(1, 2 * (resolution - 1));
  std::vector<double> chw(static_cast<std::size_t>(3) * resolution * resolution);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) {
        double v;
        if (x >= object.x_min && x < object.x_max && y >= object.y_min && y < object.y_max) {
          v = obj[c] + (((x + y) % 2) ? 0.04 : -0.04);
        } else {
          const double t = (x + y) / span;
          v = (1.0 - t) * bg_a[c] + t * bg_b[c] +
              0.05 * std::sin(fx * x + phase) * std::cos(fy * y + phase * (c + 1));
        }
        chw[(static_cast<std::size_t>(c) * resolution + y) * resolution + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return ImageTensor(resolution, resolution, std::move(chw));
}

namespace {

struct ToyCaptionTemplate {
  const char* target;
  const char* clean;
  const char* adversarial;
};

constexpr ToyCaptionTemplate kToyCaptions[] = {
    {"dog", "A dog lying on the grass near a tree.", "Grass with a tree and a bench."},
    {"ball", "A red ball and a cat on the floor.", "A cat sitting on the floor next to a ball."},
    {"cup", "A cup next to a laptop on a table.", "A laptop and a plant on a table."},
    {"salt shaker", "A salt shaker beside a plate.", "A plate on a wooden table."},
};

constexpr const char* kToyLexicon[] = {"dog", "grass", "tree", "bench", "ball", "cat", "floor", "cup",
                                       "laptop", "table", "plant", "salt shaker", "plate"};

}  // namespace

fs::path write_toy_dataset(const fs::path& dir, int count, std::uint64_t seed, int resolution) {
  if (count < 1) throw ConfigError("toy dataset needs at least one item");
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IOError("cannot create " + dir.string() + ": " + ec.message());
  Rng rng(seed);
  json items = json::array();
  const int side = std::min(4, resolution / 2);
  for (int k = 0; k < count; ++k) {
    const int cells = (resolution - side) / 2;
    const int x = 2 * rng.uniform_int(0, cells);
    const int y = 2 * rng.uniform_int(0, cells);
    const Box box{x, y, x + side, y + side};
    const std::string id = "toy" + std::to_string(k);
    const std::string image = "images/" + id + ".ppm";
    io::write_ppm(make_toy_scene(seed * 1000 + static_cast<std::uint64_t>(k), resolution, box), dir / image);
    const auto& cap = kToyCaptions[static_cast<std::size_t>(k) % std::size(kToyCaptions)];
    items.push_back(json{{"id", id},
                         {"image", image},
                         {"boxes", {{x, y, side, side}}},
                         {"target", cap.target},
                         {"clean_caption", cap.clean},
                         {"adversarial_caption", cap.adversarial}});
  }
  {
    std::ofstream lex(dir / "lexicon.txt");
    for (const char* w : kToyLexicon) lex << w << "\n";
    if (!lex) throw IOError("cannot write toy lexicon");
  }
  {
    // Detections keyed by head noun, the form the verifier queries with.
    json responses = json::array({
        json{{"phrase", "bench"}, {"detections", {json{{"box", {1, 1, 5, 5}}, {"confidence", 0.55}}}}},
        json{{"phrase", "plant"}, {"detections", {json{{"box", {2, 2, 6, 6}}, {"confidence", 0.3}}}}},
        json{{"phrase", "table"}, {"detections", {json{{"box", {0, 8, 16, 16}}, {"confidence", 0.8}}}}},
    });
    std::ofstream fx(dir / "grounding_fixture.json");
    fx << json{{"responses", responses}}.dump(2) << "\n";
    if (!fx) throw IOError("cannot write toy grounding fixture");
  }
  const fs::path manifest = dir / "manifest.json";
  std::ofstream out(manifest);
  out << json{{"name", "toy"}, {"split", "synthetic"}, {"lexicon", "lexicon.txt"}, {"items", items}}.dump(2) << "\n";
  if (!out) throw IOError("cannot write " + manifest.string());
  return manifest;
}

}  // namespace bcr::experiment
