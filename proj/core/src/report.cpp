#include <algorithm>
#include <fstream>

#include "bcr/errors.hpp"
#include "bcr/experiment.hpp"

namespace bcr::experiment {

using nlohmann::json;

namespace {

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_get(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

json loss_json(const LossRecord& r) {
  return json{{"total", r.total}, {"stat", r.stat}, {"dict", r.dict}, {"pres", r.pres}, {"tv", r.tv}};
}

LossRecord loss_from(const json& j) {
  return LossRecord{j.at("total").get<double>(), j.at("stat").get<double>(), j.at("dict").get<double>(),
                    j.at("pres").get<double>(), j.at("tv").get<double>()};
}

bool flagged(const ItemReport& item, const std::string& key) {
  const std::string prefix = key + ":";
  return std::any_of(item.flags.begin(), item.flags.end(),
                     [&](const std::string& f) { return f.compare(0, prefix.size(), prefix) == 0; });
}

}  // namespace

std::optional<double> metric_value(const ItemReport& item, const std::string& key) {
  if (!item.ok() || flagged(item, key)) return std::nullopt;
  auto as_double = [](const auto& v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return static_cast<double>(*v);
  };
  if (key == "C") return as_double(item.concealment);
  if (key == "C_head") return as_double(item.concealment_head);
  if (key == "GP") return item.global_preservation;
  if (key == "GH") return item.grounded_hallucination;
  if (key == "GH_head") return item.head_noun_hallucination;
  if (key == "SD") return item.semantic_drift;
  if (key == "SSIM") return item.ssim;
  if (key == "LPIPS") return item.perceptual_distance;
  if (key == "initial_loss") return item.attack ? std::optional<double>(item.attack->initial.total) : std::nullopt;
  if (key == "final_loss") return item.attack ? std::optional<double>(item.attack->final.total) : std::nullopt;
  return std::nullopt;
}

std::map<std::string, Aggregate> aggregate(const std::vector<ItemReport>& items) {
  std::map<std::string, Aggregate> out;
  for (const char* key : kMetricKeys) {
    std::vector<double> values;
    for (const auto& item : items) {
      if (auto v = metric_value(item, key)) values.push_back(*v);
    }
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    out[key] = Aggregate{sum / static_cast<double>(values.size()), values.size()};
  }
  return out;
}

json report_to_json(const ExperimentReport& report) {
  json items = json::array();
  for (const auto& it : report.items) {
    json trace = json::array();
    for (const auto& rec : it.loss_trace) trace.push_back(loss_json(rec));
    json attack = nullptr;
    if (it.attack) {
      attack = json{{"steps", it.attack->steps},
                    {"initial", loss_json(it.attack->initial)},
                    {"final", loss_json(it.attack->final)},
                    {"converged_linf", it.attack->converged_linf}};
    }
    items.push_back(json{{"id", it.id},
                         {"image", it.image},
                         {"target", it.target},
                         {"status", it.status},
                         {"error", it.error},
                         {"attack", attack},
                         {"adversarial_image", it.adversarial_image},
                         {"persisted_linf", opt(it.persisted_linf)},
                         {"C", opt(it.concealment)},
                         {"C_head", opt(it.concealment_head)},
                         {"GP", opt(it.global_preservation)},
                         {"GH", opt(it.grounded_hallucination)},
                         {"GH_head", opt(it.head_noun_hallucination)},
                         {"SD", opt(it.semantic_drift)},
                         {"SSIM", opt(it.ssim)},
                         {"LPIPS", opt(it.perceptual_distance)},
                         {"flags", it.flags},
                         {"grounding", it.grounding},
                         {"loss_trace", trace}});
  }
  json aggs = json::object();
  for (const auto& [k, a] : report.aggregates) aggs[k] = json{{"mean", a.mean}, {"count", a.count}};
  return json{{"version", report.version},
              {"manifest", report.manifest},
              {"split", report.split},
              {"encoder", report.encoder},
              {"config", report.config},
              {"items", items},
              {"aggregates", aggs},
              {"run_info", report.run_info}};
}

ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  try {
    r.version = j.at("version").get<std::string>();
    r.manifest = j.at("manifest").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.encoder = j.at("encoder").get<std::string>();
    r.config = j.at("config");
    r.run_info = j.value("run_info", json::object());
    for (const auto& it : j.at("items")) {
      ItemReport item;
      item.id = it.at("id").get<std::string>();
      item.image = it.at("image").get<std::string>();
      item.target = it.at("target").get<std::string>();
      item.status = it.at("status").get<std::string>();
      item.error = it.at("error").get<std::string>();
      if (!it.at("attack").is_null()) {
        const auto& a = it["attack"];
        item.attack = AttackSummary{a.at("steps").get<int>(), loss_from(a.at("initial")), loss_from(a.at("final")),
                                    a.at("converged_linf").get<double>()};
      }
      item.adversarial_image = it.at("adversarial_image").get<std::string>();
      item.persisted_linf = opt_get<double>(it, "persisted_linf");
      item.concealment = opt_get<int>(it, "C");
      item.concealment_head = opt_get<int>(it, "C_head");
      item.global_preservation = opt_get<double>(it, "GP");
      item.grounded_hallucination = opt_get<double>(it, "GH");
      item.head_noun_hallucination = opt_get<double>(it, "GH_head");
      item.semantic_drift = opt_get<double>(it, "SD");
      item.ssim = opt_get<double>(it, "SSIM");
      item.perceptual_distance = opt_get<double>(it, "LPIPS");
      item.flags = it.at("flags").get<std::vector<std::string>>();
      item.grounding = it.at("grounding");
      for (const auto& rec : it.at("loss_trace")) item.loss_trace.push_back(loss_from(rec));
      r.items.push_back(std::move(item));
    }
    for (const auto& [k, a] : j.at("aggregates").items()) {
      r.aggregates[k] = Aggregate{a.at("mean").get<double>(), a.at("count").get<std::size_t>()};
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void write_report(const ExperimentReport& report, const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IOError("cannot write report " + path.string());
  out << report_to_json(report).dump(2) << "\n";
  if (!out) throw IOError("failed writing report " + path.string());
}

ExperimentReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open report " + path.string());
  try {
    return report_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError("report " + path.string() + ": " + e.what());
  }
}

}  // namespace bcr::experiment
