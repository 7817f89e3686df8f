#include "bcr/grounding.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>

#include <httplib.h>

#include "bcr/errors.hpp"

namespace bcr::grounding {

using nlohmann::json;

json request_json(const std::string& image_ref, const std::string& phrase) {
  return json{{"image", image_ref}, {"phrase", phrase}};
}

std::vector<Detection> parse_detections(const json& response) {
  if (!response.is_object() || !response.contains("detections") || !response["detections"].is_array()) {
    throw GroundingServiceError("grounding response lacks a 'detections' array");
  }
  std::vector<Detection> out;
  for (const auto& d : response["detections"]) {
    Detection det;
    try {
      const auto& box = d.at("box");
      if (!box.is_array() || box.size() != 4) throw GroundingServiceError("detection box must have 4 numbers");
      for (std::size_t i = 0; i < 4; ++i) det.box[i] = box[i].get<double>();
      det.confidence = d.at("confidence").get<double>();
    } catch (const json::exception& e) {
      throw GroundingServiceError(std::string("malformed detection: ") + e.what());
    }
    if (!(det.confidence >= 0.0 && det.confidence <= 1.0)) {
      throw GroundingServiceError("detection confidence outside [0, 1]");
    }
    out.push_back(det);
  }
  return out;
}

json detections_json(const std::vector<Detection>& detections) {
  json arr = json::array();
  for (const auto& d : detections) {
    arr.push_back(json{{"box", {d.box[0], d.box[1], d.box[2], d.box[3]}}, {"confidence", d.confidence}});
  }
  return json{{"detections", arr}};
}

HttpGroundingClient::HttpGroundingClient(std::string endpoint, double timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_seconds_(timeout_seconds) {
  const auto scheme_end = endpoint_.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = endpoint_.find('/', host_start);
  if (path_start == std::string::npos) {
    origin_ = endpoint_;
    path_ = "/ground";
  } else {
    origin_ = endpoint_.substr(0, path_start);
    path_ = endpoint_.substr(path_start);
  }
  if (origin_.size() <= host_start) throw GroundingServiceError("malformed grounding endpoint '" + endpoint_ + "'");
}

std::vector<Detection> HttpGroundingClient::query(const std::string& image_ref, const std::string& phrase) const {
  httplib::Client client(origin_);
  if (!client.is_valid()) throw GroundingServiceError("unsupported grounding endpoint '" + endpoint_ + "'");
  const auto secs = static_cast<time_t>(timeout_seconds_);
  const auto usecs = static_cast<time_t>((timeout_seconds_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  auto res = client.Post(path_, request_json(image_ref, phrase).dump(), "application/json");
  if (!res) {
    throw GroundingServiceError("grounding request to " + endpoint_ + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw GroundingServiceError("grounding service returned HTTP " + std::to_string(res->status));
  }
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::exception& e) {
    throw GroundingServiceError(std::string("grounding response is not JSON: ") + e.what());
  }
  return parse_detections(body);
}

StubGroundingClient::StubGroundingClient(const json& fixture) {
  if (!fixture.is_object() || !fixture.contains("responses") || !fixture["responses"].is_array()) {
    throw ParseError("grounding fixture lacks a 'responses' array");
  }
  for (const auto& r : fixture["responses"]) {
    if (!r.contains("phrase") || !r["phrase"].is_string()) throw ParseError("grounding fixture entry lacks 'phrase'");
    Entry entry;
    entry.fail = r.value("error", false);
    if (!entry.fail) {
      try {
        entry.detections = parse_detections(json{{"detections", r.value("detections", json::array())}});
      } catch (const GroundingServiceError& e) {
        throw ParseError(std::string("grounding fixture: ") + e.what());
      }
    }
    const std::string phrase = metrics::normalize_phrase(r["phrase"].get<std::string>());
    if (r.contains("image") && r["image"].is_string()) {
      by_image_[{r["image"].get<std::string>(), phrase}] = std::move(entry);
    } else {
      by_phrase_[phrase] = std::move(entry);
    }
  }
}

StubGroundingClient StubGroundingClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open grounding fixture " + path.string());
  try {
    return StubGroundingClient(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError("grounding fixture " + path.string() + ": " + e.what());
  }
}

std::vector<Detection> StubGroundingClient::query(const std::string& image_ref, const std::string& phrase) const {
  const std::string key = metrics::normalize_phrase(phrase);
  const Entry* entry = nullptr;
  if (auto it = by_image_.find({image_ref, key}); it != by_image_.end()) {
    entry = &it->second;
  } else if (auto jt = by_phrase_.find(key); jt != by_phrase_.end()) {
    entry = &jt->second;
  }
  if (entry == nullptr) return {};
  if (entry->fail) throw GroundingServiceError("stub grounding service configured to fail for '" + key + "'");
  return entry->detections;
}

struct StubGroundingServer::Impl {
  explicit Impl(StubGroundingClient s) : stub(std::move(s)) {}
  StubGroundingClient stub;
  httplib::Server server;
};

StubGroundingServer::StubGroundingServer(StubGroundingClient stub, const std::string& host, int port)
    : impl_(std::make_unique<Impl>(std::move(stub))), host_(host) {
  Impl* impl = impl_.get();
  impl->server.Post("/ground", [impl](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      res.set_content(R"({"error":"request is not JSON"})", "application/json");
      return;
    }
    if (!body.contains("phrase") || !body["phrase"].is_string()) {
      res.status = 400;
      res.set_content(R"({"error":"missing phrase"})", "application/json");
      return;
    }
    try {
      auto dets = impl->stub.query(body.value("image", std::string()), body["phrase"].get<std::string>());
      res.set_content(detections_json(dets).dump(), "application/json");
    } catch (const GroundingServiceError& e) {
      res.status = 503;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  if (port == 0) {
    port_ = impl->server.bind_to_any_port(host);
  } else {
    port_ = impl->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw GroundingServiceError("stub grounding server could not bind " + host);
  thread_ = std::thread([impl] { impl->server.listen_after_bind(); });
  impl->server.wait_until_ready();
}

StubGroundingServer::~StubGroundingServer() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubGroundingServer::endpoint() const {
  return "http://" + host_ + ":" + std::to_string(port_) + "/ground";
}

void StubGroundingServer::wait() {
  if (thread_.joinable()) thread_.join();
}

std::set<std::string> candidate_hallucinations(const metrics::CaptionObjectSet& clean,
                                               const metrics::CaptionObjectSet& adv, metrics::MatchLevel level) {
  const bool phrase = level == metrics::MatchLevel::kPhrase;
  const auto c = phrase ? clean.phrase_set() : clean.head_set();
  const auto a = phrase ? adv.phrase_set() : adv.head_set();
  std::set<std::string> out;
  std::set_difference(a.begin(), a.end(), c.begin(), c.end(), std::inserter(out, out.end()));
  return out;
}

GroundingVerdict verify_object(const GroundingClient& client, const std::string& image_ref, const std::string& phrase,
                               double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("grounding threshold must lie in [0, 1]");
  GroundingVerdict v;
  v.phrase = metrics::normalize_phrase(phrase);
  v.boxes = client.query(image_ref, metrics::head_noun(phrase));
  for (const auto& d : v.boxes) v.max_confidence = std::max(v.max_confidence, d.confidence);
  v.detected = !v.boxes.empty() && v.max_confidence > threshold;
  return v;
}

std::vector<VerificationOutcome> verify_all(const GroundingClient& client, const std::string& image_ref,
                                            const std::vector<std::string>& phrases, double threshold,
                                            int max_concurrency) {
  std::vector<VerificationOutcome> out(phrases.size());
  auto work = [&](std::size_t i) {
    out[i].phrase = metrics::normalize_phrase(phrases[i]);
    try {
      out[i].verdict = verify_object(client, image_ref, phrases[i], threshold);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  };
  const std::size_t workers = std::min<std::size_t>(
      phrases.size(), client.reentrant() ? static_cast<std::size_t>(std::max(1, max_concurrency)) : 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < phrases.size(); ++i) work(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < phrases.size(); i = next++) work(i);
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

HallucinationRate grounded_hallucination_rate(const std::vector<GroundingVerdict>& verdicts,
                                              std::size_t adv_object_count) {
  if (adv_object_count == 0) return {0.0, true};
  std::size_t missed = 0;
  for (const auto& v : verdicts) missed += v.detected ? 0 : 1;
  if (missed > adv_object_count) throw UnverifiableError("more hallucination verdicts than adversarial objects");
  return {static_cast<double>(missed) / static_cast<double>(adv_object_count), false};
}

HallucinationRate grounded_hallucination_rate(const std::vector<VerificationOutcome>& outcomes,
                                              std::size_t adv_object_count) {
  std::vector<GroundingVerdict> verdicts;
  for (const auto& o : outcomes) {
    if (!o.verdict) throw UnverifiableError("no grounding verdict for '" + o.phrase + "': " + o.error);
    verdicts.push_back(*o.verdict);
  }
  return grounded_hallucination_rate(verdicts, adv_object_count);
}

GroundedEvaluation evaluate_grounded_hallucination(const GroundingClient& client, const std::string& image_ref,
                                                   const metrics::CaptionObjectSet& clean,
                                                   const metrics::CaptionObjectSet& adv, metrics::MatchLevel level,
                                                   double threshold, int max_concurrency) {
  GroundedEvaluation out;
  out.candidates = candidate_hallucinations(clean, adv, level);
  out.outcomes = verify_all(client, image_ref, {out.candidates.begin(), out.candidates.end()}, threshold,
                            max_concurrency);
  const std::size_t denom = level == metrics::MatchLevel::kPhrase ? adv.phrase_set().size() : adv.head_set().size();
  out.rate = grounded_hallucination_rate(out.outcomes, denom);
  return out;
}

}  // namespace bcr::grounding
